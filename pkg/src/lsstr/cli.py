"""``lsstr`` command line: simulate, verify, export-plot.

Exit codes: 0 pass, 1 check failure (or numeric failure during a run),
2 inconclusive, 3 usage or configuration error. Errors are reported as a
single JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .adversary import (
    IidBoundedNoise, NoiseBoundError, PolicyError, ScriptedNoise, StagedConfig,
    StagedNoise, ZeroNoise,
)
from .dynamics import NonFiniteError, PlantConfig
from .simulation import Simulation
from .trace import COLUMNS, TraceSchemaError, read_csv, write_csv
from .verification import (
    FAIL, INCONCLUSIVE, PASS, ConservationCheck, CovarianceOracle, DriftCheck,
    InjectedState, NoiseBoundCheck, PreconditionError, PushTrajectoryCheck,
    RatioTracker, StageRecordCheck, analyze_silent_phase, find_burst,
    verify_ratio_bound,
)

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3

SHIPPED = ("paper-defaults", "demo-staged", "iid-baseline")


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------

@dataclass
class RunConfig:
    theta: float = 2.0
    theta0: float = 0.0
    y0: float = 1.0
    w_bound: float = 1.0
    r0: float | None = None
    noise: str = "staged"
    horizon: int = 100_000
    seed: int = 0
    out: str = "."
    lemma: str = "all"
    inject: str | None = None
    inject_horizon: int = 10_000
    c: float | None = None
    chunk_size: int = 1 << 16
    theta_floor: float = 6.0
    c_multiplier: float = 126.0
    theta_margin: float = 0.0
    ratio_scale: float = 1.0
    ratio_offset: float = 0.0
    k_min: int = 3

    def plant(self) -> PlantConfig:
        return PlantConfig(self.theta, self.theta0, self.y0, self.w_bound, self.r0)

    def staged(self) -> StagedConfig:
        return StagedConfig(self.theta_floor, self.c_multiplier, self.theta_margin,
                            self.ratio_scale, self.ratio_offset, self.k_min)

    def policy(self):
        kind, _, arg = self.noise.partition(":")
        if kind == "zero":
            return ZeroNoise()
        if kind == "iid":
            return IidBoundedNoise(self.seed)
        if kind == "staged":
            return StagedNoise(self.staged())
        if kind == "script":
            if not arg:
                raise ConfigError("noise script needs a path: script:PATH")
            try:
                return ScriptedNoise.from_file(arg)
            except OSError as exc:
                raise ConfigError(f"cannot read noise script: {exc}") from None
        raise ConfigError(f"unknown noise policy {self.noise!r}")

    def injected(self) -> InjectedState | None:
        return InjectedState.parse(self.inject) if self.inject else None

    def validate(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.inject_horizon < 10:
            raise ConfigError("inject_horizon must be >= 10")
        if self.lemma not in ("1", "2", "3", "4", "all"):
            raise ConfigError(f"unknown lemma selection {self.lemma!r}")
        try:
            self.plant()
            self.staged()
            self.injected()
        except (ValueError, PreconditionError) as exc:
            raise ConfigError(str(exc)) from None
        self.policy()
        return self


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if value is None or (isinstance(value, str) and value.lower() in ("", "none", "null")):
        if "None" in kind:
            return None
        raise ConfigError(f"{key} needs a value")
    try:
        if kind.startswith("int"):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind.startswith("float"):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def parse_config_text(text: str) -> dict:
    """JSON object or flat ``key = value`` lines (``#`` starts a comment)."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("JSON config must be an object")
        items = raw.items()
    else:
        items = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {n}: expected key=value")
            items.append((key.strip(), value.strip()))
    return {k: _coerce(k, v) for k, v in items}


def shipped_config_path(name: str) -> Path:
    return Path(str(resources.files("lsstr") / "configs" / f"{name}.conf"))


def load_config(source: str | None) -> dict:
    if source is None:
        return {}
    path = Path(source)
    if not path.is_file() and source in SHIPPED:
        path = shipped_config_path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from None
    return parse_config_text(text)


def build_config(args) -> RunConfig:
    values = load_config(args.config)
    for key in ("horizon", "noise", "seed", "out", "inject", "lemma"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(key, v)
    for item in getattr(args, "set", None) or []:
        key, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(key.strip(), v.strip())
    return RunConfig(**values).validate()


# -- simulate ---------------------------------------------------------------------------

class _DecayFit:
    """Least-squares slope of log10|y| against t over normal, nonzero outputs."""

    def __init__(self):
        self.n = 0
        self.sums = np.zeros(5)

    def feed(self, chunk):
        a = np.abs(chunk.y)
        m = (a >= sys.float_info.min) & (chunk.t > 0)
        if not m.any():
            return
        t = chunk.t[m].astype(np.float64)
        ly = np.log10(a[m])
        self.n += int(m.sum())
        self.sums += [t.sum(), (t * t).sum(), ly.sum(), (t * ly).sum(), 0.0]

    def result(self, final_err):
        out = {"terminal_abs_theta_err": abs(final_err), "points": self.n}
        if self.n >= 2:
            st, stt, sl, stl, _ = self.sums
            den = self.n * stt - st * st
            if den > 0:
                slope = (self.n * stl - st * sl) / den
                out["log10_abs_y_slope"] = slope
                out["fitted_rate"] = 10.0 ** slope
        return out


def run_one(cfg: RunConfig, out_dir: Path) -> dict:
    """Simulate, write ``trace.csv`` and ``summary.json`` atomically."""
    plant = cfg.plant()
    policy = cfg.policy()
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulation(plant, policy, cfg.horizon, cfg.chunk_size)
    ratio = RatioTracker(keep=False)
    fit = _DecayFit()

    def tapped():
        for chunk in sim.chunks():
            ratio.feed(chunk)
            fit.feed(chunk)
            yield chunk

    fd, tmp = tempfile.mkstemp(prefix=".trace-", suffix=".csv", dir=out_dir)
    os.close(fd)
    t0 = time.perf_counter()
    try:
        rows = write_csv(tapped(), tmp)
    except BaseException:
        os.unlink(tmp)
        raise
    wall = time.perf_counter() - t0
    os.replace(tmp, out_dir / "trace.csv")
    st = sim.state
    rep = ratio.report().measured
    summary = {
        "horizon": cfg.horizon, "rows": rows, "noise": cfg.noise, "seed": cfg.seed,
        "final_theta_err": st.theta_err, "runmax_abs_theta_err": st.theta_err_runmax,
        "final_ratio": rep["final_ratio"], "ratio_running_max": rep["running_max"],
        "k_records": [list(x) for x in sim.k_records],
        "j_records": [list(x) for x in sim.j_records],
        "stages_completed": len(sim.j_records),
        "wall_time_s": wall,
    }
    if isinstance(policy, ZeroNoise):
        summary["decay_fit"] = fit.result(st.theta_err)
    text = json.dumps(_clean(summary), indent=2) + "\n"
    (out_dir / "summary.json").write_text(text)
    return summary


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def parse_sweep(text: str):
    """``key=a,b,c`` or ``key=lo..hi`` (inclusive integer range)."""
    key, sep, vals = text.partition("=")
    key = key.strip()
    if not sep or not vals:
        raise ConfigError(f"bad sweep argument {text!r}")
    if ".." in vals:
        lo, _, hi = vals.partition("..")
        try:
            values = list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(f"bad sweep range {vals!r}") from None
    else:
        values = [v.strip() for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("empty sweep")
    return key, [_coerce(key, v) for v in values]


def _sweep_job(args):
    cfg, out = args
    return run_one(cfg, Path(out))


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.out)
    if args.sweep:
        key, values = parse_sweep(args.sweep)
        jobs = []
        for v in values:
            c = replace(cfg, **{key: v}).validate()
            jobs.append((c, str(out / f"{key}-{v}")))
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as ex:
            summaries = list(ex.map(_sweep_job, jobs))
        result = {"sweep": key, "runs": [{"value": _clean(v), "out": o,
                                          "stages_completed": s["stages_completed"],
                                          "ratio_running_max": _clean(s["ratio_running_max"])}
                                         for v, (_, o), s in zip(values, jobs, summaries)]}
    else:
        result = _clean(run_one(cfg, out))
    print(json.dumps(result))
    return EXIT_PASS


# -- verify --------------------------------------------------------------------------------

def _trace_checks(cfg: RunConfig, lemma: str):
    wb = cfg.w_bound
    sets = {
        "1": [NoiseBoundCheck(wb), PushTrajectoryCheck(wb)],
        "2": [DriftCheck()],
    }
    if lemma == "all":
        return (sets["1"] + sets["2"] + [ConservationCheck(), CovarianceOracle(),
                                         StageRecordCheck(wb, cfg.staged())])
    return sets.get(lemma, [])


def _inject_reports(cfg: RunConfig, lemma: str):
    inj = cfg.injected()
    if inj is None:
        if lemma in ("3", "4"):
            raise ConfigError(f"--lemma {lemma} needs --inject")
        return [], []
    reps, skipped = [], []
    h = cfg.inject_horizon
    if lemma in ("3", "all"):
        reps.append(analyze_silent_phase(inj, h))
        try:
            reps.append(find_burst(inj, h))
        except PreconditionError as exc:
            if lemma != "all":
                raise
            skipped.append({"lemma_id": "lemma3.burst", "reason": str(exc)})
    if lemma in ("4", "all"):
        c = cfg.c
        if c is None and "c" in _inject_keys(cfg.inject):
            c = _coerce("c", _inject_keys(cfg.inject)["c"])
        if c is None:
            c = abs(inj.theta_err_j) / 126.0
        try:
            reps.append(verify_ratio_bound(inj, c, h))
        except PreconditionError as exc:
            if lemma != "all":
                raise
            skipped.append({"lemma_id": "lemma4.ratio_bound", "reason": str(exc)})
    return reps, skipped


def _inject_keys(text):
    return dict(p.partition("=")[::2] for p in text.replace(" ", "").split(",") if p)


def verdict_exit(reports) -> int:
    verdicts = [r.verdict for r in reports]
    if FAIL in verdicts:
        return EXIT_FAIL
    if INCONCLUSIVE in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def cmd_verify(args) -> int:
    cfg = build_config(args)
    lemma = cfg.lemma
    reports, skipped = [], []
    if args.trace:
        checks = _trace_checks(cfg, lemma)
        if checks:
            for chunk in read_csv(args.trace):
                for c in checks:
                    c.feed(chunk)
            for c in checks:
                try:
                    reports.append(c.report())
                except PreconditionError as exc:
                    if lemma != "all":
                        raise
                    skipped.append({"lemma_id": c.lemma_id, "reason": str(exc)})
    elif cfg.inject is None:
        raise ConfigError("verify needs a trace path or --inject")
    inj_reps, inj_skipped = _inject_reports(cfg, lemma)
    reports += inj_reps
    skipped += inj_skipped
    if not reports:
        raise ConfigError("no applicable checker for this selection")
    code = verdict_exit(reports)
    doc = {"reports": [r.to_dict() for r in reports], "skipped": skipped,
           "verdict": {EXIT_PASS: PASS, EXIT_FAIL: FAIL,
                       EXIT_INCONCLUSIVE: INCONCLUSIVE}[code]}
    text = json.dumps(doc)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify.json").write_text(text + "\n")
    print(text)
    return code


# -- export-plot ------------------------------------------------------------------------------

DERIVED_COLUMNS = {"log10_abs_theta_err": lambda c: np.log10(np.abs(c.theta_err))}


def cmd_export_plot(args) -> int:
    cols = [c.strip() for c in args.columns.split(",") if c.strip()]
    if not cols:
        raise ConfigError("no columns selected")
    for c in cols:
        if c not in COLUMNS[1:] and c not in DERIVED_COLUMNS:
            raise ConfigError(f"unknown column {c!r}")
    if args.stride < 1:
        raise ConfigError("stride must be >= 1")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.trace).stem
    paths = {c: out / f"{stem}_{c}.dat" for c in cols}
    tmp = {c: p.with_suffix(".dat.part") for c, p in paths.items()}
    handles = {c: open(tmp[c], "w") for c in cols}
    rows = 0
    try:
        for chunk in read_csv(args.trace):
            keep = chunk.t % args.stride == 0
            t = chunk.t[keep]
            rows += len(chunk)
            for c, fh in handles.items():
                if c in DERIVED_COLUMNS:
                    with np.errstate(divide="ignore"):
                        v = DERIVED_COLUMNS[c](chunk)[keep]
                elif c == "phase":
                    v = chunk.phase[keep]
                else:
                    v = getattr(chunk, c)[keep]
                fh.write("".join(f"{a} {b!r}\n" for a, b in zip(t.tolist(), v.tolist())))
    finally:
        for fh in handles.values():
            fh.close()
    if rows == 0:
        for p in tmp.values():
            p.unlink()
        raise ConfigError("trace has no rows")
    for c in cols:
        os.replace(tmp[c], paths[c])
    print(json.dumps({"files": [str(p) for p in paths.values()], "rows": rows}))
    return EXIT_PASS


# -- entry point -------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsstr", description="Least-squares self-tuning regulator "
                "under bounded adversarial noise.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="config file path or shipped name "
                        f"({', '.join(SHIPPED)})")
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--noise", help="zero | iid | staged | script:PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--inject", help='injected state, e.g. "theta_err=-10,y=1,r=5"')
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key")

    sim = sub.add_parser("simulate", help="run the closed loop and write a trace")
    common(sim)
    sim.add_argument("--sweep", help="key=a,b,c or key=lo..hi; one run per value")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run checkers on a trace or an injected state")
    common(ver)
    ver.add_argument("trace", nargs="?")
    ver.add_argument("--lemma", choices=["1", "2", "3", "4", "all"])
    ver.set_defaults(func=cmd_verify)

    exp = sub.add_parser("export-plot", help="two-column data files for plotting")
    exp.add_argument("trace")
    exp.add_argument("--columns", default="theta_err,ratio")
    exp.add_argument("--out")
    exp.add_argument("--stride", type=int, default=1)
    exp.set_defaults(func=cmd_export_plot)
    return p


def _error(kind, exc, code):
    rec = {"error": kind, "message": str(exc), "exit_code": code}
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, PreconditionError, TraceSchemaError) as exc:
        return _error(type(exc).__name__, exc, EXIT_USAGE)
    except FileNotFoundError as exc:
        return _error("FileNotFoundError", exc, EXIT_USAGE)
    except (NoiseBoundError, PolicyError, NonFiniteError) as exc:
        return _error(type(exc).__name__, exc, EXIT_FAIL)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
