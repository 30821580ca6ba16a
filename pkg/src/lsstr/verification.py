"""Trajectory checkers for the push/silent construction.

Trace checkers stream: each is a small object with ``feed(chunk)`` and
``report()`` so several can share one pass over a long run (see
:func:`run_checks`). The ``verify_*`` functions wrap them for one-off use.

Injection checkers (:func:`analyze_silent_phase`, :func:`find_burst`,
:func:`verify_ratio_bound`) start the noise-free loop directly from a
hypothesis state ``(theta_err[j], y[j], r[j-1])``.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .adversary import Phase, StagedConfig
from .dynamics import closed_loop_step, inject_state, PlantConfig
from .numerics import CompensatedSum, compensated_cumsum
from .trace import TraceChunk, as_chunks

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"

REL_TIGHT = 1e-12
REL_LONG = 1e-9
ABS_FLOOR = 1e-12


class PreconditionError(ValueError):
    """A checker was applied outside its hypothesis (not applicable)."""


@dataclass
class LemmaReport:
    lemma_id: str
    verdict: str
    measured: dict = field(default_factory=dict)
    tolerance_used: float = 0.0

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "pass": self.passed,
            "verdict": self.verdict,
            "measured": {k: _jsonable(v) for k, v in self.measured.items()},
            "tolerance_used": self.tolerance_used,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def __str__(self):
        return f"{self.lemma_id}: {self.verdict.upper()}"


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return str(v)
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _verdict(ok):
    return PASS if ok else FAIL


# -- streaming base -------------------------------------------------------------

class StreamCheck:
    """Keeps the last row of the previous chunk so pairwise relations
    ``(t-1, t)`` survive chunk boundaries."""

    lemma_id = "abstract"

    def __init__(self):
        self._last = None
        self.rows = 0

    def feed(self, chunk: TraceChunk):
        if len(chunk) == 0:
            return
        if self._last is None:
            prev, cur = chunk[:-1], chunk[1:]
        else:
            prev, cur = TraceChunk.concat([self._last, chunk[:-1]]), chunk
        self._last = chunk[len(chunk) - 1:]
        self.rows += len(chunk)
        self.process(chunk, prev, cur)

    def process(self, chunk, prev, cur):  # pragma: no cover - abstract
        raise NotImplementedError

    def report(self) -> LemmaReport:  # pragma: no cover - abstract
        raise NotImplementedError


def run_checks(trace, checks: Iterable[StreamCheck]) -> list[LemmaReport]:
    checks = list(checks)
    for chunk in as_chunks(trace):
        for c in checks:
            c.feed(chunk)
    return [c.report() for c in checks]


# -- noise bound ------------------------------------------------------------------

class NoiseBoundCheck(StreamCheck):
    lemma_id = "lemma1.noise_bound"

    def __init__(self, w_bound):
        super().__init__()
        self.w_bound = float(w_bound)
        self.max_abs = 0.0
        self.argmax = -1
        self.first_violation = -1

    def process(self, chunk, prev, cur):
        mask = chunk.t > 0
        if not mask.any():
            return
        t = chunk.t[mask]
        a = np.abs(chunk.w[mask])
        i = int(np.argmax(a))
        if a[i] > self.max_abs or self.argmax < 0:
            self.max_abs, self.argmax = float(a[i]), int(t[i])
        if self.first_violation < 0:
            bad = np.flatnonzero(~(a <= self.w_bound))
            if len(bad):
                self.first_violation = int(t[bad[0]])

    def report(self):
        if self.rows == 0:
            raise PreconditionError("empty trace")
        return LemmaReport(self.lemma_id, _verdict(self.first_violation < 0), {
            "max_abs_w": self.max_abs, "argmax_t": self.argmax,
            "w_bound": self.w_bound, "first_violation_t": self.first_violation,
        }, 0.0)


def verify_noise_bound(trace, w_bound) -> LemmaReport:
    return run_checks(trace, [NoiseBoundCheck(w_bound)])[0]


# -- push windows -----------------------------------------------------------------

class PushWindows(StreamCheck):
    """Collects maximal runs of push-tagged rows as ``(k, j, stage)``."""

    lemma_id = "windows"

    def __init__(self):
        super().__init__()
        self.windows = []
        self._open = None

    def process(self, chunk, prev, cur):
        push = (chunk.phase == Phase.PUSH).astype(np.int8)
        d = np.diff(np.concatenate([[0], push, [0]]))
        starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
        t = chunk.t
        if self._open is not None and (len(starts) == 0 or starts[0] != 0):
            self.windows.append(tuple(self._open))
            self._open = None
        for a, b in zip(starts, ends):
            if a == 0 and self._open is not None:
                win = self._open
                win[1] = int(t[b - 1])
            else:
                win = [int(t[a]), int(t[b - 1]), int(chunk.stage[a])]
            if b == len(chunk):
                self._open = win
            else:
                self.windows.append(tuple(win))
                self._open = None

    def report(self):
        return self.result()

    def result(self):
        out = list(self.windows)
        if self._open is not None:
            out.append(tuple(self._open))
        return out


def push_windows(trace) -> list[tuple[int, int, int]]:
    pw = PushWindows()
    for chunk in as_chunks(trace):
        pw.feed(chunk)
    return pw.result()


def _in_windows(t, windows, lo_shift=0):
    mask = np.zeros(len(t), dtype=bool)
    for k, j in windows:
        mask |= (t >= k + lo_shift) & (t <= j)
    return mask


class _WindowedCheck(StreamCheck):
    """Pairs ``(t-1, t)`` restricted to given or discovered push windows."""

    def __init__(self, windows=None):
        super().__init__()
        self.given = [tuple(w[:2]) for w in windows] if windows is not None else None
        self._pw = PushWindows()
        self.covered = 0

    def feed(self, chunk):
        self._pw.feed(chunk)
        super().feed(chunk)

    def _windows_for(self, chunk):
        if self.given is not None:
            return self.given
        wins = [w[:2] for w in self._pw.windows]
        if self._pw._open is not None:
            wins.append(tuple(self._pw._open[:2]))
        return wins

    def _require_push(self, chunk):
        if self.given is None:
            return
        mask = _in_windows(chunk.t, self.given)
        self.covered += int(mask.sum())
        if np.any(chunk.phase[mask] != Phase.PUSH):
            t_bad = int(chunk.t[mask][chunk.phase[mask] != Phase.PUSH][0])
            raise PreconditionError(f"window row t={t_bad} is not in a push phase")

    def _check_coverage(self):
        if self.given is not None:
            need = sum(j - k + 1 for k, j in self.given)
            if self.covered != need:
                raise PreconditionError("window extends beyond the trace")


class PushTrajectoryCheck(_WindowedCheck):
    """Forced outputs ``y[t] = S(y[t-1]) w / (2 sqrt t)`` inside push windows."""

    lemma_id = "lemma1.push_trajectory"

    def __init__(self, w_bound, windows=None, rtol=REL_TIGHT):
        super().__init__(windows)
        self.w_bound = float(w_bound)
        self.rtol = rtol
        self.max_rel = 0.0
        self.n = 0
        self.first_bad = -1
        self.sign_breaks = 0
        self.monotone_breaks = 0

    def process(self, chunk, prev, cur):
        self._require_push(chunk)
        wins = self._windows_for(chunk)
        if not wins or len(cur) == 0:
            return
        m = _in_windows(cur.t, wins)
        if not m.any():
            return
        t = cur.t[m].astype(np.float64)
        y = cur.y[m]
        yp = prev.y[m]
        expect = np.where(yp < 0, -1.0, 1.0) * self.w_bound / (2.0 * np.sqrt(t))
        rel = np.abs(y - expect) / np.abs(expect)
        self.n += int(m.sum())
        imax = int(np.argmax(rel))
        self.max_rel = max(self.max_rel, float(rel[imax]))
        if self.first_bad < 0:
            bad = np.flatnonzero(rel > self.rtol)
            if len(bad):
                self.first_bad = int(cur.t[m][bad[0]])
        # consecutive pairs with both rows inside one window
        both = m & _in_windows(prev.t, wins)
        self.sign_breaks += int(np.sum(prev.y[both] * cur.y[both] < 0))
        self.monotone_breaks += int(np.sum(~(np.abs(cur.y[both]) < np.abs(prev.y[both]))))

    def report(self):
        self._check_coverage()
        if self.n == 0:
            raise PreconditionError("no push window in trace")
        ok = self.first_bad < 0 and self.sign_breaks == 0 and self.monotone_breaks == 0
        return LemmaReport(self.lemma_id, _verdict(ok), {
            "rows_checked": self.n, "max_rel_err": self.max_rel,
            "first_bad_t": self.first_bad, "sign_breaks": self.sign_breaks,
            "monotone_breaks": self.monotone_breaks,
            "windows": len(self._windows_for(None)),
        }, self.rtol)


def verify_push_trajectory(trace, window=None, w_bound=1.0) -> LemmaReport:
    wins = None if window is None else [tuple(window)]
    return run_checks(trace, [PushTrajectoryCheck(w_bound, wins)])[0]


class DriftCheck(_WindowedCheck):
    """Monotone decrease of ``theta_err`` from ``k+1`` on within each push window.

    The cumulative decrease over each window must equal the sum of
    ``y[t] y[t+1] / r[t]`` and dominate the sum of ``y[t+1]**2 / r[t]``.
    """

    lemma_id = "lemma2.drift"

    def __init__(self, windows=None, rtol=REL_LONG):
        if windows is not None:
            windows = [(k, j) for k, j in (tuple(w[:2]) for w in windows)]
        super().__init__(windows)
        self.rtol = rtol
        self.pairs = 0
        self.nonmonotone = 0
        self.first_bad = -1
        self._acc = {}
        self.results = []

    def _drift_windows(self, chunk):
        # drift starts one step after the push regime opens
        if self.given is not None:
            return self.given
        return [(k + 1, j) for k, j in self._windows_for(chunk)]

    def process(self, chunk, prev, cur):
        self._require_push(chunk)
        wins = self._drift_windows(chunk)
        if len(cur) == 0 or not wins:
            return
        for k, j in wins:
            m = (prev.t >= k) & (cur.t <= j)
            if not m.any():
                continue
            acc = self._acc.setdefault(k, {
                "start": None, "end": None, "pred": CompensatedSum(),
                "lower": CompensatedSum(), "n": 0})
            ep, ec = prev.theta_err[m], cur.theta_err[m]
            steps = prev.y[m] * cur.y[m] / prev.r[m]
            acc["pred"].add(math.fsum(steps))
            acc["lower"].add(math.fsum(cur.y[m] ** 2 / prev.r[m]))
            if acc["start"] is None:
                acc["start"] = float(ep[0])
            acc["end"] = float(ec[-1])
            acc["n"] += int(m.sum())
            acc["last_t"] = int(cur.t[m][-1])
            dec = ~(ec < ep)
            self.nonmonotone += int(dec.sum())
            if self.first_bad < 0 and dec.any():
                self.first_bad = int(cur.t[m][np.flatnonzero(dec)[0]])
            self.pairs += int(m.sum())

    def report(self):
        if self.given is not None:
            need = sum(j - k + 1 for k, j in self.given)
            if self.covered != need:
                raise PreconditionError("window extends beyond the trace")
        worst = 0.0
        lower_margin = math.inf
        total = 0.0
        self.results = []
        for k, acc in sorted(self._acc.items()):
            j = acc["last_t"]
            drift = acc["start"] - acc["end"]
            pred = acc["pred"].value
            rel = abs(drift - pred) / max(abs(pred), sys.float_info.min)
            worst = max(worst, rel)
            lower_margin = min(lower_margin, drift - acc["lower"].value)
            total += drift
            self.results.append({"window": (k, j), "drift": drift, "predicted": pred,
                                 "rel_err": rel})
        ok = (self.nonmonotone == 0 and worst <= self.rtol and lower_margin >= 0)
        if not self._acc:
            raise PreconditionError("no push window of length >= 2 in trace")
        return LemmaReport(self.lemma_id, _verdict(ok), {
            "pairs": self.pairs, "windows": len(self._acc), "total_drift": total,
            "max_rel_err": worst, "nonmonotone": self.nonmonotone,
            "first_bad_t": self.first_bad, "lower_bound_margin": lower_margin,
        }, self.rtol)


def verify_drift(trace, window=None) -> LemmaReport:
    """``window=(a, b)`` must lie in a push regime and start at ``k+1`` or later."""
    wins = None if window is None else [tuple(window)]
    return run_checks(trace, [DriftCheck(wins)])[0]


# -- conservation and covariance --------------------------------------------------

class ConservationCheck(StreamCheck):
    """``r[t-1] theta_err[t] + sum_{i<=t} y[i-1] w[i]`` is constant in ``t >= 1``."""

    lemma_id = "conservation"

    def __init__(self, rtol=REL_LONG, atol=ABS_FLOOR):
        super().__init__()
        self.rtol, self.atol = rtol, atol
        self._s = (0.0, 0.0)
        self.q1 = None
        self.scale = 0.0
        self.max_rel = 0.0
        self.first_bad = -1

    def process(self, chunk, prev, cur):
        m = cur.t >= 1
        if not m.any():
            return
        terms = prev.y[m] * cur.w[m]
        partial, self._s = compensated_cumsum(terms, *self._s)
        lhs = prev.r[m] * cur.theta_err[m]
        q = lhs + partial
        if self.q1 is None:
            self.q1 = float(q[0])
        mag = np.maximum.accumulate(np.maximum(np.abs(lhs), np.abs(partial)))
        mag = np.maximum(mag, self.scale)
        self.scale = float(mag[-1])
        dev = np.abs(q - self.q1)
        bound = self.rtol * mag + self.atol
        rel = dev / np.maximum(mag, sys.float_info.min)
        self.max_rel = max(self.max_rel, float(rel.max()))
        if self.first_bad < 0:
            bad = np.flatnonzero(dev > bound)
            if len(bad):
                self.first_bad = int(cur.t[m][bad[0]])

    def report(self):
        if self.q1 is None:
            raise PreconditionError("trace needs rows t=0 and t>=1")
        return LemmaReport(self.lemma_id, _verdict(self.first_bad < 0), {
            "conserved_value": self.q1, "max_rel_dev": self.max_rel,
            "scale": self.scale, "first_bad_t": self.first_bad,
        }, self.rtol)


def verify_conservation(trace) -> LemmaReport:
    return run_checks(trace, [ConservationCheck()])[0]


class CovarianceOracle(StreamCheck):
    """Recomputes ``r`` as ``r[first] + sum y**2`` in extended precision."""

    lemma_id = "oracle.r_consistency"

    def __init__(self, rtol=REL_LONG):
        super().__init__()
        self.rtol = rtol
        self._acc = None
        self.max_rel = 0.0
        self.first_bad = -1

    def process(self, chunk, prev, cur):
        y2 = chunk.y.astype(np.longdouble) ** 2
        if self._acc is None:
            base = np.longdouble(chunk.r[0])
            y2[0] = 0
        else:
            base = self._acc
        oracle = base + np.cumsum(y2)
        self._acc = oracle[-1]
        rel = np.abs(chunk.r.astype(np.longdouble) - oracle) / oracle
        rel = rel.astype(np.float64)
        self.max_rel = max(self.max_rel, float(rel.max()))
        if self.first_bad < 0:
            bad = np.flatnonzero(rel > self.rtol)
            if len(bad):
                self.first_bad = int(chunk.t[bad[0]])

    def report(self):
        if self._acc is None:
            raise PreconditionError("empty trace")
        return LemmaReport(self.lemma_id, _verdict(self.first_bad < 0), {
            "max_rel_dev": self.max_rel, "first_bad_t": self.first_bad,
            "final_r_oracle": float(self._acc),
        }, self.rtol)


def oracle_r_consistency(trace) -> LemmaReport:
    return run_checks(trace, [CovarianceOracle()])[0]


# -- energy ratio ------------------------------------------------------------------

@dataclass
class RatioSeries:
    t: np.ndarray
    ratio: np.ndarray
    running_max: np.ndarray

    @property
    def limsup_proxy(self) -> float:
        return float(self.running_max[-1]) if len(self.running_max) else math.inf


class RatioTracker(StreamCheck):
    """Running max of the finite energy ratios (``inf`` until the first one)."""

    lemma_id = "ratio_series"

    def __init__(self, keep=True):
        super().__init__()
        self.keep = keep
        self.best = -math.inf
        self.parts = []
        self.final = math.inf

    def process(self, chunk, prev, cur):
        r = chunk.ratio
        finite = np.where(np.isfinite(r), r, -np.inf)
        rm = np.maximum.accumulate(np.concatenate([[self.best], finite]))[1:]
        self.best = float(rm[-1])
        rm = np.where(rm == -np.inf, np.inf, rm)
        self.final = float(r[-1])
        if self.keep:
            self.parts.append((chunk.t.copy(), r.copy(), rm))

    def series(self) -> RatioSeries:
        if not self.parts:
            return RatioSeries(np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
        return RatioSeries(*(np.concatenate(p) for p in zip(*self.parts)))

    def report(self):
        rmax = self.best if self.best > -math.inf else math.inf
        return LemmaReport(self.lemma_id, PASS, {"final_ratio": self.final,
                                                  "running_max": rmax}, 0.0)


def ratio_series(trace) -> RatioSeries:
    rt = RatioTracker()
    for chunk in as_chunks(trace):
        rt.feed(chunk)
    return rt.series()


# -- stage machine coherence ---------------------------------------------------------

class StageRecordCheck(StreamCheck):
    """Re-derives every staged decision from the trace.

    For each state ``t`` the tag of row ``t+1`` says what the machine did; this
    check recomputes the entry, closing and reopening conditions and demands
    that each recorded ``k_s`` / ``j_s`` satisfies its condition and that no
    earlier index did (first-index tie-breaking).
    """

    lemma_id = "adversary.stage_records"

    def __init__(self, w_bound, cfg: StagedConfig):
        super().__init__()
        self.w = float(w_bound)
        self.cfg = cfg
        self.k_records = []
        self.j_records = []
        self.runmax = -math.inf
        self.base = {}
        self.last_j = {}
        self.violations = []
        self.ratios_at_k = []
        self.ratio_runmax_at_k = []
        self._ratio_best = -math.inf
        self.staged_rows = 0

    def _entry(self, s):
        t = s.t.astype(np.float64)
        with np.errstate(divide="ignore"):
            lim = self.w / (2.0 * np.sqrt(t))
        return ((s.t + 1 >= self.cfg.k_min) & (s.t >= 1) & (s.r >= self.w * self.w)
                & (np.abs(s.theta_err) <= 1.0) & (np.abs(s.y) <= lim))

    def _per_stage(self, stages, fn):
        uniq, inv = np.unique(stages, return_inverse=True)
        return np.array([fn(int(s)) for s in uniq], dtype=np.float64)[inv]

    def process(self, chunk, prev, cur):
        self.staged_rows += int(np.count_nonzero(chunk.stage))
        if len(cur) == 0:
            return
        # running max of |theta_err| through each prev row, and before it
        a = np.abs(prev.theta_err)
        through = np.maximum.accumulate(np.concatenate([[self.runmax], a]))
        before, through = through[:-1], through[1:]
        self.runmax = float(through[-1])
        fin = np.where(np.isfinite(prev.ratio), prev.ratio, -np.inf)
        ratio_best = np.maximum.accumulate(np.concatenate([[self._ratio_best], fin]))[1:]
        self._ratio_best = float(ratio_best[-1])
        entry = self._entry(prev)
        cfg = self.cfg
        src, dst = prev.phase, cur.phase
        viol = self.violations
        in_push = src == Phase.PUSH
        opening = (dst == Phase.PUSH) & ~in_push
        closing = in_push & (dst == Phase.SILENT)
        # stage transitions, in row order
        for i in np.flatnonzero(opening | closing):
            t = int(prev.t[i])
            if opening[i]:
                s = int(cur.stage[i])
                ok = bool(entry[i])
                if src[i] == Phase.SILENT:
                    jprev = self.last_j.get(s - 1, -10)
                    rt = cfg.ratio_target(s - 1)
                    ok = ok and t + 1 >= jprev + 2 and prev.sum_y2[i] >= rt * prev.sum_w2[i]
                    self.ratios_at_k.append((s, t + 1, float(prev.ratio[i]), rt))
                if not ok:
                    viol.append(("k", s, t + 1))
                self.k_records.append((s, t + 1))
                self.ratio_runmax_at_k.append((s, t + 1, float(ratio_best[i])))
                self.base[s] = float(through[i])
            else:
                s = int(prev.stage[i])
                target = cfg.theta_target(s, self.base.get(s, 0.0))
                if not abs(prev.theta_err[i]) >= max(before[i], target):
                    viol.append(("j", s, t))
                self.j_records.append((s, t))
                self.last_j[s] = t
        # idle states must fail the opening condition (first-index rule)
        stay = ((src == Phase.AWAIT) | (src == Phase.BOOTSTRAP)) & (dst == Phase.AWAIT)
        for i in np.flatnonzero(stay & entry)[:20]:
            viol.append(("k-early", int(cur.stage[i]), int(prev.t[i]) + 1))
        m = (src == Phase.SILENT) & (dst == Phase.SILENT) & entry
        if m.any():
            st = prev.stage[m]
            jprev = self._per_stage(st, lambda s: self.last_j.get(s, -10))
            rt = self._per_stage(st, cfg.ratio_target)
            early = (prev.t[m] + 1 >= jprev + 2) & (prev.sum_y2[m] >= rt * prev.sum_w2[m])
            for i in np.flatnonzero(early)[:20]:
                viol.append(("k-early", int(st[i]) + 1, int(prev.t[m][i]) + 1))
        # push states that continued must fail the closing condition
        m = in_push & (dst == Phase.PUSH)
        if m.any():
            st = prev.stage[m]
            tg = self._per_stage(st, lambda s: cfg.theta_target(s, self.base.get(s, 0.0)))
            early = np.abs(prev.theta_err[m]) >= np.maximum(before[m], tg)
            for i in np.flatnonzero(early)[:20]:
                viol.append(("j-early", int(st[i]), int(prev.t[m][i])))

    def report(self):
        if self.staged_rows == 0:
            raise PreconditionError("trace was not produced by the staged adversary")
        ok = not self.violations
        return LemmaReport(self.lemma_id, _verdict(ok), {
            "k_records": self.k_records, "j_records": self.j_records,
            "violations": self.violations[:20], "n_violations": len(self.violations),
            "ratios_at_k": self.ratios_at_k,
            "ratio_runmax_at_k": self.ratio_runmax_at_k,
        }, 0.0)


def verify_stage_records(trace, w_bound, cfg: StagedConfig) -> LemmaReport:
    return run_checks(trace, [StageRecordCheck(w_bound, cfg)])[0]


# -- injection checkers ---------------------------------------------------------------

@dataclass(frozen=True)
class InjectedState:
    """Hypothesis state at time ``j``: ``theta_err[j]``, ``y[j]``, ``r[j-1]``."""

    theta_err_j: float
    y_j: float
    r_jm1: float
    j: int = 1

    def __post_init__(self):
        for name in ("theta_err_j", "y_j", "r_jm1"):
            if not math.isfinite(getattr(self, name)):
                raise PreconditionError(f"{name} must be finite")
        if self.theta_err_j == 0 or self.y_j == 0:
            raise PreconditionError("theta_err_j and y_j must be nonzero")
        if not self.r_jm1 > 0:
            raise PreconditionError("r_jm1 must be > 0")
        if self.j < 1:
            raise PreconditionError("j must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "InjectedState":
        """``"theta_err=-10,y=1,r=5"``; extra keys such as ``c`` are ignored."""
        kv = _parse_kv(text)
        try:
            return cls(float(kv["theta_err"]), float(kv["y"]), float(kv["r"]),
                       int(kv.get("j", 1)))
        except KeyError as exc:
            raise PreconditionError(f"injection string missing {exc}") from None


def _parse_kv(text):
    out = {}
    for part in text.split(","):
        if part.strip():
            k, _, v = part.partition("=")
            out[k.strip()] = v.strip()
    return out


_SILENT_PLANT = PlantConfig(theta=0.0, theta0=0.0, y0=0.0, w_bound=1.0)


def silent_run(inject: InjectedState, horizon: int):
    """Noise-free continuation from the injected state.

    Returns arrays ``t, y, theta_err, r_prev`` for ``t = j .. j + horizon``
    where ``r_prev[i]`` is ``r[t-1]``.
    """
    state = inject_state(inject.theta_err_j, inject.y_j, inject.r_jm1, t=inject.j)
    n = horizon + 1
    t = np.empty(n, np.int64)
    y = np.empty(n)
    err = np.empty(n)
    r_prev = np.empty(n)
    r_prev[0] = inject.r_jm1
    for i in range(n):
        t[i], y[i], err[i] = state.t, state.y, state.theta_err
        if i + 1 < n:
            r_prev[i + 1] = state.r
            state = closed_loop_step(state, _SILENT_PLANT, 0.0)
    return t, y, err, r_prev


def analyze_silent_phase(inject: InjectedState, horizon: int = 10_000,
                         rtol=REL_LONG) -> LemmaReport:
    """Noise-free regime: conserved product, geometric decay, limit in (0, 1)."""
    if horizon < 10:
        raise PreconditionError("horizon must be >= 10")
    t, y, err, r_prev = silent_run(inject, horizon)
    prod = r_prev * err
    p0 = prod[0]
    cons = float(np.max(np.abs(prod - p0)) / abs(p0))
    measured = {"conserved_product": float(p0), "max_conservation_rel_dev": cons}
    below = np.flatnonzero(np.abs(err) < 1.0)
    if len(below) == 0:
        measured["t0_offset"] = -1
        return LemmaReport("lemma3.silent", INCONCLUSIVE, measured, rtol)
    i0 = int(below[0])
    alpha = float(abs(err[i0]))
    # envelope |y_t| <= (1 + 1e-6) |y_t0| alpha^(t - t0), in log space on normal values
    tail = slice(i0, None)
    yt = np.abs(y[tail])
    steps = np.arange(len(yt), dtype=np.float64)
    normal = yt >= sys.float_info.min
    lhs = np.log(yt[normal])
    rhs = math.log1p(1e-6) + math.log(yt[0]) + steps[normal] * math.log(alpha)
    envelope_ok = bool(np.all(lhs <= rhs))
    term = float(abs(err[-1]))
    d = np.abs(np.diff(np.abs(err[-101:]))) / np.abs(err[-100:])
    converged = len(d) == 100 and bool(np.all(d < 1e-12))
    measured.update({
        "t0_offset": int(t[i0] - inject.j), "alpha": alpha,
        "log10_c0": math.log10(yt[0]) - t[i0] * math.log10(alpha),
        "terminal_abs_theta_err": term, "decay_rate": term,
        "convergence_max_rel_step": float(d.max()) if len(d) else math.inf,
        "envelope_ok": envelope_ok,
    })
    if not converged:
        return LemmaReport("lemma3.silent", INCONCLUSIVE, measured, rtol)
    ok = cons <= rtol and envelope_ok and 0.0 < alpha < 1.0 and 0.0 < term < 1.0
    return LemmaReport("lemma3.silent", _verdict(ok), measured, rtol)


def _locate_burst(inject, horizon):
    t, y, err, r_prev = silent_run(inject, horizon)
    r = np.append(r_prev[1:], np.nan)  # r[t]
    three = 3.0 * inject.r_jm1
    hit = np.flatnonzero(r[:-1] >= three)
    if len(hit) == 0:
        return None, (t, y, err, r_prev)
    return int(hit[0]), (t, y, err, r_prev)


def find_burst(inject: InjectedState, horizon: int = 10_000) -> LemmaReport:
    """First ``l >= j`` with ``r[l] >= 3 r[j-1]``; checks the two burst inequalities."""
    if abs(inject.theta_err_j) < 6:
        raise PreconditionError("burst hypothesis needs |theta_err_j| >= 6")
    i, (t, y, err, r_prev) = _locate_burst(inject, horizon)
    three = 3.0 * inject.r_jm1
    if i is None:
        return LemmaReport("lemma3.burst", INCONCLUSIVE, {"three_r": three}, 0.0)
    ok = r_prev[i] <= three and y[i] ** 2 >= inject.r_jm1
    return LemmaReport("lemma3.burst", _verdict(ok), {
        "l": int(t[i]), "l_offset": int(t[i] - inject.j), "r_l_minus_1": float(r_prev[i]),
        "y_l_sq": float(y[i] ** 2), "three_r": three, "r_jm1": inject.r_jm1,
    }, 0.0)


def verify_ratio_bound(inject: InjectedState, c: float, horizon: int = 10_000,
                       sum_w2_prior: float = 0.0) -> LemmaReport:
    """Energy-ratio bound after a closed push regime.

    ``sum_w2_prior`` is the noise energy accumulated up to ``j``; the
    continuation itself is noise-free.
    """
    if not c > 0:
        raise PreconditionError("c must be > 0")
    if abs(inject.theta_err_j) < max(6.0, 126.0 * c):
        raise PreconditionError("ratio bound needs |theta_err_j| >= max(6, 126 c)")
    i, (t, y, err, r_prev) = _locate_burst(inject, horizon + 2)
    if i is None or i + 2 >= len(y):
        return LemmaReport("lemma4.ratio_bound", INCONCLUSIVE, {}, 0.0)
    rj, th = inject.r_jm1, abs(inject.theta_err_j)
    noise_cap = 7.0 * rj * th * th
    burst = float(y[i + 1] ** 2 + y[i + 2] ** 2)
    lower = rj * th ** 3 / 18.0
    quotient = burst / noise_cap
    ok = sum_w2_prior <= noise_cap and burst >= lower and quotient >= c
    return LemmaReport("lemma4.ratio_bound", _verdict(ok), {
        "l": int(t[i]), "sum_w2": float(sum_w2_prior), "noise_cap": noise_cap,
        "burst_energy": burst, "burst_lower_bound": lower, "quotient": quotient,
        "c": float(c), "margin": quotient - c,
    }, 0.0)
