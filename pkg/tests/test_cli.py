import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from lsstr.cli import EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_PASS, EXIT_USAGE, main
from lsstr.trace import load_csv as read_trace, write_csv


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_verify_export(tmp_path, capsys):
    out = tmp_path / "run"
    code, text, _ = run(capsys, "simulate", "--config", "demo-staged", "--horizon", "5000",
                        "--out", str(out))
    assert code == EXIT_PASS
    summary = json.loads((out / "summary.json").read_text())
    assert json.loads(text)["stages_completed"] == summary["stages_completed"] > 0
    assert len(read_trace(out / "trace.csv")) == 5001

    code, text, _ = run(capsys, "verify", str(out / "trace.csv"), "--config", "demo-staged")
    doc = json.loads(text)
    assert code == EXIT_PASS and doc["verdict"] == "pass"
    assert {r["lemma_id"] for r in doc["reports"]} >= {"lemma1.noise_bound", "lemma2.drift"}

    code, text, _ = run(capsys, "export-plot", str(out / "trace.csv"), "--columns",
                        "theta_err,log10_abs_theta_err", "--out", str(tmp_path / "plots"),
                        "--stride", "10")
    assert code == EXIT_PASS
    lines = (tmp_path / "plots" / "trace_theta_err.dat").read_text().splitlines()
    assert len(lines) == 501 and lines[1].split()[0] == "10"
    assert not list((tmp_path / "plots").glob("*.part"))


def test_missing_config_writes_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.conf"),
                       "--out", str(out))
    assert code == EXIT_USAGE
    assert json.loads(err)["exit_code"] == EXIT_USAGE
    assert not out.exists()


def test_json_config_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"theta": 2.0, "noise": "iid", "seed": 5, "horizon": 300}))
    out = tmp_path / "o"
    code, _, _ = run(capsys, "simulate", "--config", str(cfg), "--set", "w_bound=0.5",
                     "--out", str(out))
    assert code == EXIT_PASS
    tr = read_trace(out / "trace.csv")
    assert len(tr) == 301 and np.max(np.abs(tr.w)) <= 0.5


@pytest.mark.parametrize("bad", [["--set", "nonsense=1"], ["--set", "horizon=abc"],
                                 ["--noise", "loud"], ["--horizon", "0"]])
def test_bad_settings_are_usage_errors(tmp_path, capsys, bad):
    code, _, _ = run(capsys, "simulate", "--out", str(tmp_path), *bad)
    assert code == EXIT_USAGE


def test_sweep(tmp_path, capsys):
    code, text, _ = run(capsys, "simulate", "--config", "iid-baseline", "--horizon", "200",
                        "--sweep", "seed=1,2,3", "--out", str(tmp_path))
    assert code == EXIT_PASS
    assert [r["value"] for r in json.loads(text)["runs"]] == [1, 2, 3]
    traces = [read_trace(tmp_path / f"seed-{s}" / "trace.csv") for s in (1, 2, 3)]
    assert not np.array_equal(traces[0].w, traces[1].w)


def test_injected_burst(capsys):
    code, text, _ = run(capsys, "verify", "--lemma", "3", "--inject", "theta_err=-10,y=1,r=5")
    assert code == EXIT_PASS
    burst = [r for r in json.loads(text)["reports"] if r["lemma_id"] == "lemma3.burst"][0]
    assert burst["measured"]["l_offset"] == 1


def test_injected_ratio_bound_uses_given_c(capsys):
    code, text, _ = run(capsys, "verify", "--lemma", "4", "--inject",
                        "theta_err=-10,y=1,r=5,c=0.05")
    assert code == EXIT_PASS
    assert json.loads(text)["reports"][0]["measured"]["c"] == 0.05


def test_inconclusive_exit(capsys):
    code, text, _ = run(capsys, "verify", "--lemma", "3", "--inject",
                        "theta_err=6,y=1e-100,r=1", "--set", "inject_horizon=10")
    assert code == EXIT_INCONCLUSIVE
    assert json.loads(text)["verdict"] == "inconclusive"


def test_corrupted_trace_fails(tmp_path, capsys):
    run(capsys, "simulate", "--config", "demo-staged", "--horizon", "2000", "--out", str(tmp_path))
    tr = read_trace(tmp_path / "trace.csv")
    tr.w[100] = 1.5
    write_csv(tr, tmp_path / "bad.csv")
    code, text, _ = run(capsys, "verify", str(tmp_path / "bad.csv"), "--lemma", "1")
    assert code == EXIT_FAIL
    rep = json.loads(text)["reports"][0]
    assert rep["measured"]["first_violation_t"] == 100


def test_unknown_column(tmp_path, capsys):
    run(capsys, "simulate", "--config", "iid-baseline", "--horizon", "50", "--out", str(tmp_path))
    code, _, _ = run(capsys, "export-plot", str(tmp_path / "trace.csv"), "--columns", "bogus")
    assert code == EXIT_USAGE


def test_injection_checks_need_inject(capsys):
    assert run(capsys, "verify", "--lemma", "4")[0] == EXIT_USAGE


@pytest.mark.skipif(shutil.which("lsstr") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["lsstr", "verify", "--lemma", "4", "--inject", "theta_err=-10,y=1,r=5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["verdict"] == "pass"


def test_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lsstr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
