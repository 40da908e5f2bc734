import csv
import json
from pathlib import Path

import pytest

from neckforge.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def small_neck_config(tmp_path, T=10.0):
    cfg = json.loads((CONFIGS / "neck_n2.json").read_text())
    cfg["T"] = T
    cfg["base_counts"] = 16
    cfg["nz"] = 17
    cfg["greens"]["modes"] = 200
    cfg["greens"]["pairing"]["modes"] = 400
    path = tmp_path / "neck.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.mark.parametrize("which,extra", [("taubnut", ["--lambda", "0.5"]), ("calabi", ["--n", "3"]), ("hopf", [])])
def test_models_check(capsys, which, extra):
    code, out, _ = run_cli(capsys, "models", "check", "--which", which, *extra)
    assert code == 0
    assert json.loads(out)["pass"] is True


def test_models_rejects_bad_flag(capsys):
    code, _, err = run_cli(capsys, "models", "check", "--which", "calabi", "--n", "1")
    assert code == 2
    assert "--n" in err


def test_neck_match(capsys, tmp_path):
    out_file = tmp_path / "m.json"
    code, _, _ = run_cli(capsys, "neck", "match", "--T", "100", "--d1", "1", "--d2", "2", "--n", "3", "--out", out_file)
    assert code == 0
    d = json.loads(out_file.read_text())
    assert d["kind"] == "MatchingConstants"
    assert d["log_t"] == pytest.approx(-(100.0**2 - 1) / 6)


def test_collapse_measure_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for f in (a, b):
        code, _, _ = run_cli(capsys, "collapse", "measure", "--n", "3", "--d1", "1", "--d2", "2",
                             "--samples", "50", "--out", f)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert list(rows[0]) == ["v", "density"] and len(rows) == 50


def test_collapse_diam_exit_codes(capsys):
    sweep = "50,100,200,400,800"
    code, out, _ = run_cli(capsys, "collapse", "diam", "--sweep", sweep, "--n", "3")
    assert code == 0 and json.loads(out)["pass"]
    code, _, _ = run_cli(capsys, "collapse", "diam", "--sweep", sweep, "--n", "3", "--tolerance", "1e-6")
    assert code == 1


def test_greens_build_eval_residual(capsys, tmp_path):
    series = tmp_path / "series.json"
    code, _, _ = run_cli(capsys, "greens", "build", "--config", CONFIGS / "greens_n2.json", "--out", series)
    assert code == 0
    code, out, _ = run_cli(capsys, "greens", "eval", "--series", series, "--at", "1.0,1.0,0.5")
    assert code == 0
    ev = json.loads(out)
    assert ev["modes"] == 400 and ev["tail_bound"] > 0
    code, out, _ = run_cli(capsys, "greens", "residual", "--series", series, "--test-form", CONFIGS / "test_form.json")
    assert code == 0
    assert json.loads(out)["mismatch"] < 0.05


def test_greens_eval_wrong_arity(capsys):
    code, _, err = run_cli(capsys, "greens", "eval", "--config", CONFIGS / "greens_n2.json", "--at", "1.0,0.5")
    assert code == 2
    assert "--at" in err


def test_neck_build_residual_and_weights(capsys, tmp_path):
    cfg = small_neck_config(tmp_path)
    neck = tmp_path / "neck.bin"
    code, out, _ = run_cli(capsys, "neck", "build", "--config", cfg, "--out", neck)
    assert code == 0
    assert json.loads(out)["max_err"] < 1e-12
    res = tmp_path / "res.csv"
    code, _, _ = run_cli(capsys, "neck", "residual", "--in", neck, "--out", res)
    assert code == 0
    rows = list(csv.DictReader(res.open()))
    assert list(rows[0]) == ["z", "baseNodeId", "r", "err", "weightedErr"]
    assert max(abs(float(r["err"])) for r in rows) < 1e-12
    params = tmp_path / "params.json"
    params.write_text(json.dumps({"nu": -0.5, "alpha": 0.25, "sweep": [10, 20], "counts": 4}))
    rep = tmp_path / "w.csv"
    code, out, _ = run_cli(capsys, "weights", "report", "--neck", neck, "--params", params, "--out", rep)
    assert code in (0, 1)
    rows = list(csv.DictReader(rep.open()))
    assert [r["T"] for r in rows] == ["10.0", "20.0"]
    assert json.loads(out)["pass"] == (code == 0)


def test_malformed_config_exit_2(capsys):
    code, _, err = run_cli(capsys, "run", CONFIGS / "malformed.json")
    assert code == 2
    assert "config.neck.T" in err


def test_positivity_failure_exit_3(capsys, tmp_path):
    code, _, err = run_cli(capsys, "--out-dir", tmp_path, "run", CONFIGS / "t2_failure.json")
    assert code == 3
    assert "positivity fails at node (" in err


def test_unknown_field_is_named(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema": "neckforge/1", "checks": [6], "colour": "blue"}))
    code, _, err = run_cli(capsys, "run", path)
    assert code == 2
    assert "config.colour" in err


def test_run_is_byte_deterministic(capsys, tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"schema": "neckforge/1", "name": "small", "checks": [6, 10],
                               "outputs": {"summary": "summary.json"}}))
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        code, _, _ = run_cli(capsys, "--out-dir", d, "run", cfg)
        assert code == 0
        outs.append((d / "summary.json").read_bytes())
    assert outs[0] == outs[1]
    summ = json.loads(outs[0])
    assert summ["passed"] == summ["total"] == 2


def test_global_flags_after_subcommand(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "collapse", "measure", "--n", "2", "--d1", "1", "--d2", "1",
                         "--samples", "5", "--out-dir", tmp_path)
    assert code == 0
    assert (tmp_path / "measure.csv").exists()
