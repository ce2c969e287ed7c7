import json
import subprocess
import sys

import numpy as np
import pytest

from nngp_gauge import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(l) for l in out.splitlines() if l.strip()], err


def test_selftest_passes(capsys):
    code, rows, _ = run(capsys, "selftest")
    assert code == cli.EXIT_OK
    assert rows[0]["type"] == "config"
    assert all(r["ok"] for r in rows[1:]) and len(rows) >= 5


def test_dist1d_selftest_flag(capsys):
    code, rows, _ = run(capsys, "dist1d", "--selftest")
    assert code == 0 and rows[1]["value"] == pytest.approx(0.0774, abs=5e-5)


def test_kernel_relu_constant_diagonal(tmp_path, capsys):
    f = tmp_path / "x.txt"
    f.write_text("0.6 0.8\n-1.0, 0.5\n")
    code, rows, _ = run(capsys, "kernel", "--sigma", "relu", "--depth", 3, "--inputs", f)
    assert code == 0
    tab = next(r for r in rows if r["type"] == "kernel_table")
    d0 = [np.diag(np.array(l["matrix"]))[0] for l in tab["layers"]]
    assert np.allclose(d0, d0[0], rtol=1e-12)
    assert next(r for r in rows if r["type"] == "nondegeneracy")["pass"]


def test_kernel_tanh_gh_refinement(tmp_path, capsys):
    f = tmp_path / "x.json"
    f.write_text(json.dumps([[0.3, -0.2], [1.1, 0.4]]))
    mats = []
    for nodes in (64, 128):
        _, rows, _ = run(capsys, "kernel", "--sigma", "tanh", "--cw", 1.5, "--cb", 0.1,
                         "--inputs", f, "--gh-nodes", nodes)
        tab = next(r for r in rows if r["type"] == "kernel_table")
        mats.append(np.array(tab["layers"][-1]["matrix"]))
    assert np.allclose(mats[0], mats[1], rtol=1e-10, atol=1e-13)


def test_malformed_file_reports_position(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text("1 0\n0 x\n")
    code, _, err = run(capsys, "kernel", "--inputs", f)
    assert code == cli.EXIT_INPUT and "bad.txt:2:3" in err
    f.write_text('[[1, 0],\n [0, ]]')
    code, _, err = run(capsys, "kernel", "--inputs", f)
    assert code == cli.EXIT_INPUT and "bad.txt:2:" in err


def test_require_nondegenerate(tmp_path, capsys):
    f = tmp_path / "x.txt"
    f.write_text("1 2\n2 4\n")
    code, rows, _ = run(capsys, "kernel", "--inputs", f, "--require-nondegenerate")
    assert code == cli.EXIT_DEGENERATE and not rows[-1]["pass"]


def test_functional_rejects_origin(capsys):
    code, rows, err = run(capsys, "functional", "--center", "0.2", "--radius", 0.5)
    assert code == cli.EXIT_DEGENERATE and "origin" in err
    assert rows[-1]["type"] == "error"


def test_functional_synthetic_is_zero(tmp_path, capsys):
    csv = tmp_path / "spectrum.csv"
    code, rows, _ = run(capsys, "functional", "--sigma", "tanh", "--cw", 1.0, "--center", 1.0,
                        "--nodes-per-axis", 16, "--widths", "8,16", "--synthetic",
                        "--couple-replicas", 500, "--spectral-csv", csv)
    assert code == 0 and csv.read_text().startswith("k,eigenvalue")
    fun = [r for r in rows if r["type"] == "functional"]
    assert len(fun) == 2 and all(r["d2_rhs"] == 0 and r["w2_rhs"] == 0 for r in fun)


def test_sweep_zero_input_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": [0.0, 0.0], "metrics": ["var_sigma"]}))
    code, rows, _ = run(capsys, "sweep", "--config", cfg, "--widths", "8,16,32,64",
                        "--replicas", 1000)
    assert code == cli.EXIT_DEGENERATE and rows[-1]["type"] == "error"


def test_sweep_collinear_inputs_exit_2(tmp_path, capsys):
    f = tmp_path / "x.txt"
    f.write_text("1 2\n2 4\n")
    code, rows, _ = run(capsys, "sweep", "--inputs", f, "--widths", "8,16,32,64",
                        "--replicas", 1000, "--metrics", "var_sigma")
    assert code == cli.EXIT_DEGENERATE
    assert "layer" in rows[-1]["reason"]


def test_sweep_failing_fit_exit_3(capsys):
    # the ReLU single-input mean gap is identically zero, so its fit cannot pass
    code, rows, _ = run(capsys, "sweep", "--widths", "8,16,32,64", "--replicas", 1000,
                        "--metrics", "mean_gap")
    assert code == cli.EXIT_FAIL and rows[-1]["pass"] is False


def test_sweep_synthetic_report_and_plot(tmp_path, capsys):
    svg, rep = tmp_path / "p.svg", tmp_path / "r.json"
    code, rows, _ = run(capsys, "sweep", "--sigma", "identity", "--depth", 1, "--widths",
                        "8,16,32,64", "--replicas", 1000, "--metrics", "synthetic,var_sigma",
                        "--plot", svg, "--report", rep)
    assert code == 0
    text = svg.read_text()
    assert text.startswith("<svg") and "synthetic" in text and "var_sigma" in text
    assert text.count("stroke-dasharray") == 2
    assert json.loads(rep.read_text())["schema"].startswith("nngp-gauge")
    assert rep.with_suffix(".csv").exists()


def test_config_precedence_and_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NNGP_GAUGE_WORKERS", "3")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"depth": 5, "cw": 1.25, "sigma": "tanh"}))
    out = tmp_path / "o.jsonl"
    code, rows, _ = run(capsys, "dist1d", "--selftest", "--config", cfg, "--depth", 1,
                        "--out", out)
    r = rows[0]["resolved"]
    assert (r["depth"], r["cw"], r["sigma"], r["cb"], r["workers"]) == (1, 1.25, "tanh", 0.0, 3)
    assert [json.loads(l) for l in out.read_text().splitlines()] == rows
    cfg.write_text(json.dumps({"depthh": 5}))
    code, _, err = run(capsys, "dist1d", "--config", cfg)
    assert code == cli.EXIT_INPUT and "depthh" in err


def test_workers_do_not_change_output(tmp_path, capsys):
    f = tmp_path / "x.txt"
    f.write_text("0.6 0.8\n-1.0 0.5\n")
    res = []
    for w in (1, 2):
        _, rows, _ = run(capsys, "distnd", "--sigma", "tanh", "--inputs", f, "--widths", "16,32",
                         "--replicas", 2000, "--workers", w)
        res.append([r for r in rows if r["type"] == "distnd"])
    assert res[0] == res[1]


def test_dist1d_rows_and_degenerate_fallback(capsys):
    code, rows, err = run(capsys, "dist1d", "--sigma", "tanh", "--widths", "8,16", "--replicas", 4000)
    body = [r for r in rows if r["type"] == "dist1d"]
    assert code == 0 and [r["width"] for r in body] == [8, 16]
    assert all(r["lower"] <= 2 * r["tv"] + 3 * r["tv_se"] + 1e-9 for r in body)
    code, rows, _ = run(capsys, "dist1d", "--input", "0", "--widths", "8", "--replicas", 2000)
    assert code == 0 and rows[-1]["tv"] is None and "Var^(1/2)" in rows[-1]["note"]


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "nngp_gauge", "selftest"],
                       capture_output=True, text=True, timeout=120)
    assert p.returncode == 0 and '"type": "selftest"' in p.stdout
