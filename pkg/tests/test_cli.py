import csv
import json
import math

import numpy as np
import pytest

from gscreen import __version__
from gscreen.baselines import ups
from gscreen.cli import main
from gscreen.exponents import BLOCK_RATES, omega_min
from gscreen.model import DesignData, TuningParams, write_design_binary, write_design_csv
from gscreen.selector import graphlet_screening
from gscreen.simlab import gen_design, gen_omega


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# gscreen {__version__} config=")
    return list(csv.DictReader(lines[1:]))


def _block_design(p=200, seed=0):
    rng = np.random.default_rng(seed)
    X = gen_design("fixed", gen_omega("block2", p, h0=0.7), None, None)
    beta = np.zeros(p)
    beta[rng.choice(p, 12, replace=False)] = rng.choice([-1, 1], 12) * 7.0
    return DesignData(X, X @ beta + rng.standard_normal(p)), beta


@pytest.fixture
def design_csv(tmp_path):
    d, beta = _block_design()
    path = tmp_path / "design.csv"
    write_design_csv(path, d)
    return path, d, beta


# ------------------------------------------------------------ select


def test_select_writes_one_based_outputs(design_csv, tmp_path):
    path, d, beta = design_csv
    out = tmp_path / "out"
    code = main(["select", "--input", str(path), "--sigma", "1", "--theta", "0.35",
                 "--r", "3", "--output-dir", str(out)])
    assert code == 0
    sel = [int(r["index"]) for r in _read_csv(out / "selected.csv")]
    bh = _read_csv(out / "beta_hat.csv")
    assert [int(r["index"]) for r in bh] == list(range(1, d.p + 1))
    ref = graphlet_screening(d, tuning=TuningParams(vartheta=0.35, r=3.0, p=d.p))
    assert sel == [j + 1 for j in np.flatnonzero(ref.beta_hat)]
    np.testing.assert_array_equal([float(r["beta_hat"]) for r in bh], ref.beta_hat)
    assert set(sel) == set(np.flatnonzero(beta) + 1)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["header"].startswith("# gscreen")
    assert diag["p"] == d.p and diag["m0"] == 3


def test_select_missing_sigma_names_flag(design_csv, tmp_path, capsys):
    path, _, _ = design_csv
    code = main(["select", "--input", str(path), "--theta", "0.35", "--r", "3",
                 "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "--sigma" in capsys.readouterr().err


def test_select_ups_routes_to_m0_one(design_csv, tmp_path):
    path, d, _ = design_csv
    out = tmp_path / "u"
    assert main(["select", "--input", str(path), "--sigma", "1", "--theta", "0.35",
                 "--r", "3", "--method", "ups", "--output-dir", str(out)]) == 0
    ref = ups(d, tuning=TuningParams(vartheta=0.35, r=3.0, p=d.p))
    got = np.array([float(r["beta_hat"]) for r in _read_csv(out / "beta_hat.csv")])
    np.testing.assert_array_equal(got, ref.beta_hat)
    assert json.loads((out / "diagnostics.json").read_text())["m0"] == 1


def test_select_lasso(design_csv, tmp_path):
    path, d, _ = design_csv
    out = tmp_path / "l"
    assert main(["select", "--input", str(path), "--sigma", "1", "--method", "lasso",
                 "--lambda", "3.0", "--output-dir", str(out)]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["lambda"] == 3.0 and diag["converged"]
    got = np.array([float(r["beta_hat"]) for r in _read_csv(out / "beta_hat.csv")])
    G = d.X.T @ d.X
    c = d.X.T @ d.Y
    grad = c - G @ got
    assert np.all(np.abs(grad[got == 0]) <= 3.0 + 1e-5)
    np.testing.assert_allclose(grad[got != 0], 3.0 * np.sign(got[got != 0]), atol=1e-5)


def test_select_explicit_uvq(design_csv, tmp_path):
    path, _, _ = design_csv
    lp = math.log(200)
    u, v = math.sqrt(2 * 0.35 * lp), math.sqrt(6 * lp)
    assert main(["select", "--input", str(path), "--sigma", "1", "--u", str(u), "--v", str(v),
                 "--q", "1.0", "--output-dir", str(tmp_path / "x")]) == 0
    diag = json.loads((tmp_path / "x" / "diagnostics.json").read_text())
    assert diag["q_rule"] == "fixed"
    assert diag["vartheta"] == pytest.approx(0.35)


def test_select_binary_input(tmp_path):
    d, _ = _block_design(seed=1)
    write_design_binary(tmp_path / "d.gsx", d)
    assert main(["select", "--input", str(tmp_path / "d.gsx"), "--sigma", "1",
                 "--theta", "0.35", "--r", "3", "--output-dir", str(tmp_path / "b")]) == 0


def test_select_component_cap_abort(design_csv, tmp_path, capsys):
    path, _, _ = design_csv
    code = main(["select", "--input", str(path), "--sigma", "1", "--theta", "0.35", "--r", "3",
                 "--component-cap", "1", "--output-dir", str(tmp_path / "c")])
    assert code == 3
    assert "component" in capsys.readouterr().err


@pytest.mark.parametrize("content", ["1,2,x\n3,4,5\n", "1,2\n3\n", ""])
def test_select_malformed_input(tmp_path, content):
    bad = tmp_path / "bad.csv"
    bad.write_text(content)
    assert main(["select", "--input", str(bad), "--sigma", "1", "--theta", "0.3",
                 "--r", "2", "--output-dir", str(tmp_path / "o")]) == 2


def test_select_usage_errors(design_csv, tmp_path):
    path, _, _ = design_csv
    base = ["select", "--input", str(path), "--output-dir", str(tmp_path / "o")]
    assert main(base[:1] + ["--input", str(tmp_path / "none.csv"), "--sigma", "1"]) == 2
    assert main(base + ["--sigma", "1"]) == 2
    assert main(base + ["--sigma", "-1", "--theta", "0.3", "--r", "2"]) == 2
    assert main(base + ["--sigma", "1", "--theta", "1.3", "--r", "2"]) == 2
    assert main(base + ["--sigma", "1", "--theta", "0.3", "--r", "2", "--max-iter", "9"]) == 2


def test_select_does_not_mutate_input(design_csv, tmp_path):
    path, _, _ = design_csv
    before = path.read_bytes()
    main(["select", "--input", str(path), "--sigma", "1", "--theta", "0.35", "--r", "3",
          "--output-dir", str(tmp_path / "m")])
    assert path.read_bytes() == before


# ------------------------------------------------------------ exponents


def test_exponents_table1(tmp_path):
    assert main(["exponents", "--table1", "--output-dir", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "table1.csv")
    assert [r["method"] for r in rows] == ["gs", "ss", "lasso"]
    assert all(len(r) == 9 for r in rows)
    assert rows[0]["0.5/4/0.8"] == "0.9000"
    assert rows[0]["0.1/11/0.8"] == "1.1406"


def test_exponents_single_triple(capsys):
    assert main(["exponents", "--theta", "0.5", "--r", "4", "--h0", "0.8"]) == 0
    out = capsys.readouterr().out.splitlines()
    row = next(csv.DictReader(out[1:]))
    assert f"{float(row['rho_gs']):.4f}" == "0.9000"
    assert set(row) >= {"theta", "r", "h0", "rho_gs", "rho_ss", "rho_lasso", "branch_gs"}


def test_exponents_h0_zero_gs_equals_ss(tmp_path):
    trip = tmp_path / "t.csv"
    trip.write_text("theta,r,h0\n0.2,3,0\n0.5,1.5,0\n0.7,6,0\n")
    assert main(["exponents", "--input", str(trip), "--output-dir", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "exponents.csv")
    assert len(rows) == 3
    for r in rows:
        assert float(r["rho_gs"]) == pytest.approx(float(r["rho_ss"]), abs=1e-12)


@pytest.mark.parametrize("argv", [
    ["exponents", "--theta", "1.5", "--r", "2", "--h0", "0.5"],
    ["exponents", "--theta", "0.5", "--r", "2", "--h0", "1.0"],
    ["exponents", "--theta", "0.5", "--r", "-2", "--h0", "0.5"],
    ["exponents", "--theta", "0.5"],
])
def test_exponents_invalid(argv):
    assert main(argv) == 2


# ------------------------------------------------------------ phase


def test_phase_columns(tmp_path):
    assert main(["phase", "--method", "lasso", "--h0", "0.5", "--points", "9",
                 "--output-dir", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "phase_lasso.csv")
    assert list(rows[0]) == ["theta", "r", "method", "h0"]
    # a theta may carry several boundary points where the curve has a plateau
    thetas = sorted({round(float(r["theta"]), 12) for r in rows})
    assert thetas == [round(x, 12) for x in np.linspace(0, 1, 11)[1:-1]]
    for r in rows:
        rho = BLOCK_RATES["lasso"](float(r["theta"]), float(r["r"]), 0.5).value
        assert rho == pytest.approx(1.0, abs=1e-6)
    assert main(["phase", "--method", "nope"]) == 2


# ------------------------------------------------------------ experiment


def test_experiment_1_grid_shape(tmp_path):
    out = tmp_path / "e1"
    assert main(["experiment", "1", "--p", "200", "--reps", "1", "--workers", "1", "--quiet",
                 "--output-dir", str(out)]) == 0
    rows = _read_csv(out / "summary.csv")
    assert len(rows) == 45
    assert {r["method"] for r in rows} == {"gs", "ups", "lasso"}
    assert {(r["theta"], r["tau"]) for r in rows} == {
        (str(t), str(tau)) for t in (0.25, 0.4, 0.55) for tau in (6, 7, 8, 9, 10)}
    assert len(_read_csv(out / "reps.csv")) == 45
    assert json.loads((out / "summary.json").read_text())["config"]["p"] == 200


def test_experiment_5a_shape(tmp_path):
    out = tmp_path / "e5"
    assert main(["experiment", "5a", "--p", "200", "--reps", "1", "--workers", "1", "--quiet",
                 "--output-dir", str(out)]) == 0
    rows = _read_csv(out / "summary.csv")
    assert len(rows) == 24
    assert len({r["method"] for r in rows}) == 6


def test_experiment_invalid_id():
    assert main(["experiment", "7"]) == 2


def test_experiment_seed_and_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("GS_SEED", "17")
    out = tmp_path / "s"
    assert main(["experiment", "5a", "--p", "200", "--reps", "1", "--workers", "1", "--quiet",
                 "--output-dir", str(out)]) == 0
    first = (out / "summary.csv").read_text().splitlines()[0]
    assert first.endswith("seed=17")
    out2 = tmp_path / "s2"
    assert main(["experiment", "5a", "--p", "200", "--reps", "1", "--workers", "1", "--quiet",
                 "--seed", "3", "--output-dir", str(out2)]) == 0
    assert (out2 / "summary.csv").read_text().splitlines()[0].endswith("seed=3")
    monkeypatch.setenv("GS_SEED", "abc")
    assert main(["experiment", "5a", "--p", "200", "--reps", "1", "--output-dir",
                 str(tmp_path / "s3")]) == 2


def test_experiment_config_file_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iter": 1}))
    out = tmp_path / "cfg"
    assert main(["experiment", "5a", "--p", "200", "--reps", "1", "--workers", "1", "--quiet",
                 "--config", str(cfg), "--output-dir", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["config"]["max_iter"] == 1
    cfg.write_text("{not json")
    assert main(["experiment", "5a", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["experiment", "5a", "--config", str(cfg)]) == 2


# ------------------------------------------------------------ omega


def test_omega_subcommand(tmp_path, capsys):
    M = np.array([[1.0, 0.5], [0.5, 1.0]])
    path = tmp_path / "m.csv"
    np.savetxt(path, M, delimiter=",")
    before = path.read_bytes()
    assert main(["omega", "--input", str(path)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["omega"] == pytest.approx(omega_min(M)[0])
    assert res["header"].startswith("# gscreen")
    assert path.read_bytes() == before
    path.write_text("1,2\n3\n")
    assert main(["omega", "--input", str(path)]) == 2
    assert main(["omega"]) == 2
