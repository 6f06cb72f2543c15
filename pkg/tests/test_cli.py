from __future__ import annotations

import json
import subprocess
import sys
import warnings

import numpy as np
import pytest

from hcrisk import io as hio
from hcrisk.cli import (
    EXIT_CONFIG,
    EXIT_CONVERGENCE,
    EXIT_DATA,
    ConfigError,
    future_population,
    main,
    parse_tau_grid,
    pool_services,
)
from hcrisk.simulation import default_populations, synthetic_portfolio

FAST = ["--chains", "2", "--iters", "300", "--burnin", "150", "--rhat-max", "100", "--seed", "7"]


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    data = synthetic_portfolio(n_services=2, populations=default_populations()[:2, :6], seed=4)
    return hio.write_portfolio(data, tmp_path_factory.mktemp("in") / "small.csv")


def run(argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main(argv)


def test_tau_grid():
    np.testing.assert_allclose(parse_tau_grid("0.01:0.99:0.01"), np.arange(1, 100) / 100)
    assert parse_tau_grid("0.9, 0.95").tolist() == [0.9, 0.95]
    for bad in ("0:1:0.5", "a,b", "0.5:0.4:0.1", ""):
        with pytest.raises(ConfigError):
            parse_tau_grid(bad)


def test_config_errors(tmp_path, small_csv):
    assert run(["fit", "--model", "M9", "--input", str(small_csv), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["fit", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["fit", "--input", str(tmp_path / "none.csv")]) == EXIT_CONFIG
    assert run(["fit", "--input", str(small_csv), "--iters", "10", "--burnin", "20"]) == EXIT_CONFIG
    assert run(["risk", "--input", str(small_csv), "--tau-grid", "0:2:1"]) == EXIT_CONFIG
    assert run(["bogus"]) == EXIT_CONFIG


def test_data_error(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("service,age_class,month,n_claims,claim_total,population\n1,1,1,0,5.0,10\n")
    assert run(["fit", "--input", str(p), "--out", str(tmp_path)]) == EXIT_DATA


def test_convergence_exit(tmp_path, small_csv):
    argv = ["fit", "--input", str(small_csv), "--out", str(tmp_path), "--model", "M1",
            "--chains", "2", "--iters", "240", "--burnin", "120", "--rhat-max", "1.0000001"]
    assert run(argv) == EXIT_CONVERGENCE
    assert (tmp_path / "draws_M1_service1.csv").is_file()


def test_fit_then_reuse_draws(tmp_path, small_csv):
    fit_dir = tmp_path / "fit"
    assert run(["fit", "--input", str(small_csv), "--out", str(fit_dir), "--model", "M1,M6", *FAST]) == 0
    for m in ("M1", "M6"):
        for s in (1, 2):
            assert (fit_dir / f"draws_{m}_service{s}.csv").is_file()
            assert (fit_dir / f"draws_{m}_service{s}.csv.meta.json").is_file()
            assert (fit_dir / f"diagnostics_{m}_service{s}.csv").is_file()
    out = tmp_path / "cmp"
    argv = ["compare", "--input", str(small_csv), "--out", str(out), "--model", "M1,M6",
            "--draws-dir", str(fit_dir), *FAST]
    assert run(argv) == 0
    rows = hio.read_table(out / "compare.csv")
    assert len(rows) == 2
    assert {"d_bar", "d_at_mean", "dic", "crps"} <= set(rows[0])
    assert json.loads((out / "compare.json").read_text())[0]["model"] == "M1"

    prem = tmp_path / "prem"
    assert run(["premium", "--input", str(small_csv), "--out", str(prem), "--model", "M1,M6",
                "--draws-dir", str(fit_dir), *FAST]) == 0
    for m in ("M1", "M6"):
        rows = hio.read_table(prem / f"premium_{m}.csv")
        assert len(rows) == 2
        assert list(rows[0]) == ["age_class", "l_i", "P", "l_u"]
        assert all(r["l_i"] <= r["P"] <= r["l_u"] for r in rows)
    assert (prem / "premium_box.csv").is_file()

    risk = tmp_path / "risk"
    assert run(["risk", "--input", str(small_csv), "--out", str(risk), "--model", "M1",
                "--draws-dir", str(fit_dir), *FAST]) == 0
    rows = hio.read_table(risk / "risk_M1.csv")
    assert len(rows) == 2 * 99
    for a in (1, 2):
        var = [r["var"] for r in rows if r["age_class"] == a]
        assert np.all(np.diff(var) >= 0)
    for kind in ("var_curve", "tvar_curve", "cv_curve"):
        assert (risk / f"{kind}.csv").is_file()

    diag = tmp_path / "diag"
    assert run(["diagnose", "--input", str(small_csv), "--out", str(diag), "--model", "M6",
                "--draws-dir", str(fit_dir), *FAST]) == 0
    assert (diag / "correlation_M6_service1.csv").is_file()
    assert (diag / "autocorrelation_M6_service2.csv").is_file()


def test_missing_draw_file(tmp_path, small_csv):
    assert run(["premium", "--input", str(small_csv), "--draws-dir", str(tmp_path), *FAST]) == EXIT_CONFIG


def test_pooled_fit(tmp_path, small_csv):
    assert run(["fit", "--input", str(small_csv), "--out", str(tmp_path), "--model", "M1", "--pooled", *FAST]) == 0
    assert (tmp_path / "draws_M1_service1.csv").is_file()
    assert not (tmp_path / "draws_M1_service2.csv").exists()


def test_pool_and_future_population(small_csv):
    data = hio.load_portfolio(small_csv)
    pooled = pool_services(data)
    assert pooled.services == [1] and pooled.n_records == 12
    assert pooled.n_claims.sum() == data.n_claims.sum()
    assert pooled.claim_total.sum() == pytest.approx(data.claim_total.sum())
    pops = default_populations()
    assert future_population(data) == {1: int(pops[0, 5]), 2: int(pops[1, 5])}


def test_simulate_and_resume(tmp_path):
    argv = ["simulate", "--out", str(tmp_path), "--datasets", "2", "--horizon", "2", *FAST]
    assert run(argv) in (0, EXIT_CONVERGENCE)
    rows = hio.read_table(tmp_path / "study_recovery.csv")
    assert [r["hyperparameter"] for r in rows][:2] == ["a_lambda", "b_lambda"]
    assert len(hio.read_table(tmp_path / "study_protection.csv")) == 7
    assert run(argv) == EXIT_CONFIG
    assert run([*argv, "--resume"]) in (0, EXIT_CONVERGENCE)
    assert run(["simulate", "--model", "M1", "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hcrisk", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for verb in ("fit", "compare", "premium", "risk", "simulate", "diagnose"):
        assert verb in out.stdout
