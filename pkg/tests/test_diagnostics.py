from __future__ import annotations

import numpy as np
import pytest

from hcrisk.inference import (
    ChainDraws,
    InsufficientDrawsError,
    compute_diagnostics,
    effective_sample_size,
    geweke_z,
    split_rhat,
)
from hcrisk.inference.diagnostics import autocovariance, lag_autocorrelation

from oracles import ar1


def test_iid_normal(rng):
    x = rng.standard_normal((4, 5000))
    assert 0.99 <= split_rhat(x) <= 1.01
    assert effective_sample_size(x) >= 0.8 * x.size


def test_shifted_chains(rng):
    x = rng.standard_normal((2, 1000))
    x[1] += 5.0
    assert split_rhat(x) > 2.0


def test_within_chain_trend_detected_by_split(rng):
    x = rng.standard_normal((2, 2000)) + np.linspace(0, 4, 2000)
    assert split_rhat(x) > 1.1


def test_ar1_ess():
    rho = 0.9
    x = ar1(50_000, rho, np.random.default_rng(9), chains=2)
    ratio = effective_sample_size(x) / x.size
    expected = (1 - rho) / (1 + rho)
    assert abs(ratio - expected) <= 0.3 * expected


def test_autocovariance_matches_direct(rng):
    x = rng.standard_normal(200)
    ac = autocovariance(x)
    xc = x - x.mean()
    for lag in (0, 1, 5, 50):
        assert ac[lag] == pytest.approx(np.sum(xc[: x.size - lag] * xc[lag:]) / x.size, abs=1e-12)


def test_lag_autocorrelation_ar1():
    x = ar1(100_000, 0.5, np.random.default_rng(3))
    lag = lag_autocorrelation(x, 3)
    np.testing.assert_allclose(lag, [0.5, 0.25, 0.125], atol=0.02)


def test_geweke_stationary_and_shifted(rng):
    assert abs(geweke_z(rng.standard_normal(5000))) < 4
    x = rng.standard_normal(5000)
    x[:500] += 3
    assert abs(geweke_z(x)) > 4


def test_constant_chain():
    x = np.ones((2, 100))
    assert split_rhat(x) == 1.0
    assert geweke_z(x[0]) == 0.0


def test_insufficient_draws(rng):
    with pytest.raises(InsufficientDrawsError):
        split_rhat(np.ones((1, 3)))
    with pytest.raises(InsufficientDrawsError):
        geweke_z(np.ones(10))
    d = ChainDraws(np.exp(rng.standard_normal((1, 500, 2))), np.zeros((1, 500)), ["lambda[1]", "theta[1]"], "M1", 1)
    with pytest.raises(InsufficientDrawsError):
        compute_diagnostics(d)
    d = ChainDraws(np.exp(rng.standard_normal((2, 99, 2))), np.zeros((2, 99)), ["lambda[1]", "theta[1]"], "M1", 1)
    with pytest.raises(InsufficientDrawsError):
        compute_diagnostics(d)


def test_compute_diagnostics_table(rng):
    raw = rng.standard_normal((3, 400, 2))
    raw[:, :, 1] = 0.8 * raw[:, :, 0] + 0.6 * raw[:, :, 1]
    d = ChainDraws(np.exp(raw), np.zeros((3, 400)), ["lambda[1]", "theta[1]"], "M1", 1)
    diag = compute_diagnostics(d)
    rows = diag.table()
    assert [r["parameter"] for r in rows] == ["lambda[1]", "theta[1]"]
    assert set(rows[0]) >= {"rhat", "ess", "geweke_z_chain1", "geweke_z_chain3", "autocorr_lag1"}
    assert diag.correlation.shape == (2, 2)
    assert diag.correlation[0, 1] == pytest.approx(0.8, abs=0.05)
    assert diag.lag_autocorr.shape == (2, 20)
