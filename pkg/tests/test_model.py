from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from hcrisk.densities import DomainError, log_pdf_lognormal, log_pmf_poisson
from hcrisk.model import (
    MODEL_MENU,
    DataError,
    ModelSpec,
    ParamLayout,
    ParameterState,
    PortfolioData,
    PriorConfig,
    log_likelihood,
    log_posterior,
    log_prior,
    pointwise_log_likelihood,
)
from hcrisk.simulation import generate_dataset

from oracles import eq4_literal, eq4_normalizing_correction

MODELS = [f"M{i}" for i in range(1, 7)]


def full_state(spec, n_ages, rng):
    return ParameterState(
        rng.gamma(3.0, 0.2, n_ages),
        rng.gamma(2.0, 0.05, n_ages),
        rng.gamma(4.0, 1.0, n_ages) if spec.has_nu else None,
        rng.gamma(4.0, 1.0, n_ages) if spec.has_delta else None,
        {k: float(v) for k, v in zip(
            [f"{ab}_{b}" for b in spec.blocks for ab in ("a", "b")], rng.uniform(0.5, 5.0, 2 * len(spec.blocks)))},
    )


def test_model_menu():
    assert sorted(MODEL_MENU) == MODELS
    assert ModelSpec.from_name("M6").blocks == ("lambda", "theta", "nu", "delta")
    assert ModelSpec.from_name("M1").blocks == ("lambda", "theta")
    assert ModelSpec.from_name("M6").kappa == 1.0
    with pytest.raises(ValueError):
        ModelSpec.from_name("M7")


# ---------------------------------------------------------------- data validation


def test_data_rejects_total_without_claims_with_row():
    with pytest.raises(DataError, match="row 2"):
        PortfolioData([1, 1], [1, 1], [1, 2], [3, 0], [10.0, 5.0], [100, 100])


def test_data_rejects_claims_without_total():
    with pytest.raises(DataError, match="row 1"):
        PortfolioData([1], [1], [1], [2], [0.0], [100])


@pytest.mark.parametrize("col,val", [("n_claims", -1), ("population", 0), ("age_class", 0), ("claim_total", np.nan)])
def test_data_rejects_invalid_values(col, val):
    rec = dict(service=1, age_class=1, month=1, n_claims=1, claim_total=2.0, population=10)
    rec[col] = val
    with pytest.raises(DataError, match="row 1"):
        PortfolioData.from_records([rec])


def test_data_rejects_duplicates_and_sparse_grid():
    rec = dict(service=1, age_class=1, month=1, n_claims=1, claim_total=2.0, population=10)
    with pytest.raises(DataError, match="duplicate"):
        PortfolioData.from_records([rec, rec])
    with pytest.raises(DataError, match="dense grid"):
        PortfolioData.from_records([rec, {**rec, "age_class": 2, "month": 2}])


def test_empty_data():
    d = PortfolioData.empty()
    assert d.n_records == 0 and d.n_ages == 0


# ---------------------------------------------------------------- likelihood


def test_single_cell_lognormal_poisson():
    d = PortfolioData([1], [1], [1], [1], [1.0], [1])
    p = ParameterState([1.0], [1.0])
    expected = log_pmf_poisson(1, 1.0) + log_pdf_lognormal(1.0, -math.log(2) / 2, math.log(2))
    assert log_likelihood(d, p, ModelSpec.from_name("M2")) == pytest.approx(expected, abs=1e-14)


def test_lt_nb_matches_closed_form_on_synthetic_portfolio():
    rng = np.random.default_rng(3)
    data, truth = generate_dataset(seed=17, return_truth=True)
    assert np.all(data.n_claims > 0)
    a = data.age_class - 1
    ll = log_likelihood(data, truth, ModelSpec.from_name("M6"))
    lit = eq4_literal(data.n_claims, data.claim_total, truth.lambda_[a] * data.population, truth.theta[a],
                      truth.nu[a], truth.delta[a])
    assert ll == pytest.approx(lit + eq4_normalizing_correction(data.n_claims, data.claim_total), abs=1e-10)
    del rng


@pytest.mark.parametrize("model", MODELS)
def test_doubling_data_doubles_likelihood(model):
    spec = ModelSpec.from_name(model)
    data = generate_dataset(seed=4)
    two = PortfolioData.concat([data, PortfolioData(np.full(data.n_records, 2), data.age_class, data.month,
                                                    data.n_claims, data.claim_total, data.population)])
    p = full_state(spec, data.n_ages, np.random.default_rng(0))
    assert log_likelihood(two, p, spec) == pytest.approx(2 * log_likelihood(data, p, spec), rel=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_likelihood_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec.from_name(MODELS[seed % 6])
    data = generate_dataset(seed=5)
    p = full_state(spec, data.n_ages, rng)
    perm = data.take(rng.permutation(data.n_records))
    assert log_likelihood(perm, p, spec) == pytest.approx(log_likelihood(data, p, spec), rel=1e-13)


def test_pointwise_shapes_broadcast_over_draws():
    spec = ModelSpec.from_name("M6")
    data = generate_dataset(seed=5)
    states = [full_state(spec, 7, np.random.default_rng(i)) for i in range(3)]
    stack = [np.stack([s.block(b) for s in states]) for b in ("lambda", "theta", "nu", "delta")]
    out = pointwise_log_likelihood(data, spec, *stack)
    assert out.shape == (3, data.n_records)
    for i, s in enumerate(states):
        assert out[i].sum() == pytest.approx(log_likelihood(data, s, spec), rel=1e-14)


def test_likelihood_rejects_inconsistent_params():
    data = generate_dataset(seed=5)
    with pytest.raises(DomainError):
        log_likelihood(data, ParameterState(np.ones(7), np.ones(7)), ModelSpec.from_name("M6"))
    with pytest.raises(DomainError):
        ParameterState([1.0, -1.0], [1.0, 1.0])


# ---------------------------------------------------------------- prior and posterior


def test_prior_exponential_case():
    p = ParameterState([0.7], [1.0], hyper=dict(a_lambda=1, b_lambda=1, a_theta=1, b_theta=1))
    prior = PriorConfig(family="half-cauchy")
    hyper_term = 4 * math.log(1 / math.pi)
    expected = -0.7 + (-1.0) + hyper_term
    assert log_prior(p, prior) == pytest.approx(expected, abs=1e-14)


def test_prior_block_integrates_to_one():
    prior = PriorConfig(fixed=dict(a_lambda=2.5, b_lambda=1.5, a_theta=1.0, b_theta=1.0))

    def dens(lam):
        return math.exp(log_prior(ParameterState([lam], [1.0]), prior) + 1.0)

    val, _ = integrate.quad(dens, 0, np.inf, epsabs=1e-12, epsrel=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_hyperprior_integrates_to_one():
    for fam in ("gamma", "half-cauchy"):
        prior = PriorConfig(family=fam, fixed=dict(b_lambda=1.0, a_theta=1.0, b_theta=1.0))

        def dens(a):
            p = ParameterState([1.0], [1.0], hyper=dict(a_lambda=a))
            # remove the lambda and theta densities, leaving the hyperprior
            return math.exp(log_prior(p, prior) - _gamma_logpdf(1.0, a, 1.0) - _gamma_logpdf(1.0, 1.0, 1.0))

        val = sum(integrate.quad(dens, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=400)[0]
                  for lo, hi in ((0, 1), (1, np.inf)))
        assert val == pytest.approx(1.0, abs=1e-6)


def _gamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x


def test_posterior_is_sum_and_empty_data_gives_prior():
    spec = ModelSpec.from_name("M6")
    data = generate_dataset(seed=8)
    p = full_state(spec, 7, np.random.default_rng(1))
    prior = PriorConfig()
    assert log_posterior(data, p, spec, prior) == log_likelihood(data, p, spec) + log_prior(p, prior)
    assert log_posterior(PortfolioData.empty(), p, spec, prior) == log_prior(p, prior)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(family="uniform")
    with pytest.raises(ValueError):
        PriorConfig(overrides={"kappa": "gamma"})
    with pytest.raises(ValueError):
        PriorConfig(fixed={"a_lambda": -1.0})
    assert PriorConfig(overrides={"nu": "half-cauchy"}).family_for("nu") == "half-cauchy"


@pytest.mark.parametrize("model", MODELS)
def test_layout_round_trip(model):
    spec = ModelSpec.from_name(model)
    lay = ParamLayout(spec, 7)
    p = full_state(spec, 7, np.random.default_rng(2))
    vec = lay.to_vector(p)
    assert vec.shape == (lay.dim,) == (7 * len(spec.blocks) + 2 * len(spec.blocks),)
    back = lay.from_vector(vec)
    np.testing.assert_array_equal(lay.to_vector(back), vec)


def test_layout_skips_pinned():
    lay = ParamLayout(ModelSpec.from_name("M1"), 2, PriorConfig(fixed={"a_lambda": 2.0}))
    assert "a_lambda" not in lay.names
    assert lay.from_vector(np.ones(lay.dim)).hyper["a_lambda"] == 2.0
