from __future__ import annotations

import os
import subprocess
import sys

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcrisk import kernels
from hcrisk._accel import HAS_NUMBA
from hcrisk.densities import DomainError
from hcrisk.inference import (
    NonFiniteGradient,
    PosteriorTarget,
    grad_log_posterior_unconstrained,
    log_jacobian,
    transform_to_constrained,
    transform_to_unconstrained,
)
from hcrisk.model import ModelSpec, ParameterState, PortfolioData, PriorConfig, log_posterior
from hcrisk.simulation import TRUE_HYPER, generate_dataset

from oracles import central_difference

MODELS = [f"M{i}" for i in range(1, 7)]


def truth_for(spec, truth):
    hyper = {k: v for k, v in TRUE_HYPER.items() if k.split("_", 1)[1] in spec.blocks}
    return ParameterState(truth.lambda_, truth.theta, truth.nu if spec.has_nu else None,
                          truth.delta if spec.has_delta else None, hyper)


def reference_logp(data, spec, prior, layout):
    def f(z):
        return log_posterior(data, layout.from_vector(np.exp(z)), spec, prior) + float(np.sum(z))
    return f


def max_rel_error(fd, g):
    return float(np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g))))


@pytest.fixture(scope="module")
def data_truth():
    return generate_dataset(seed=21, return_truth=True)


def random_points(target, base, rng, k):
    z0 = transform_to_unconstrained(target.layout.to_vector(base))
    return z0 + 0.5 * rng.standard_normal((k, z0.size))


# ---------------------------------------------------------------- transforms


@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=20))
def test_transform_round_trip(values):
    v = np.array(values)
    np.testing.assert_allclose(transform_to_constrained(transform_to_unconstrained(v)), v, rtol=1e-14)


def test_log_jacobian():
    z = np.array([0.3, -1.2, 4.0])
    assert log_jacobian(z) == pytest.approx(z.sum(), abs=0)
    # numerical determinant of the diagonal Jacobian
    assert log_jacobian(z) == pytest.approx(np.log(np.prod(np.exp(z))), abs=1e-12)


def test_transform_rejects_nonpositive():
    with pytest.raises(DomainError):
        transform_to_unconstrained([1.0, 0.0])


# ---------------------------------------------------------------- kernels vs reference


@pytest.mark.parametrize("model", MODELS)
def test_kernel_matches_reference_posterior(model, data_truth):
    data, truth = data_truth
    spec = ModelSpec.from_name(model)
    target = PosteriorTarget(data, spec)
    ref = reference_logp(data, spec, target.prior, target.layout)
    for z in random_points(target, truth_for(spec, truth), np.random.default_rng(1), 5):
        assert target.logp(z) == pytest.approx(ref(z), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("family", ["gamma", "half-cauchy"])
def test_numba_and_numpy_backends_agree(model, family, data_truth):
    data, truth = data_truth
    spec = ModelSpec.from_name(model)
    prior = PriorConfig(family=family)
    t_nb = PosteriorTarget(data, spec, prior, backend="numba", noncentered=("nu", "delta"))
    t_np = PosteriorTarget(data, spec, prior, backend="numpy", noncentered=("nu", "delta"))
    for z in random_points(t_nb, truth_for(spec, truth), np.random.default_rng(2), 5):
        lp1, g1 = t_nb.logp_grad(z)
        lp2, g2 = t_np.logp_grad(z)
        assert lp1 == pytest.approx(lp2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("model", MODELS)
def test_gradient_finite_differences(model, data_truth):
    data, truth = data_truth
    spec = ModelSpec.from_name(model)
    prior = PriorConfig()
    target = PosteriorTarget(data, spec, prior)
    ref = reference_logp(data, spec, prior, target.layout)
    for z in random_points(target, truth_for(spec, truth), np.random.default_rng(3), 10):
        g = grad_log_posterior_unconstrained(data, z, spec, prior)
        assert max_rel_error(central_difference(ref, z), g) <= 1e-5


@pytest.mark.parametrize("model", ["M3", "M4", "M6"])
def test_sheared_gradient_finite_differences(model, data_truth):
    data, truth = data_truth
    spec = ModelSpec.from_name(model)
    target = PosteriorTarget(data, spec, PriorConfig(family="half-cauchy"), noncentered=("nu", "delta"))
    for z in random_points(target, truth_for(spec, truth), np.random.default_rng(4), 5):
        w = target.to_sampling(z)
        np.testing.assert_allclose(target.to_log(w), z, atol=1e-13)
        _, g = target.logp_grad(w)
        assert max_rel_error(central_difference(target.logp, w), g) <= 1e-5


def test_shear_preserves_density(data_truth):
    data, truth = data_truth
    spec = ModelSpec.from_name("M6")
    plain = PosteriorTarget(data, spec)
    sheared = PosteriorTarget(data, spec, noncentered=("nu", "delta"))
    z = transform_to_unconstrained(plain.layout.to_vector(truth_for(spec, truth)))
    assert sheared.logp(sheared.to_sampling(z)) == pytest.approx(plain.logp(z), rel=1e-13)


def test_prior_mode_score():
    # one age class, no data, pinned hyperparameters: d/dz [a z - b e^z] = a - b lambda
    a, b = 3.0, 2.0
    prior = PriorConfig(fixed=dict(a_lambda=a, b_lambda=b, a_theta=1.5, b_theta=1.0))
    spec = ModelSpec.from_name("M1")
    for lam in (0.2, 1.0, 4.0):
        z = np.log([lam, 0.7])
        g = grad_log_posterior_unconstrained(PortfolioData.empty(), z, spec, prior, n_ages=1)
        assert g[0] == pytest.approx(a - b * lam, abs=1e-10)
    g = grad_log_posterior_unconstrained(PortfolioData.empty(), np.log([a / b, 1.5]), spec, prior, n_ages=1)
    np.testing.assert_allclose(g, 0.0, atol=1e-10)


def test_nonfinite_input_reported(data_truth):
    data, _ = data_truth
    z = np.zeros(PosteriorTarget(data, ModelSpec.from_name("M1")).dim)
    z[3] = np.nan
    with pytest.raises(DomainError, match="coordinate 3"):
        grad_log_posterior_unconstrained(data, z, ModelSpec.from_name("M1"))


def test_nonfinite_gradient_reported(data_truth):
    data, _ = data_truth
    spec = ModelSpec.from_name("M1")
    z = np.zeros(PosteriorTarget(data, spec).dim)
    z[0] = 800.0
    with pytest.raises(NonFiniteGradient) as err:
        grad_log_posterior_unconstrained(data, z, spec)
    assert err.value.index == 0 and err.value.name == "lambda[1]"


# ---------------------------------------------------------------- special functions


@pytest.mark.parametrize("nu", [0.05, 0.7, 3.0, 39.9, 40.0, 41.0, 500.0, 1e6, 1e12])
def test_lt_nu_terms_high_precision(nu):
    L, D = kernels.lt_nu_terms(nu)
    x = mp.mpf(nu)
    with mp.workdps(40):
        f = lambda v: mp.loggamma((v + 1) / 2) - mp.loggamma(v / 2) - mp.log(v) / 2
        L_ref = f(x)
        D_ref = mp.diff(f, x)
    assert L == pytest.approx(float(L_ref), rel=1e-12, abs=1e-14)
    assert D == pytest.approx(float(D_ref), rel=1e-9, abs=1e-15)
    L2, D2 = kernels.lt_nu_terms_np(np.array([nu]))
    assert L2[0] == pytest.approx(L, rel=1e-13, abs=1e-15)
    assert D2[0] == pytest.approx(D, rel=1e-12, abs=1e-18)


@pytest.mark.parametrize("x", [1e-3, 0.5, 1.0, 5.5, 80.0, 1e5])
def test_digamma(x):
    assert kernels.digamma_scalar(x) == pytest.approx(float(mp.digamma(x)), rel=1e-13, abs=1e-13)


def test_backend_flag_in_subprocess():
    code = ("import hcrisk, hcrisk.kernels as k; "
            "print(hcrisk.backend(), k.logp_grad is k.logp_grad_numpy)")
    env = dict(os.environ, HCRISK_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_default_backend():
    if HAS_NUMBA:
        assert kernels.logp_grad is kernels.logp_grad_loop
