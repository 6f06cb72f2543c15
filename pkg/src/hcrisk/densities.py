"""Log densities and mass functions for claim sizes and claim counts.

All functions accept scalars or numpy arrays and broadcast. Gamma-function
terms always go through ``gammaln`` so claim counts in the thousands are
safe.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

LOG_2PI = np.log(2.0 * np.pi)


class DomainError(ValueError):
    """An argument lies outside the support or parameter space."""


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be strictly positive and finite, got {value!r}")
    return arr


def _scalar_or_array(out):
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def moment_match(n, theta):
    """Log-scale location and variance matching the mean and variance of Gamma(n, theta).

    Returns ``(mu, sigma2)`` with ``sigma2 = log(1/n + 1)`` and
    ``mu = log(n/theta) - sigma2/2``. Undefined for ``n = 0``: zero-claim
    cells carry no size term.
    """
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1) or np.any(n_arr != np.floor(n_arr)):
        raise DomainError(f"moment_match needs an integer claim count n >= 1, got {n!r}")
    theta_arr = _positive("theta", theta)
    sigma2 = np.log1p(1.0 / n_arr)
    mu = np.log(n_arr) - np.log(theta_arr) - 0.5 * sigma2
    return _scalar_or_array(mu), _scalar_or_array(sigma2)


def log_pdf_log_t(x, mu, sigma2, nu):
    """Log density of a log Student-t variable.

    ``log X`` is Student-t with location ``mu``, squared scale ``sigma2`` and
    ``nu`` degrees of freedom; the ``-log x`` term is the change of variable.
    """
    x = _positive("x", x)
    sigma2 = _positive("sigma2", sigma2)
    nu = _positive("nu", nu)
    mu = np.asarray(mu, dtype=float)
    lx = np.log(x)
    z2 = (lx - mu) ** 2 / (nu * sigma2)
    out = (
        gammaln(0.5 * (nu + 1.0))
        - gammaln(0.5 * nu)
        - 0.5 * np.log(np.pi * nu * sigma2)
        - lx
        - 0.5 * (nu + 1.0) * np.log1p(z2)
    )
    return _scalar_or_array(out)


def log_pdf_lognormal(x, mu, sigma2):
    x = _positive("x", x)
    sigma2 = _positive("sigma2", sigma2)
    lx = np.log(x)
    out = -lx - 0.5 * (LOG_2PI + np.log(sigma2)) - (lx - np.asarray(mu, dtype=float)) ** 2 / (2.0 * sigma2)
    return _scalar_or_array(out)


def log_pdf_gamma(x, shape, rate):
    """Log density of Gamma(shape, rate): ``rate**shape / Gamma(shape) * x**(shape-1) * exp(-rate*x)``."""
    x = _positive("x", x)
    shape = _positive("shape", shape)
    rate = _positive("rate", rate)
    out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    return _scalar_or_array(out)


def log_pdf_half_cauchy(h, scale=1.0):
    h = _positive("h", h)
    scale = _positive("scale", scale)
    out = np.log(2.0 / np.pi) - np.log(scale) - np.log1p((h / scale) ** 2)
    return _scalar_or_array(out)


def _counts(n):
    n = np.asarray(n, dtype=float)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise DomainError(f"counts must be nonnegative integers, got {n!r}")
    return n


def log_pmf_poisson(n, mean):
    n = _counts(n)
    mean = _positive("mean", mean)
    out = n * np.log(mean) - mean - gammaln(n + 1.0)
    return _scalar_or_array(out)


def log_pmf_negbinomial(n, mu, delta):
    """Negative binomial with mean ``mu`` and variance ``mu * (1 + mu/delta)``.

    This is the Poisson(mu * g) mixture over g ~ Gamma(delta, delta).
    """
    n = _counts(n)
    mu = _positive("mu", mu)
    delta = _positive("delta", delta)
    out = (
        gammaln(n + delta)
        - gammaln(n + 1.0)
        - gammaln(delta)
        + n * np.log(mu)
        - n * np.log(delta + mu)
        - delta * np.log1p(mu / delta)
    )
    return _scalar_or_array(out)


def overdispersion_factor(mu, delta):
    """Variance-to-mean ratio ``1 + mu/delta`` of the negative binomial count."""
    mu = _positive("mu", mu)
    delta = _positive("delta", delta)
    return _scalar_or_array(1.0 + mu / delta)
