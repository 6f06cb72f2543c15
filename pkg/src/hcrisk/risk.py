"""Posterior-predictive premiums and empirical risk measures.

The premium for an age class is the 95th percentile of the predictive
distribution of aggregate claims per insured over the planning horizon.
VaR, TVaR and expected shortfall are nonparametric estimators on predictive
draws. Quantiles use the left-continuous inverse ``inf{r : F(r) >= tau}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import CountFamily, ModelSpec, SizeFamily


@dataclass(frozen=True)
class PredictiveConfig:
    """Planning horizon and future exposures.

    ``future_population`` maps age class (1-based) to either one population,
    held constant over the horizon, or a sequence of ``horizon`` monthly values.
    """

    horizon: int
    future_population: Mapping[int, int | Sequence[int]]
    n_replicates: int = 1
    quantile_level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be a positive number of months")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        if not 0.0 < self.quantile_level < 1.0:
            raise ValueError("quantile_level must lie in (0, 1)")
        for a, pop in self.future_population.items():
            vals = np.atleast_1d(np.asarray(pop))
            if np.any(vals < 1):
                raise ValueError(f"future population for age class {a} must be positive")
            if vals.size not in (1, self.horizon):
                raise ValueError(f"age class {a}: give one population or {self.horizon} monthly values")

    def population_matrix(self, n_ages: int) -> np.ndarray:
        """Populations as an ``(n_ages, horizon)`` float array."""
        missing = [a for a in range(1, n_ages + 1) if a not in self.future_population]
        if missing:
            raise KeyError(f"missing future population for age classes {missing}")
        out = np.empty((n_ages, self.horizon))
        for a in range(n_ages):
            out[a] = np.broadcast_to(np.asarray(self.future_population[a + 1], dtype=float), (self.horizon,))
        return out


@dataclass
class PredictiveSamples:
    """Draws of aggregate claims per insured, shape ``(n_samples, n_ages)``."""

    r_samples: np.ndarray
    draw_index: np.ndarray
    replicate_index: np.ndarray
    totals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.r_samples = np.asarray(self.r_samples, dtype=float)
        if self.r_samples.ndim != 2:
            raise ValueError("r_samples must be 2-D (sample, age class)")
        if np.any(self.r_samples < 0):
            raise ValueError("aggregate claims cannot be negative")

    @property
    def n_ages(self) -> int:
        return self.r_samples.shape[1]

    def for_class(self, age_class: int) -> np.ndarray:
        return self.r_samples[:, age_class - 1]


def simulate_claims(spec: ModelSpec, mean_count, theta, nu=None, delta=None, rng=None):
    """Simulate claim counts and claim totals for arrays of cells.

    All parameter arrays broadcast against ``mean_count``. Returns
    ``(n, x)`` with ``x = 0`` wherever ``n = 0``.
    """
    rng = np.random.default_rng(rng)
    mean_count = np.asarray(mean_count, dtype=float)
    shape = mean_count.shape
    if spec.count_family is CountFamily.NEGBINOMIAL:
        delta = np.broadcast_to(np.asarray(delta, dtype=float), shape)
        n = rng.poisson(mean_count * rng.gamma(delta, 1.0 / delta))
    else:
        n = rng.poisson(mean_count)
    x = np.zeros(shape)
    pos = n > 0
    if not np.any(pos):
        return n, x
    n_pos = n[pos].astype(float)
    theta_pos = np.broadcast_to(np.asarray(theta, dtype=float), shape)[pos]
    if spec.size_family is SizeFamily.GAMMA:
        x[pos] = rng.gamma(n_pos, 1.0 / theta_pos)
    else:
        sigma2 = np.log1p(1.0 / n_pos)
        mu = np.log(n_pos / theta_pos) - 0.5 * sigma2
        if spec.size_family is SizeFamily.LOGNORMAL:
            eps = rng.standard_normal(n_pos.shape)
        else:
            nu_pos = np.broadcast_to(np.asarray(nu, dtype=float), shape)[pos]
            eps = rng.standard_t(nu_pos)
        # heavy log-t tails can exceed the float range; those become inf
        with np.errstate(over="ignore"):
            x[pos] = np.exp(mu + np.sqrt(sigma2) * eps)
    return n, x


def _simulate_horizon_totals(draws, spec: ModelSpec, pops: np.ndarray, n_rep: int, rng) -> np.ndarray:
    lam = np.repeat(draws.block("lambda"), n_rep, axis=0)
    theta = np.repeat(draws.block("theta"), n_rep, axis=0)
    nu = np.repeat(draws.block("nu"), n_rep, axis=0) if spec.has_nu else None
    delta = np.repeat(draws.block("delta"), n_rep, axis=0) if spec.has_delta else None
    total = np.zeros(lam.shape)
    for h in range(pops.shape[1]):
        _, x = simulate_claims(spec, lam * pops[:, h], theta, nu, delta, rng)
        total += x
    return total


def draw_predictive(draws, spec: ModelSpec | None, cfg: PredictiveConfig, rng=None) -> PredictiveSamples:
    """Simulate per-insured aggregate claims over the horizon from posterior draws.

    ``draws`` is one :class:`~hcrisk.inference.ChainDraws` or a mapping
    ``service -> ChainDraws`` of independent per-service fits. In the second
    case the simulated claim totals of all services are summed before
    dividing by the population.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    fits = dict(draws) if isinstance(draws, Mapping) else {None: draws}
    first = next(iter(fits.values()))
    n_ages = first.n_ages
    n_draws = first.n_draws
    for fit in fits.values():
        if fit.n_ages != n_ages or fit.n_draws != n_draws:
            raise ValueError("per-service fits must share age classes and draw counts")
    pops = cfg.population_matrix(n_ages)
    total = np.zeros((n_draws * cfg.n_replicates, n_ages))
    for key in sorted(fits, key=lambda k: (k is None, k)):
        fit = fits[key]
        fit_spec = spec if spec is not None else fit.spec
        total += _simulate_horizon_totals(fit, fit_spec, pops, cfg.n_replicates, rng)
    # R divides by the population at the end of the horizon
    r = total / pops[:, -1]
    draw_index = np.repeat(np.arange(n_draws), cfg.n_replicates)
    rep_index = np.tile(np.arange(cfg.n_replicates), n_draws)
    return PredictiveSamples(r, draw_index, rep_index, totals=total)


def _as_1d(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty sample")
    return arr


def _quantile_rank(tau: float, n: int) -> int:
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    # rounding guards tau*n landing a hair above an integer
    return max(1, math.ceil(round(tau * n, 9)))


def value_at_risk(samples, tau: float) -> float:
    """Empirical ``inf{r : F(r) >= tau}``."""
    s = np.sort(_as_1d(samples))
    return float(s[_quantile_rank(tau, s.size) - 1])


def expected_shortfall(samples, tau: float) -> float:
    """Mean excess over VaR, ``E[(R - VaR(tau))_+]``."""
    s = _as_1d(samples)
    var = value_at_risk(s, tau)
    return float(np.mean(np.maximum(s - var, 0.0)))


def tail_value_at_risk(samples, tau: float) -> float:
    """Average of the top ``(1 - tau)`` sample mass.

    Samples strictly above VaR enter fully; the VaR atom fills whatever mass
    remains, so exactly ``(1 - tau) * n`` observations are averaged.
    """
    s = np.sort(_as_1d(samples))
    n = s.size
    var = float(s[_quantile_rank(tau, n) - 1])
    above = s[s > var]
    tail_mass = (1.0 - tau) * n
    atom_mass = tail_mass - above.size
    return float((np.sum(above) + atom_mass * var) / tail_mass)


def premium(samples, level: float = 0.95):
    """Predictive quantile at ``level``; one value per age class for 2-D input."""
    if isinstance(samples, PredictiveSamples):
        samples = samples.r_samples
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ValueError("empty sample")
    if arr.ndim == 1:
        return value_at_risk(arr, level)
    return np.array([value_at_risk(arr[:, j], level) for j in range(arr.shape[1])])


def coefficient_of_variation(samples, groups=None):
    """Sample standard deviation over sample mean.

    With ``groups`` (labels aligned with a 1-D ``samples``) returns a dict
    ``label -> CV``; a 2-D array gives one CV per column.
    """
    arr = np.asarray(samples, dtype=float)
    if groups is not None:
        groups = np.asarray(groups)
        return {g.item() if hasattr(g, "item") else g: coefficient_of_variation(arr[groups == g])
                for g in np.unique(groups)}
    if arr.ndim == 2:
        return np.array([coefficient_of_variation(arr[:, j]) for j in range(arr.shape[1])])
    arr = _as_1d(arr)
    if arr.size < 2:
        raise ValueError("coefficient of variation needs at least two samples")
    if not np.all(np.isfinite(arr)):
        return float("nan")
    mean = arr.mean()
    if mean == 0:
        raise ValueError("coefficient of variation undefined for a zero-mean group")
    return float(arr.std(ddof=1) / mean)


def risk_curves(samples, taus) -> dict[str, np.ndarray]:
    """VaR, TVaR and ES over a grid of levels for a 1-D sample."""
    s = _as_1d(samples)
    taus = np.asarray(taus, dtype=float)
    return dict(
        tau=taus,
        var=np.array([value_at_risk(s, t) for t in taus]),
        tvar=np.array([tail_value_at_risk(s, t) for t in taus]),
        es=np.array([expected_shortfall(s, t) for t in taus]),
    )


def premium_bands(samples, lower: float = 0.025, level: float = 0.95, upper: float = 0.975) -> np.ndarray:
    """Per-class ``(l_i, P, l_u)`` predictive quantiles, shape ``(n_ages, 3)``."""
    arr = samples.r_samples if isinstance(samples, PredictiveSamples) else np.asarray(samples, dtype=float)
    return np.column_stack([premium(arr, q) for q in (lower, level, upper)])


def monthly_cv(draws, spec: ModelSpec | None, populations, rng=None) -> np.ndarray:
    """CV of the predictive claims per insured for each age class and month.

    ``populations`` is ``(n_ages, n_months)``; ``draws`` as in
    :func:`draw_predictive`. Returns an ``(n_ages, n_months)`` array.
    """
    rng = np.random.default_rng(rng)
    pops = np.asarray(populations, dtype=float)
    fits = dict(draws) if isinstance(draws, Mapping) else {None: draws}
    out = np.empty(pops.shape)
    for t in range(pops.shape[1]):
        total = 0.0
        for key in sorted(fits, key=lambda k: (k is None, k)):
            fit = fits[key]
            total = total + _simulate_horizon_totals(fit, spec if spec is not None else fit.spec, pops[:, t:t + 1], 1, rng)
        out[:, t] = coefficient_of_variation(total / pops[:, t])
    return out


@dataclass
class RiskReport:
    """Per-model risk summaries keyed by model name.

    ``var``/``tvar``/``es`` have shape ``(n_ages, n_tau)``, ``premium`` is
    ``(n_ages, 3)`` holding the 2.5%, 95% and 97.5% quantiles, ``samples``
    is the predictive sample ``(n_samples, n_ages)`` and ``cv`` is
    ``(n_ages, n_months)``.
    """

    taus: np.ndarray = field(default_factory=lambda: np.empty(0))
    var: dict = field(default_factory=dict)
    tvar: dict = field(default_factory=dict)
    es: dict = field(default_factory=dict)
    premium: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    cv: dict = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return sorted(set(self.var) | set(self.premium) | set(self.samples) | set(self.cv))

    def add(self, model: str, samples: PredictiveSamples, cv=None) -> None:
        r = samples.r_samples
        curves = [risk_curves(r[:, j], self.taus) for j in range(r.shape[1])]
        self.var[model] = np.array([c["var"] for c in curves])
        self.tvar[model] = np.array([c["tvar"] for c in curves])
        self.es[model] = np.array([c["es"] for c in curves])
        self.premium[model] = premium_bands(r)
        self.samples[model] = r
        if cv is not None:
            self.cv[model] = np.asarray(cv, dtype=float)
