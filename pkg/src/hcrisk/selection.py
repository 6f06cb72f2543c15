"""Model comparison by DIC and a Monte-Carlo CRPS on cell claim totals."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .inference import ChainDraws
from .model import PortfolioData, pointwise_log_likelihood
from .risk import simulate_claims


class NonFiniteLikelihood(FloatingPointError):
    pass


class ReplicateOverflowWarning(RuntimeWarning):
    """Simulated replicates overflowed; the CRPS estimate is undefined."""


@dataclass
class ModelScore:
    model: str
    d_bar: float
    d_at_mean: float
    p_d: float
    dic: float
    crps: float = float("nan")


@dataclass
class ComparisonReport:
    rows: list[ModelScore] = field(default_factory=list)

    def best(self, key: str = "dic") -> str:
        return min(self.rows, key=lambda r: getattr(r, key)).model

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def _blocks(draws: ChainDraws, flat: np.ndarray):
    spec = draws.spec
    out = []
    for blk in ("lambda", "theta", "nu", "delta"):
        if blk not in spec.blocks:
            out.append(None)
            continue
        cols = [draws.names.index(f"{blk}[{a + 1}]") for a in range(draws.n_ages)]
        out.append(flat[..., cols])
    return out


def _as_fits(draws, data: PortfolioData):
    """Pair each fit with its slice of the data."""
    if isinstance(draws, Mapping):
        return [(draws[s], data.subset(s)) for s in sorted(draws)]
    return [(draws, data)]


def dic(draws, data: PortfolioData) -> tuple[float, float, float, float]:
    """``(d_bar, d_at_mean, p_d, dic)`` with deviance ``-2 log L``.

    The plug-in deviance uses the posterior mean of the natural-scale
    parameters. A mapping ``service -> draws`` sums deviances over services.
    """
    d_bar = 0.0
    d_at_mean = 0.0
    for fit, part in _as_fits(draws, data):
        flat = fit.flat()
        ll = pointwise_log_likelihood(part, fit.spec, *_blocks(fit, flat)).sum(axis=1)
        d_bar += float(np.mean(-2.0 * ll))
        at_mean = float(np.sum(pointwise_log_likelihood(part, fit.spec, *_blocks(fit, flat.mean(axis=0)))))
        if not np.isfinite(at_mean):
            raise NonFiniteLikelihood(f"{fit.model}: log likelihood at the posterior mean is not finite")
        d_at_mean += -2.0 * at_mean
    p_d = d_bar - d_at_mean
    return d_bar, d_at_mean, p_d, d_at_mean + 2.0 * p_d


def crps_from_replicates(obs, rep, rep_tilde) -> float:
    """Average over cells of ``mean|rep - obs| - 0.5 mean|rep - rep_tilde|``.

    ``obs`` has shape ``(cells,)`` (or is a scalar); ``rep`` and ``rep_tilde``
    have shape ``(L, cells)`` (or ``(L,)``) and are independent streams.
    """
    rep = np.asarray(rep, dtype=float)
    rep_tilde = np.asarray(rep_tilde, dtype=float)
    if rep.shape != rep_tilde.shape:
        raise ValueError("replicate streams must have the same shape")
    if rep.shape[0] < 2:
        raise ValueError("CRPS needs at least two replicates per stream")
    obs = np.asarray(obs, dtype=float)
    if not (np.all(np.isfinite(rep)) and np.all(np.isfinite(rep_tilde))):
        # log-scale size families have no finite mean; extreme draws overflow
        warnings.warn("non-finite replicates; CRPS is undefined for this fit", ReplicateOverflowWarning,
                      stacklevel=2)
        return float("nan")
    per_cell = np.mean(np.abs(rep - obs), axis=0) - 0.5 * np.mean(np.abs(rep - rep_tilde), axis=0)
    return float(np.mean(per_cell))


def _replicate_totals(fit: ChainDraws, part: PortfolioData, rows: np.ndarray, rng) -> np.ndarray:
    lam, theta, nu, delta = _blocks(fit, fit.flat()[rows])
    a = part.age_class - 1
    pick = lambda blk: None if blk is None else blk[:, a]
    _, x = simulate_claims(fit.spec, lam[:, a] * part.population, theta[:, a], pick(nu), pick(delta), rng)
    return x


def crps(draws, data: PortfolioData, n_replicates: int = 1, seed=0) -> float:
    """Monte-Carlo CRPS of cell claim totals.

    Every retained draw gives ``n_replicates`` replicates; the comparison
    stream uses an independent permutation of the draws with fresh noise.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    rng = np.random.default_rng(seed)
    obs, rep, rep_t = [], [], []
    for fit, part in _as_fits(draws, data):
        rows = np.repeat(np.arange(fit.n_draws), n_replicates)
        if rows.size < 2:
            raise ValueError("CRPS needs at least two replicates per stream")
        rep.append(_replicate_totals(fit, part, rows, rng))
        rep_t.append(_replicate_totals(fit, part, rng.permutation(rows), rng))
        obs.append(part.claim_total.astype(float))
    n_rep = {r.shape[0] for r in rep}
    if len(n_rep) != 1:
        raise ValueError("per-service fits must share the number of draws")
    return crps_from_replicates(np.concatenate(obs), np.hstack(rep), np.hstack(rep_t))


def compare_models(fits: Mapping[str, object], data: PortfolioData, n_replicates: int = 1, seed=0) -> ComparisonReport:
    """Score fitted models on the same data; ``fits`` maps model name to draws."""
    rows = []
    for name in fits:
        d_bar, d_hat, p_d, value = dic(fits[name], data)
        # replicate stream keyed by model number so row order does not matter
        score = crps(fits[name], data, n_replicates, [int(seed), int(name[1:])])
        rows.append(ModelScore(name, d_bar, d_hat, p_d, value, score))
    return ComparisonReport(rows)
