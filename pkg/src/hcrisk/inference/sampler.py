"""Multi-chain posterior sampling.

Each chain owns a ``numpy.random.Generator`` spawned from ``SamplerConfig.seed``
so a (seed, config, data) triple fixes the output bit for bit. Adaptation
(step size and diagonal inverse mass) happens only during burn-in.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..model import ModelSpec, ParameterState, PortfolioData, PriorConfig
from . import nuts
from .target import PosteriorTarget

logger = logging.getLogger(__name__)

DIVERGENCE_WARN_RATE = 0.01


class SamplerError(RuntimeError):
    """The sampler could not make progress."""


class DivergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 3
    n_iterations: int = 10_000
    n_burnin: int = 5_000
    seed: int = 20240601
    target_accept: float = 0.8
    max_tree_depth: int = 10
    kernel: str = "nuts"
    init: str = "data"
    init_jitter: float = 0.5
    # blocks sampled relative to their rate hyperparameter
    noncentered: tuple = ("nu", "delta")

    def __post_init__(self):
        object.__setattr__(self, "noncentered", tuple(self.noncentered))
        if self.n_chains < 1:
            raise ValueError("n_chains must be positive")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValueError("need 0 <= n_burnin < n_iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be positive")
        if self.kernel not in ("nuts", "rwm"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.init not in ("data", "prior"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_kept(self) -> int:
        return self.n_iterations - self.n_burnin


@dataclass
class ChainDraws:
    """Post-burn-in draws, natural scale, shape ``(chain, iteration, parameter)``."""

    draws: np.ndarray
    log_post: np.ndarray
    names: list[str]
    model: str
    n_ages: int
    prior: PriorConfig = field(default_factory=PriorConfig)
    accept_stats: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        self.log_post = np.asarray(self.log_post, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError("draws must have shape (chain, iteration, parameter)")
        if self.log_post.shape != self.draws.shape[:2]:
            raise ValueError("log_post must have shape (chain, iteration)")

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_name(self.model)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iter(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_iter

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def _layout(self):
        from ..model import ParamLayout

        lay = ParamLayout(self.spec, self.n_ages, self.prior)
        if lay.names != self.names:
            raise ValueError("parameter names do not match the model layout")
        return lay

    def states(self) -> list[ParameterState]:
        lay = self._layout()
        return [lay.from_vector(row) for row in self.flat()]

    def state(self, index: int) -> ParameterState:
        return self._layout().from_vector(self.flat()[index])

    def posterior_mean(self) -> ParameterState:
        return self._layout().from_vector(self.flat().mean(axis=0))

    def block(self, name: str) -> np.ndarray:
        """Flat draws of one per-class block, shape ``(n_draws, n_ages)``."""
        cols = [self.names.index(f"{name}[{a + 1}]") for a in range(self.n_ages)]
        return self.flat()[:, cols]

    def correlation(self) -> np.ndarray:
        """Posterior correlation matrix of the log parameters."""
        return np.corrcoef(np.log(self.flat()), rowvar=False)


def _initial_point(target: PosteriorTarget, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    lay = target.layout
    A = target.n_ages
    data = target.data
    z = np.zeros(lay.dim)
    if cfg.init == "prior":
        # hyperparameters at their prior centre (1), blocks drawn from Gamma(1, 1)
        for key, i in lay.hyper_index.items():
            z[i] = cfg.init_jitter * rng.standard_normal()
        for blk, sl in lay.block_slices.items():
            z[sl] = np.log(rng.gamma(1.0, 1.0, size=A))
        return z
    n_sum = np.bincount(data.age_class - 1, data.n_claims, minlength=A).astype(float)
    pop_sum = np.bincount(data.age_class - 1, data.population, minlength=A).astype(float)
    x_sum = np.bincount(data.age_class - 1, data.claim_total, minlength=A).astype(float)
    base = {
        "lambda": (n_sum + 0.5) / np.maximum(pop_sum, 1.0),
        "theta": (n_sum + 0.5) / (x_sum + 0.5 * np.where(n_sum > 0, x_sum / np.maximum(n_sum, 1.0), 1.0) + 1e-12),
        "nu": np.full(A, 5.0),
        "delta": np.full(A, 5.0),
    }
    for blk, sl in lay.block_slices.items():
        z[sl] = np.log(base[blk]) + cfg.init_jitter * rng.standard_normal(A)
    for blk in lay.block_slices:
        vals = np.exp(z[lay.block_slices[blk]])
        a_key, b_key = f"a_{blk}", f"b_{blk}"
        shape = 2.0
        if a_key in lay.hyper_index:
            z[lay.hyper_index[a_key]] = math.log(shape) + cfg.init_jitter * rng.standard_normal()
        if b_key in lay.hyper_index:
            z[lay.hyper_index[b_key]] = math.log(shape / vals.mean()) + cfg.init_jitter * rng.standard_normal()
    return z


def _welford_variance(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    var = samples.var(axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _finish(target, draws, lp, stats):
    z = target.to_log(draws)
    return np.exp(z), lp - z.sum(axis=1), stats


def _run_nuts_chain(target: PosteriorTarget, cfg: SamplerConfig, rng: np.random.Generator, chain: int):
    d = target.dim
    for attempt in range(100):
        z = target.to_sampling(_initial_point(target, cfg, rng))
        lp, g = target.logp_grad(z)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            break
    else:
        raise SamplerError(f"chain {chain}: no finite initial point found")

    inv_mass = np.ones(d)
    eps = nuts.find_reasonable_step_size(target, z, lp, g, inv_mass, rng)
    adapt = nuts.DualAveraging(eps, cfg.target_accept)
    slow_bounds = nuts.warmup_windows(cfg.n_burnin)

    keep = cfg.n_kept
    draws = np.empty((keep, d))
    log_post = np.empty(keep)
    n_unif = nuts.n_uniforms(cfg.max_tree_depth)
    sqrt_mass = 1.0 / np.sqrt(inv_mass)
    window_z: list[np.ndarray] = []
    window_accept = 0.0
    window_len = 0
    win_idx = 0
    n_div = 0
    sum_accept = 0.0
    sum_leapfrog = 0
    sum_depth = 0
    args = target._args

    for it in range(cfg.n_iterations):
        p0 = rng.standard_normal(d) * sqrt_mass
        unif = rng.random(n_unif)
        z, lp, g, acc, n_lf, depth, div = nuts.nuts_transition(
            z, lp, g, eps, inv_mass, p0, unif, cfg.max_tree_depth, *args
        )
        if it < cfg.n_burnin:
            eps = adapt.update(acc)
            window_accept += acc
            window_len += 1
            if win_idx < len(slow_bounds):
                lo, hi = slow_bounds[win_idx]
                if lo <= it < hi:
                    window_z.append(z.copy())
                if it == hi - 1:
                    if window_accept == 0.0:
                        raise SamplerError(f"chain {chain}: every proposal rejected during adaptation window ending at {hi}")
                    inv_mass = _welford_variance(np.asarray(window_z))
                    sqrt_mass = 1.0 / np.sqrt(inv_mass)
                    window_z = []
                    window_accept = 0.0
                    window_len = 0
                    win_idx += 1
                    eps = nuts.find_reasonable_step_size(target, z, lp, g, inv_mass, rng, eps)
                    adapt = nuts.DualAveraging(eps, cfg.target_accept)
            if it == cfg.n_burnin - 1:
                if window_len >= 20 and window_accept == 0.0:
                    raise SamplerError(f"chain {chain}: every proposal rejected in the final adaptation phase")
                eps = adapt.final
        else:
            k = it - cfg.n_burnin
            draws[k] = z
            log_post[k] = lp
            n_div += int(div)
            sum_accept += acc
            sum_leapfrog += n_lf
            sum_depth += depth

    stats = dict(
        chain=chain,
        step_size=float(eps),
        inv_mass=inv_mass.tolist(),
        mean_accept=sum_accept / keep,
        n_divergent=n_div,
        divergent_rate=n_div / keep,
        mean_leapfrog=sum_leapfrog / keep,
        mean_tree_depth=sum_depth / keep,
    )
    return _finish(target, draws, log_post, stats)


def _run_rwm_chain(target: PosteriorTarget, cfg: SamplerConfig, rng: np.random.Generator, chain: int):
    """Adaptive random-walk Metropolis with a diagonal proposal scale."""
    d = target.dim
    z = target.to_sampling(_initial_point(target, cfg, rng))
    lp = target.logp(z)
    scale = np.full(d, 0.1)
    global_scale = 2.38 / math.sqrt(d)
    keep = cfg.n_kept
    draws = np.empty((keep, d))
    log_post = np.empty(keep)
    hist: list[np.ndarray] = []
    n_acc = 0
    window_acc = 0
    for it in range(cfg.n_iterations):
        prop = z + global_scale * scale * rng.standard_normal(d)
        lp_prop = target.logp(prop)
        if np.isfinite(lp_prop) and math.log(rng.random()) < lp_prop - lp:
            z, lp = prop, lp_prop
            window_acc += 1
            if it >= cfg.n_burnin:
                n_acc += 1
        if it < cfg.n_burnin:
            hist.append(z.copy())
            if (it + 1) % 100 == 0:
                if window_acc == 0 and it + 1 >= 200:
                    raise SamplerError(f"chain {chain}: every proposal rejected in adaptation window ending at {it + 1}")
                rate = window_acc / 100.0
                global_scale *= math.exp(rate - 0.234)
                if len(hist) >= 200:
                    scale = np.sqrt(_welford_variance(np.asarray(hist[len(hist) // 2:])))
                window_acc = 0
        else:
            k = it - cfg.n_burnin
            draws[k] = z
            log_post[k] = lp
    stats = dict(chain=chain, step_size=float(global_scale), inv_mass=(scale**2).tolist(),
                 mean_accept=n_acc / keep, n_divergent=0, divergent_rate=0.0,
                 mean_leapfrog=0.0, mean_tree_depth=0.0)
    return _finish(target, draws, log_post, stats)


def run_chains(data: PortfolioData, spec: ModelSpec, prior: PriorConfig | None = None,
               config: SamplerConfig | None = None, n_ages: int | None = None) -> ChainDraws:
    """Sample the posterior of ``spec`` given ``data`` with ``config.n_chains`` chains."""
    prior = prior or PriorConfig()
    config = config or SamplerConfig()
    target = PosteriorTarget(data, spec, prior, n_ages=n_ages, noncentered=config.noncentered)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    run = _run_nuts_chain if config.kernel == "nuts" else _run_rwm_chain
    all_draws, all_lp, stats = [], [], []
    for c, ss in enumerate(seeds):
        dr, lp, st = run(target, config, np.random.default_rng(ss), c)
        all_draws.append(dr)
        all_lp.append(lp)
        stats.append(st)
        if st["divergent_rate"] > DIVERGENCE_WARN_RATE:
            warnings.warn(
                f"{spec.name} chain {c}: {st['divergent_rate']:.1%} divergent transitions after burn-in",
                DivergenceWarning,
                stacklevel=2,
            )
        logger.debug("chain %d done: %s", c, {k: v for k, v in st.items() if k != "inv_mass"})
    return ChainDraws(
        np.stack(all_draws), np.stack(all_lp), list(target.layout.names), spec.name, target.n_ages, prior, stats
    )
