"""Log-scale reparameterization and the packed sampling target."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .. import kernels
from ..densities import DomainError
from ..model import (
    BLOCKS,
    CountFamily,
    ModelSpec,
    ParamLayout,
    ParameterState,
    PortfolioData,
    PriorConfig,
    SizeFamily,
)

_SIZE_CODE = {SizeFamily.GAMMA: 0, SizeFamily.LOGNORMAL: 1, SizeFamily.LOGT: 2}
_COUNT_CODE = {CountFamily.POISSON: 0, CountFamily.NEGBINOMIAL: 1}


class NonFiniteGradient(FloatingPointError):
    def __init__(self, index: int, name: str):
        super().__init__(f"non-finite gradient at coordinate {index} ({name})")
        self.index = index
        self.name = name


def transform_to_unconstrained(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(values > 0) or not np.all(np.isfinite(values)):
        raise DomainError("all parameters must be strictly positive and finite")
    return np.log(values)


def transform_to_constrained(z) -> np.ndarray:
    return np.exp(np.asarray(z, dtype=float))


def log_jacobian(z) -> float:
    """log |d exp(z)/dz| = sum(z)."""
    return float(np.sum(z))


class PosteriorTarget:
    """Unnormalized log posterior of one model on one dataset, in log space.

    Parameters
    ----------
    noncentered : blocks sampled relative to their rate hyperparameter,
        ``w_k = log(value_k) + log(rate)``. ``logp_grad`` then takes these
        sampling coordinates; ``to_log`` and ``to_sampling`` convert. The
        default (empty) samples plain log parameters.
    """

    def __init__(self, data: PortfolioData, spec: ModelSpec, prior: PriorConfig | None = None,
                 n_ages: int | None = None, backend: str | None = None, noncentered=()):
        unknown = set(noncentered) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown parameter blocks {sorted(unknown)}")
        self.noncentered = tuple(noncentered)
        self.data = data
        self.spec = spec
        self.prior = prior or PriorConfig()
        self.n_ages = n_ages if n_ages is not None else data.n_ages
        if self.n_ages < 1:
            raise ValueError("need at least one age class")
        self.layout = ParamLayout(spec, self.n_ages, self.prior)
        self.dim = self.layout.dim
        if backend is None:
            self._kernel = kernels.logp_grad
        else:
            self._kernel = {"numba": kernels.logp_grad_loop, "numpy": kernels.logp_grad_numpy}[backend]
        self._pack()

    def _pack(self):
        d = self.data
        n = d.n_claims.astype(float)
        pos = n > 0
        logx = np.zeros_like(n)
        logx[pos] = np.log(d.claim_total[pos])
        lgn = np.zeros_like(n)
        lgn[pos] = gammaln(n[pos])
        s2 = np.zeros_like(n)
        s2[pos] = np.log1p(1.0 / n[pos])
        offs = np.full(4, -1, dtype=np.int64)
        ia = np.full(4, -1, dtype=np.int64)
        ib = np.full(4, -1, dtype=np.int64)
        fa = np.ones(4)
        fb = np.ones(4)
        fam = np.zeros(4, dtype=np.int64)
        shear = np.zeros(4, dtype=np.int64)
        lay = self.layout
        for b, blk in enumerate(BLOCKS):
            if blk not in lay.block_slices:
                continue
            offs[b] = lay.block_slices[blk].start
            ia[b] = lay.hyper_index.get(f"a_{blk}", -1)
            ib[b] = lay.hyper_index.get(f"b_{blk}", -1)
            fa[b] = self.prior.fixed.get(f"a_{blk}", 1.0)
            fb[b] = self.prior.fixed.get(f"b_{blk}", 1.0)
            fam[b] = 0 if self.prior.family_for(blk) == "gamma" else 1
            shear[b] = int(blk in self.noncentered and ib[b] >= 0)
        self._shear = [(lay.block_slices[blk], int(ib[b])) for b, blk in enumerate(BLOCKS) if shear[b]]
        self._args = (
            np.int64(self.n_ages),
            (d.age_class - 1).astype(np.int64),
            n,
            d.claim_total.astype(float),
            d.population.astype(float),
            logx,
            lgn,
            gammaln(n + 1.0),
            s2,
            np.int64(_SIZE_CODE[self.spec.size_family]),
            np.int64(_COUNT_CODE[self.spec.count_family]),
            offs, ia, ib, fa, fb, fam, shear,
        )

    def logp_grad(self, z) -> tuple[float, np.ndarray]:
        z = np.ascontiguousarray(z, dtype=float)
        grad = np.empty(self.dim)
        lp = self._kernel(z, *self._args, grad)
        return lp, grad

    def logp(self, z) -> float:
        return self.logp_grad(z)[0]

    def to_sampling(self, z) -> np.ndarray:
        """Log parameters to sampling coordinates (rows of a 2-D array alike)."""
        w = np.array(z, dtype=float)
        for sl, ib in self._shear:
            w[..., sl] += w[..., ib:ib + 1]
        return w

    def to_log(self, w) -> np.ndarray:
        z = np.array(w, dtype=float)
        for sl, ib in self._shear:
            z[..., sl] -= z[..., ib:ib + 1]
        return z

    def to_unconstrained(self, params: ParameterState) -> np.ndarray:
        """Sampling coordinates of ``params``."""
        return self.to_sampling(transform_to_unconstrained(self.layout.to_vector(params)))

    def to_params(self, w) -> ParameterState:
        return self.layout.from_vector(transform_to_constrained(self.to_log(w)))


def grad_log_posterior_unconstrained(data: PortfolioData, z, spec: ModelSpec, prior: PriorConfig | None = None,
                                     n_ages: int | None = None) -> np.ndarray:
    """Gradient of ``log_posterior(exp(z)) + sum(z)`` with respect to ``z``."""
    target = PosteriorTarget(data, spec, prior, n_ages=n_ages)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        bad = int(np.flatnonzero(~np.isfinite(z))[0])
        raise DomainError(f"unconstrained point has a non-finite coordinate {bad}")
    _, g = target.logp_grad(z)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NonFiniteGradient(int(bad[0]), target.layout.names[int(bad[0])])
    return g

