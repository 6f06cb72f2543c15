"""Portfolio data, model menu, parameter containers and the (log) posterior.

The six models combine a claim-size family (Gamma, LogNormal, LogT) with a
claim-count family (Poisson, NegBinomial). Size parameters for the two
log-scale families are tied to the Gamma(n, theta) baseline by
:func:`hcrisk.densities.moment_match`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .densities import (
    DomainError,
    log_pdf_gamma,
    log_pdf_half_cauchy,
    log_pdf_log_t,
    log_pdf_lognormal,
    log_pmf_negbinomial,
    log_pmf_poisson,
    moment_match,
)


class DataError(ValueError):
    """Portfolio records violate a structural invariant."""


class SizeFamily(str, Enum):
    GAMMA = "Gamma"
    LOGNORMAL = "LogNormal"
    LOGT = "LogT"


class CountFamily(str, Enum):
    POISSON = "Poisson"
    NEGBINOMIAL = "NegBinomial"


MODEL_MENU = {
    "M1": (SizeFamily.GAMMA, CountFamily.POISSON),
    "M2": (SizeFamily.LOGNORMAL, CountFamily.POISSON),
    "M3": (SizeFamily.LOGT, CountFamily.POISSON),
    "M4": (SizeFamily.GAMMA, CountFamily.NEGBINOMIAL),
    "M5": (SizeFamily.LOGNORMAL, CountFamily.NEGBINOMIAL),
    "M6": (SizeFamily.LOGT, CountFamily.NEGBINOMIAL),
}

BLOCKS = ("lambda", "theta", "nu", "delta")
HYPER_NAMES = tuple(f"{ab}_{blk}" for blk in BLOCKS for ab in ("a", "b"))
HYPERPRIOR_FAMILIES = ("gamma", "half-cauchy")
# Gamma(0.1, 0.1) hyperprior
HYPER_GAMMA_SHAPE = 0.1
HYPER_GAMMA_RATE = 0.1


@dataclass(frozen=True)
class ModelSpec:
    size_family: SizeFamily
    count_family: CountFamily

    def __post_init__(self):
        object.__setattr__(self, "size_family", SizeFamily(self.size_family))
        object.__setattr__(self, "count_family", CountFamily(self.count_family))

    @property
    def kappa(self) -> float:
        return 1.0

    @classmethod
    def from_name(cls, name: str) -> "ModelSpec":
        try:
            size, count = MODEL_MENU[name.upper()]
        except KeyError:
            raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODEL_MENU)}") from None
        return cls(size, count)

    @property
    def name(self) -> str:
        for key, combo in MODEL_MENU.items():
            if combo == (self.size_family, self.count_family):
                return key
        raise AssertionError("unreachable")  # pragma: no cover

    @property
    def has_nu(self) -> bool:
        return self.size_family is SizeFamily.LOGT

    @property
    def has_delta(self) -> bool:
        return self.count_family is CountFamily.NEGBINOMIAL

    @property
    def blocks(self) -> tuple[str, ...]:
        out = ["lambda", "theta"]
        if self.has_nu:
            out.append("nu")
        if self.has_delta:
            out.append("delta")
        return tuple(out)


@dataclass
class PortfolioData:
    """Monthly claim counts, claim totals and exposures by service and age class.

    Stored column-wise. ``age_class`` and ``month`` are 1-based.
    """

    service: np.ndarray
    age_class: np.ndarray
    month: np.ndarray
    n_claims: np.ndarray
    claim_total: np.ndarray
    population: np.ndarray

    def __post_init__(self):
        self.service = np.asarray(self.service, dtype=np.int64).ravel()
        self.age_class = np.asarray(self.age_class, dtype=np.int64).ravel()
        self.month = np.asarray(self.month, dtype=np.int64).ravel()
        self.n_claims = np.asarray(self.n_claims, dtype=np.int64).ravel()
        self.claim_total = np.asarray(self.claim_total, dtype=float).ravel()
        self.population = np.asarray(self.population, dtype=np.int64).ravel()
        self.validate()

    def validate(self) -> None:
        n = len(self.service)
        cols = (self.age_class, self.month, self.n_claims, self.claim_total, self.population)
        if any(len(c) != n for c in cols):
            raise DataError("columns have different lengths")
        problems = []
        rows = np.arange(1, n + 1)
        for r in rows[(self.age_class < 1) | (self.month < 1)]:
            problems.append(f"row {r}: age_class and month must be >= 1")
        for r in rows[self.n_claims < 0]:
            problems.append(f"row {r}: negative n_claims")
        for r in rows[~np.isfinite(self.claim_total) | (self.claim_total < 0)]:
            problems.append(f"row {r}: claim_total must be finite and >= 0")
        for r in rows[(self.n_claims == 0) & (self.claim_total > 0)]:
            problems.append(f"row {r}: claim_total > 0 with n_claims = 0 (total is 0 when there are no claims)")
        for r in rows[(self.n_claims > 0) & (self.claim_total <= 0)]:
            problems.append(f"row {r}: claim_total must be > 0 when n_claims > 0")
        for r in rows[self.population < 1]:
            problems.append(f"row {r}: population must be >= 1")
        if problems:
            raise DataError("; ".join(problems))
        if n == 0:
            return
        seen: dict[tuple[int, int, int], int] = {}
        for i, key in enumerate(zip(self.service.tolist(), self.age_class.tolist(), self.month.tolist())):
            if key in seen:
                problems.append(f"row {i + 1}: duplicate key (service, age_class, month)={key} first seen at row {seen[key]}")
            else:
                seen[key] = i + 1
        if problems:
            raise DataError("; ".join(problems))
        A, T = self.n_ages, self.n_months
        for s in np.unique(self.service):
            have = int(np.sum(self.service == s))
            if have != A * T:
                raise DataError(f"service {s}: expected a dense grid of {A} age classes x {T} months, found {have} rows")

    @property
    def n_records(self) -> int:
        return len(self.service)

    @property
    def n_ages(self) -> int:
        return int(self.age_class.max()) if self.n_records else 0

    @property
    def n_months(self) -> int:
        return int(self.month.max()) if self.n_records else 0

    @property
    def services(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.service))

    @classmethod
    def empty(cls) -> "PortfolioData":
        return cls([], [], [], [], [], [])

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "PortfolioData":
        recs = list(records)
        keys = ("service", "age_class", "month", "n_claims", "claim_total", "population")
        return cls(*[[r[k] for r in recs] for k in keys])

    def records(self) -> list[dict]:
        return [
            dict(service=int(s), age_class=int(a), month=int(t), n_claims=int(n), claim_total=float(x), population=int(p))
            for s, a, t, n, x, p in zip(
                self.service, self.age_class, self.month, self.n_claims, self.claim_total, self.population
            )
        ]

    def subset(self, service: int) -> "PortfolioData":
        m = self.service == service
        return PortfolioData(
            self.service[m], self.age_class[m], self.month[m], self.n_claims[m], self.claim_total[m], self.population[m]
        )

    def take(self, order) -> "PortfolioData":
        order = np.asarray(order)
        return PortfolioData(
            self.service[order],
            self.age_class[order],
            self.month[order],
            self.n_claims[order],
            self.claim_total[order],
            self.population[order],
        )

    @staticmethod
    def concat(parts: Iterable["PortfolioData"]) -> "PortfolioData":
        parts = list(parts)
        return PortfolioData(
            *[np.concatenate([getattr(p, c) for p in parts]) for c in
              ("service", "age_class", "month", "n_claims", "claim_total", "population")]
        )


@dataclass
class ParameterState:
    """Per-age-class parameters plus hyperparameters, natural scale.

    ``nu`` is present only for LogT sizes and ``delta`` only for negative
    binomial counts; ``hyper`` holds the (a, b) pairs of the active blocks.
    """

    lambda_: np.ndarray
    theta: np.ndarray
    nu: np.ndarray | None = None
    delta: np.ndarray | None = None
    hyper: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.lambda_ = np.atleast_1d(np.asarray(self.lambda_, dtype=float))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if self.nu is not None:
            self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if self.delta is not None:
            self.delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        self.hyper = {k: float(v) for k, v in self.hyper.items()}
        for k in self.hyper:
            if k not in HYPER_NAMES:
                raise DomainError(f"unknown hyperparameter {k!r}")
        for name in BLOCKS:
            v = self.block(name)
            if v is not None and (not np.all(np.isfinite(v)) or not np.all(v > 0)):
                raise DomainError(f"{name} must be strictly positive, got {v}")
        for k, v in self.hyper.items():
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"hyperparameter {k} must be strictly positive, got {v}")

    def block(self, name: str) -> np.ndarray | None:
        return self.lambda_ if name == "lambda" else getattr(self, name)

    @property
    def n_ages(self) -> int:
        return len(self.lambda_)

    def check_spec(self, spec: ModelSpec) -> None:
        if (self.nu is not None) != spec.has_nu:
            raise DomainError(f"nu must be {'present' if spec.has_nu else 'absent'} for {spec.name}")
        if (self.delta is not None) != spec.has_delta:
            raise DomainError(f"delta must be {'present' if spec.has_delta else 'absent'} for {spec.name}")
        for name in spec.blocks:
            if len(self.block(name)) != self.n_ages:
                raise DomainError(f"{name} has {len(self.block(name))} entries, expected {self.n_ages}")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperprior selection.

    ``family`` applies to every block unless ``overrides`` names another
    family for that block. ``fixed`` pins hyperparameters (e.g.
    ``{"a_lambda": 2.0}``); pinned values are constants, not sampled.
    """

    family: str = "gamma"
    overrides: Mapping[str, str] = field(default_factory=dict)
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for fam in [self.family, *self.overrides.values()]:
            if fam not in HYPERPRIOR_FAMILIES:
                raise ValueError(f"unknown hyperprior family {fam!r}; expected one of {HYPERPRIOR_FAMILIES}")
        for blk in self.overrides:
            if blk not in BLOCKS:
                raise ValueError(f"unknown parameter block {blk!r}")
        for k, v in self.fixed.items():
            if k not in HYPER_NAMES:
                raise ValueError(f"unknown hyperparameter {k!r}")
            if not v > 0:
                raise ValueError(f"pinned hyperparameter {k} must be positive")

    def family_for(self, block: str) -> str:
        return self.overrides.get(block, self.family)


def _hyper_log_density(h: float, family: str) -> float:
    if family == "gamma":
        return log_pdf_gamma(h, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE)
    return log_pdf_half_cauchy(h)


def pointwise_log_likelihood(data: PortfolioData, spec: ModelSpec, lambda_, theta, nu=None, delta=None) -> np.ndarray:
    """Per-cell log likelihood.

    Parameter blocks have shape ``(..., n_ages)``; the result has shape
    ``(..., n_records)``, so a stack of posterior draws is scored at once.
    """
    a = data.age_class - 1
    n = data.n_claims.astype(float)
    lam = np.asarray(lambda_, dtype=float)
    out = np.zeros(lam.shape[:-1] + (data.n_records,))
    if data.n_records == 0:
        return out
    mean = lam[..., a] * data.population
    if spec.has_delta:
        out += log_pmf_negbinomial(n, mean, np.asarray(delta, dtype=float)[..., a])
    else:
        out += log_pmf_poisson(n, mean)

    pos = data.n_claims > 0
    if np.any(pos):
        n_pos, x_pos, a_pos = n[pos], data.claim_total[pos], a[pos]
        th = np.asarray(theta, dtype=float)[..., a_pos]
        if spec.size_family is SizeFamily.GAMMA:
            out[..., pos] += log_pdf_gamma(x_pos, n_pos, th)
        else:
            mu, sigma2 = moment_match(n_pos, th)
            if spec.size_family is SizeFamily.LOGNORMAL:
                out[..., pos] += log_pdf_lognormal(x_pos, mu, sigma2)
            else:
                out[..., pos] += log_pdf_log_t(x_pos, mu, sigma2, np.asarray(nu, dtype=float)[..., a_pos])
    return out


def log_likelihood(data: PortfolioData, params: ParameterState, spec: ModelSpec) -> float:
    """Sum over cells of the count log mass plus, where n > 0, the size log density."""
    params.check_spec(spec)
    if data.n_records == 0:
        return 0.0
    if data.n_ages > params.n_ages:
        raise DomainError(f"data has {data.n_ages} age classes but parameters cover {params.n_ages}")
    return float(np.sum(pointwise_log_likelihood(data, spec, params.lambda_, params.theta, params.nu, params.delta)))


def log_prior(params: ParameterState, prior: PriorConfig) -> float:
    """Gamma(a, b) priors on every per-class block plus hyperpriors on the free (a, b)."""
    lp = 0.0
    for blk in BLOCKS:
        values = params.block(blk)
        if values is None:
            continue
        ka, kb = f"a_{blk}", f"b_{blk}"
        try:
            a = prior.fixed[ka] if ka in prior.fixed else params.hyper[ka]
            b = prior.fixed[kb] if kb in prior.fixed else params.hyper[kb]
        except KeyError as exc:
            raise DomainError(f"missing hyperparameter {exc.args[0]}") from None
        lp += float(np.sum(log_pdf_gamma(values, a, b)))
        fam = prior.family_for(blk)
        for key, h in ((ka, a), (kb, b)):
            if key not in prior.fixed:
                lp += _hyper_log_density(h, fam)
    return lp


def log_posterior(data: PortfolioData, params: ParameterState, spec: ModelSpec, prior: PriorConfig) -> float:
    return log_likelihood(data, params, spec) + log_prior(params, prior)


class ParamLayout:
    """Flat ordering of the free parameters of a model.

    Order: per-class blocks (lambda, theta, [nu], [delta]) each of length
    ``n_ages``, then the free hyperparameters in :data:`HYPER_NAMES` order.
    """

    def __init__(self, spec: ModelSpec, n_ages: int, prior: PriorConfig | None = None):
        self.spec = spec
        self.n_ages = n_ages
        self.prior = prior or PriorConfig()
        self.blocks = spec.blocks
        self.block_slices: dict[str, slice] = {}
        names: list[str] = []
        for i, blk in enumerate(self.blocks):
            self.block_slices[blk] = slice(i * n_ages, (i + 1) * n_ages)
            names += [f"{blk}[{a + 1}]" for a in range(n_ages)]
        self.hyper_index: dict[str, int] = {}
        for key in HYPER_NAMES:
            if key.split("_", 1)[1] in self.blocks and key not in self.prior.fixed:
                self.hyper_index[key] = len(names)
                names.append(key)
        self.names = names

    @property
    def dim(self) -> int:
        return len(self.names)

    def to_vector(self, params: ParameterState) -> np.ndarray:
        params.check_spec(self.spec)
        out = np.empty(self.dim)
        for blk, sl in self.block_slices.items():
            out[sl] = params.block(blk)
        for key, i in self.hyper_index.items():
            out[i] = params.hyper[key]
        return out

    def from_vector(self, vec) -> ParameterState:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {vec.shape}")
        blocks = {blk: vec[sl].copy() for blk, sl in self.block_slices.items()}
        hyper = {key: float(vec[i]) for key, i in self.hyper_index.items()}
        for key, v in self.prior.fixed.items():
            if key.split("_", 1)[1] in self.blocks:
                hyper[key] = float(v)
        return ParameterState(
            blocks["lambda"], blocks["theta"], blocks.get("nu"), blocks.get("delta"), hyper
        )
