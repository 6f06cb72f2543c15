"""Simulation-recovery study for the LT-NB model.

Datasets are generated from M6 with per-class parameters drawn from Gamma
priors at known hyperparameters, refitted, and scored by the mean relative
bias and mean squared error of the hyperparameter posterior means, and by
how often the fitted premium is exceeded by a realization from the truth.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .inference import SamplerConfig, compute_diagnostics, run_chains
from .model import ModelSpec, ParameterState, PortfolioData, PriorConfig
from .risk import PredictiveConfig, draw_predictive, premium, simulate_claims

logger = logging.getLogger(__name__)

# true hyperparameters of the recovery study
TRUE_HYPER = {
    "a_lambda": 2.85,
    "b_lambda": 5.62,
    "a_delta": 12.37,
    "b_delta": 3.71,
    "a_theta": 1.11,
    "b_theta": 11.11,
    "a_nu": 10.12,
    "b_nu": 3.35,
}
HYPER_ORDER = ("a_lambda", "b_lambda", "a_delta", "b_delta", "a_theta", "b_theta", "a_nu", "b_nu")
M6 = ModelSpec.from_name("M6")


def hyper_from_mean_precision(mean: float, precision: float) -> tuple[float, float]:
    """Gamma (shape, rate) with the given mean and precision (1/variance)."""
    if not (mean > 0 and precision > 0):
        raise ValueError("mean and precision must be positive")
    beta = precision * mean
    return mean * beta, beta


def default_populations() -> np.ndarray:
    """Bundled 7 x 12 exposure table (age class by month)."""
    text = resources.files("hcrisk.data").joinpath("exposure_7x12.csv").read_text()
    rows = np.loadtxt(text.splitlines()[1:], delimiter=",", dtype=np.int64)
    A, T = rows[:, 0].max(), rows[:, 1].max()
    out = np.zeros((A, T), dtype=np.int64)
    out[rows[:, 0] - 1, rows[:, 1] - 1] = rows[:, 2]
    return out


def draw_truth(true_hyper, n_ages: int, rng) -> ParameterState:
    rng = np.random.default_rng(rng)
    blocks = {}
    for blk in ("lambda", "theta", "nu", "delta"):
        a, b = true_hyper[f"a_{blk}"], true_hyper[f"b_{blk}"]
        blocks[blk] = rng.gamma(a, 1.0 / b, size=n_ages)
        # keep strictly positive in floating point
        blocks[blk] = np.maximum(blocks[blk], 1e-12)
    return ParameterState(blocks["lambda"], blocks["theta"], blocks["nu"], blocks["delta"], dict(true_hyper))


def simulate_portfolio(params: ParameterState, populations: np.ndarray, rng, spec: ModelSpec = M6,
                       service: int = 1) -> PortfolioData:
    rng = np.random.default_rng(rng)
    populations = np.asarray(populations)
    A, T = populations.shape
    mean = params.lambda_[:, None] * populations
    n, x = simulate_claims(
        spec,
        mean,
        params.theta[:, None],
        None if params.nu is None else params.nu[:, None],
        None if params.delta is None else params.delta[:, None],
        rng,
    )
    ages, months = np.meshgrid(np.arange(1, A + 1), np.arange(1, T + 1), indexing="ij")
    return PortfolioData(
        np.full(A * T, service), ages.ravel(), months.ravel(), n.ravel(), x.ravel(), populations.ravel()
    )


def generate_dataset(true_hyper=None, populations=None, seed=0, return_truth: bool = False):
    """One M6 dataset; deterministic in ``seed``."""
    true_hyper = TRUE_HYPER if true_hyper is None else true_hyper
    populations = default_populations() if populations is None else np.asarray(populations)
    rng = np.random.default_rng(seed)
    truth = draw_truth(true_hyper, populations.shape[0], rng)
    data = simulate_portfolio(truth, populations, rng)
    return (data, truth) if return_truth else data


def synthetic_portfolio(n_services: int = 3, true_hyper=None, populations=None, seed: int = 2023) -> PortfolioData:
    """Several services sharing one exposure table, each with its own M6 truth."""
    true_hyper = TRUE_HYPER if true_hyper is None else true_hyper
    populations = default_populations() if populations is None else np.asarray(populations)
    parts = []
    for s, ss in enumerate(np.random.SeedSequence(seed).spawn(n_services), start=1):
        rng = np.random.default_rng(ss)
        truth = draw_truth(true_hyper, populations.shape[0], rng)
        parts.append(simulate_portfolio(truth, populations, rng, service=s))
    return PortfolioData.concat(parts)


def bundled_portfolio_path():
    """Path of the bundled 3-service portfolio CSV."""
    return resources.files("hcrisk.data").joinpath("portfolio_3x7x12.csv")


@dataclass
class StudyConfig:
    n_datasets: int = 30
    true_hyper: dict = field(default_factory=lambda: dict(TRUE_HYPER))
    populations: np.ndarray | None = None
    fit_config: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_chains=3, n_iterations=2000, n_burnin=1000))
    seed: int = 2024
    horizon: int = 12
    quantile_level: float = 0.95
    rhat_threshold: float = 1.1
    prior: PriorConfig = field(default_factory=PriorConfig)
    checkpoint: Path | None = None

    def __post_init__(self):
        if self.n_datasets < 2:
            raise ValueError("a study needs at least two datasets")
        if self.populations is None:
            self.populations = default_populations()
        self.populations = np.asarray(self.populations)
        if np.any(self.populations < 1):
            raise ValueError("populations must be strictly positive")


@dataclass
class StudyReport:
    true_hyper: dict
    mrb_percent: dict
    mse_percent: dict
    u_a_percent: list
    n_used: int
    n_excluded: int
    datasets: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def mrb_mse(estimates, truth: float) -> tuple[float, float]:
    """Mean relative bias and mean squared error, both times 100."""
    est = np.asarray(estimates, dtype=float)
    mrb = 100.0 * float(np.mean(est - truth)) / truth
    mse = 100.0 * float(np.mean((est - truth) ** 2))
    return mrb, mse


def _future_population(populations: np.ndarray) -> dict[int, int]:
    return {a + 1: int(populations[a, -1]) for a in range(populations.shape[0])}


def fit_one(index: int, cfg: StudyConfig) -> dict:
    """Generate, fit and score dataset ``index``; the result is JSON-serializable."""
    ss = np.random.SeedSequence([cfg.seed, index])
    data_ss, fit_ss, pred_ss, real_ss = ss.spawn(4)
    data, truth = generate_dataset(cfg.true_hyper, cfg.populations, np.random.default_rng(data_ss), return_truth=True)
    fit_seed = int(fit_ss.generate_state(1, dtype=np.uint64)[0])
    sampler = SamplerConfig(**{**asdict(cfg.fit_config), "seed": fit_seed})
    t0 = time.perf_counter()
    record = dict(index=index, status="ok", retried=False)
    try:
        draws = run_chains(data, M6, cfg.prior, sampler)
        max_rhat = float(np.max(compute_diagnostics(draws).rhat))
        if max_rhat > cfg.rhat_threshold:
            record["retried"] = True
            sampler = SamplerConfig(**{**asdict(sampler), "n_iterations": 2 * sampler.n_iterations,
                                       "n_burnin": 2 * sampler.n_burnin})
            draws = run_chains(data, M6, cfg.prior, sampler)
            max_rhat = float(np.max(compute_diagnostics(draws).rhat))
    except Exception as exc:  # recorded, never silently dropped
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return record
    record["max_rhat"] = max_rhat
    if max_rhat > cfg.rhat_threshold:
        record["status"] = "not_converged"
    flat = draws.flat()
    record["hyper_mean"] = {k: float(flat[:, draws.names.index(k)].mean()) for k in HYPER_ORDER}

    pred_cfg = PredictiveConfig(cfg.horizon, _future_population(cfg.populations), quantile_level=cfg.quantile_level)
    prem = premium(draw_predictive(draws, M6, pred_cfg, np.random.default_rng(pred_ss)), cfg.quantile_level)
    pops = pred_cfg.population_matrix(cfg.populations.shape[0])
    rng_real = np.random.default_rng(real_ss)
    total = np.zeros(cfg.populations.shape[0])
    for h in range(cfg.horizon):
        _, x = simulate_claims(M6, truth.lambda_ * pops[:, h], truth.theta, truth.nu, truth.delta, rng_real)
        total += x
    realized = total / pops[:, -1]
    record["premium"] = prem.tolist()
    record["realized"] = realized.tolist()
    record["exceeded"] = [bool(v) for v in realized > prem]
    record["seconds"] = round(time.perf_counter() - t0, 3)
    return record


def _load_checkpoint(path: Path) -> dict[int, dict]:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["index"]] = rec
    return done


def summarize(records: list[dict], true_hyper: dict, n_ages: int) -> StudyReport:
    used = [r for r in records if r["status"] == "ok"]
    mrb, mse = {}, {}
    for k in HYPER_ORDER:
        if used:
            mrb[k], mse[k] = mrb_mse([r["hyper_mean"][k] for r in used], true_hyper[k])
        else:
            mrb[k] = mse[k] = float("nan")
    if used:
        exceeded = np.array([r["exceeded"] for r in used], dtype=float)
        u_a = (100.0 * exceeded.mean(axis=0)).tolist()
    else:
        u_a = [float("nan")] * n_ages
    return StudyReport(dict(true_hyper), mrb, mse, u_a, len(used), len(records) - len(used),
                       sorted(records, key=lambda r: r["index"]))


def run_study(cfg: StudyConfig, progress=None) -> StudyReport:
    """Run (or resume) the study; per-dataset results go to ``cfg.checkpoint`` as JSON lines."""
    done = _load_checkpoint(Path(cfg.checkpoint)) if cfg.checkpoint else {}
    records = []
    for s in range(cfg.n_datasets):
        if s in done:
            records.append(done[s])
            continue
        rec = fit_one(s, cfg)
        records.append(rec)
        if cfg.checkpoint:
            with open(cfg.checkpoint, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if progress is not None:
            progress(rec)
        logger.info("dataset %d: %s (%.1fs)", s, rec["status"], rec.get("seconds", 0.0))
    return summarize(records, cfg.true_hyper, cfg.populations.shape[0])
