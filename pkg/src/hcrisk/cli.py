"""Command-line entry point: ``hcrisk <verb> [options]``.

Verbs: fit, compare, premium, risk, simulate, diagnose. Exit status is 0 on
success, 2 for configuration errors, 3 for data errors and 4 when a fit
fails or does not converge (outputs are still written in the latter case).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as hio
from .inference import (
    ChainDraws,
    InsufficientDrawsError,
    SamplerConfig,
    SamplerError,
    compute_diagnostics,
    run_chains,
)
from .model import MODEL_MENU, DataError, ModelSpec, PortfolioData, PriorConfig
from .risk import PredictiveConfig, RiskReport, draw_predictive, monthly_cv
from .selection import compare_models

logger = logging.getLogger("hcrisk")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4

VERBS = ("fit", "compare", "premium", "risk", "simulate", "diagnose")


class ConfigError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def parse_tau_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive) or a comma list, all inside (0, 1)."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(round((stop - start) / step)) + 1
            taus = np.round(start + step * np.arange(n), 12)
        else:
            taus = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"cannot parse tau grid {text!r}") from None
    if taus.size == 0 or np.any((taus <= 0) | (taus >= 1)):
        raise ConfigError("tau grid values must lie strictly between 0 and 1")
    return taus


@dataclass
class RunConfig:
    verb: str
    models: list[str]
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    horizon: int = 12
    input: Path | None = None
    out: Path = Path("hcrisk-out")
    draws_dir: Path | None = None
    pooled: bool = False
    taus: np.ndarray = field(default_factory=lambda: parse_tau_grid("0.01:0.99:0.01"))
    rhat_max: float = 1.1
    n_datasets: int = 30
    resume: bool = False

    def validate(self) -> None:
        bad = [m for m in self.models if m not in MODEL_MENU]
        if bad or not self.models:
            raise ConfigError(f"unknown model(s) {bad}; choose from {sorted(MODEL_MENU)} or 'all'")
        if self.verb != "simulate":
            if self.input is None:
                raise ConfigError(f"{self.verb} needs --input")
            if not self.input.is_file():
                raise ConfigError(f"input file {self.input} does not exist")
        if self.draws_dir is not None and not self.draws_dir.is_dir():
            raise ConfigError(f"draws directory {self.draws_dir} does not exist")
        if self.horizon < 1:
            raise ConfigError("--horizon must be positive")


def _parse_models(text: str) -> list[str]:
    if text.strip().lower() == "all":
        return sorted(MODEL_MENU)
    return [m.strip().upper() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="M6", help="M1..M6, a comma list, or 'all'")
    common.add_argument("--input", type=Path, help="portfolio CSV")
    common.add_argument("--out", type=Path, default=Path("hcrisk-out"), help="output directory")
    common.add_argument("--seed", type=int, default=20240601)
    common.add_argument("--chains", type=int, default=3)
    common.add_argument("--iters", type=int, default=4000, help="iterations per chain, burn-in included")
    common.add_argument("--burnin", type=int, default=2000)
    common.add_argument("--horizon", type=int, default=12, help="planning horizon in months")
    common.add_argument("--tau-grid", default="0.01:0.99:0.01", help="start:stop:step or a comma list")
    common.add_argument("--prior", choices=("gamma", "half-cauchy"), default="gamma")
    common.add_argument("--datasets", type=int, default=30, help="number of simulated datasets (simulate)")
    common.add_argument("--resume", action="store_true", help="continue a checkpointed study (simulate)")
    common.add_argument("--pooled", action="store_true", help="sum services into one portfolio before fitting")
    common.add_argument("--draws-dir", type=Path, help="reuse draw files written by 'fit'")
    common.add_argument("--rhat-max", type=float, default=1.1, help="convergence threshold for exit status 4")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="hcrisk", description="Hierarchical collective-risk models for health claims.")
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "fit": "sample posteriors and write draws plus diagnostics",
        "compare": "DIC and CRPS for several models",
        "premium": "per-age-class premiums with 2.5%%/97.5%% bands",
        "risk": "VaR/TVaR curves over a tau grid and CV by month",
        "simulate": "simulation-recovery study",
        "diagnose": "R-hat, ESS and Geweke tables",
    }
    for verb in VERBS:
        sub.add_parser(verb, parents=[common], help=helps[verb])
    return parser


def config_from_args(args) -> RunConfig:
    try:
        sampler = SamplerConfig(n_chains=args.chains, n_iterations=args.iters, n_burnin=args.burnin, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(
        verb=args.verb,
        models=_parse_models(args.model),
        prior=PriorConfig(family=args.prior),
        sampler=sampler,
        horizon=args.horizon,
        input=args.input,
        out=args.out,
        draws_dir=args.draws_dir,
        pooled=args.pooled,
        taus=parse_tau_grid(args.tau_grid),
        rhat_max=args.rhat_max,
        n_datasets=args.datasets,
        resume=args.resume,
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- helpers


def pool_services(data: PortfolioData) -> PortfolioData:
    """One service holding summed claims; the population is the largest across services."""
    if len(data.services) <= 1:
        return data
    keys = sorted({(a, t) for a, t in zip(data.age_class.tolist(), data.month.tolist())})
    index = {k: i for i, k in enumerate(keys)}
    rows = np.array([index[(a, t)] for a, t in zip(data.age_class.tolist(), data.month.tolist())])
    m = len(keys)
    n = np.bincount(rows, data.n_claims, minlength=m).astype(np.int64)
    x = np.bincount(rows, data.claim_total, minlength=m)
    pop = np.zeros(m, dtype=np.int64)
    np.maximum.at(pop, rows, data.population)
    a, t = np.array(keys).T
    return PortfolioData(np.ones(m, dtype=np.int64), a, t, n, x, pop)


def future_population(data: PortfolioData) -> dict[int, int]:
    """Last observed month's population per age class (largest across services)."""
    last = data.month == data.n_months
    out: dict[int, int] = {}
    for a, p in zip(data.age_class[last].tolist(), data.population[last].tolist()):
        out[a] = max(out.get(a, 0), p)
    return out


def population_matrix(data: PortfolioData) -> np.ndarray:
    """``(n_ages, n_months)`` populations, largest across services."""
    out = np.zeros((data.n_ages, data.n_months))
    np.maximum.at(out, (data.age_class - 1, data.month - 1), data.population)
    return out


def _fit_seed(seed: int, model: str, service: int) -> int:
    return int(np.random.SeedSequence([seed, int(model[1:]), service]).generate_state(1, dtype=np.uint64)[0])


def _draws_name(model: str, service: int) -> str:
    return f"draws_{model}_service{service}.csv"


def _load_data(cfg: RunConfig) -> PortfolioData:
    data = hio.load_portfolio(cfg.input)
    if data.n_records == 0:
        raise DataError(f"{cfg.input}: no data rows")
    return pool_services(data) if cfg.pooled else data


def _fits(cfg: RunConfig, data: PortfolioData) -> dict[str, dict[int, ChainDraws]]:
    """Per model, per service posterior draws: read from ``draws_dir`` or sampled now."""
    out: dict[str, dict[int, ChainDraws]] = {}
    for model in cfg.models:
        out[model] = {}
        for s in data.services:
            if cfg.draws_dir is not None:
                path = cfg.draws_dir / _draws_name(model, s)
                if not path.is_file():
                    raise ConfigError(f"missing draw file {path}")
                draws = hio.read_draws(path)
            else:
                sampler = replace(cfg.sampler, seed=_fit_seed(cfg.sampler.seed, model, s))
                logger.info("fitting %s on service %d", model, s)
                draws = run_chains(data.subset(s), ModelSpec.from_name(model), cfg.prior, sampler, n_ages=data.n_ages)
            out[model][s] = draws
    return out


def _diagnostics_rows(draws: ChainDraws):
    try:
        return compute_diagnostics(draws)
    except InsufficientDrawsError as exc:
        logger.warning("%s: diagnostics skipped (%s)", draws.model, exc)
        return None


def _check_convergence(cfg: RunConfig, fits) -> list[str]:
    bad = []
    for model, per in fits.items():
        for s, draws in per.items():
            diag = _diagnostics_rows(draws)
            if diag is not None and np.max(diag.rhat) > cfg.rhat_max:
                bad.append(f"{model}/service {s}: max R-hat {np.max(diag.rhat):.3f}")
    return bad


def _meta(cfg: RunConfig) -> dict:
    return dict(
        verb=cfg.verb,
        models=cfg.models,
        input=str(cfg.input) if cfg.input else None,
        seed=cfg.sampler.seed,
        chains=cfg.sampler.n_chains,
        iterations=cfg.sampler.n_iterations,
        burnin=cfg.sampler.n_burnin,
        prior=cfg.prior.family,
        pooled=cfg.pooled,
    )


def _predictive(cfg: RunConfig, data: PortfolioData, per_service, seed_offset: int):
    pred = PredictiveConfig(cfg.horizon, future_population(data))
    rng = np.random.default_rng([cfg.sampler.seed, seed_offset])
    return draw_predictive(per_service, None, pred, rng)


# ---------------------------------------------------------------- verbs


def cmd_fit(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    fits = _fits(cfg, data)
    for model, per in fits.items():
        for s, draws in per.items():
            path = hio.write_draws(draws, cfg.out / _draws_name(model, s))
            hio.write_metadata(path, **_meta(cfg), service=s,
                               sampler_stats=[{k: v for k, v in st.items() if k != "inv_mass"}
                                              for st in draws.accept_stats])
            diag = _diagnostics_rows(draws)
            if diag is not None:
                hio.write_table(diag.table(), cfg.out / f"diagnostics_{model}_service{s}.csv")
    return _convergence_status(cfg, fits)


def _convergence_status(cfg: RunConfig, fits) -> int:
    bad = _check_convergence(cfg, fits)
    for line in bad:
        print(f"not converged: {line}", file=sys.stderr)
    return EXIT_CONVERGENCE if bad else EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    fits = _fits(cfg, data)
    for model, per in fits.items():
        for s, draws in per.items():
            diag = _diagnostics_rows(draws)
            if diag is None:
                continue
            hio.write_table(diag.table(), cfg.out / f"diagnostics_{model}_service{s}.csv")
            names = diag.names
            corr_rows = [dict(parameter=names[i], **{names[j]: float(diag.correlation[i, j]) for j in range(len(names))})
                         for i in range(len(names))]
            hio.write_table(corr_rows, cfg.out / f"correlation_{model}_service{s}.csv")
            lag_rows = [dict(parameter=names[i], **{f"lag{k + 1}": float(v) for k, v in enumerate(diag.lag_autocorr[i])})
                        for i in range(len(names))]
            hio.write_table(lag_rows, cfg.out / f"autocorrelation_{model}_service{s}.csv")
    return _convergence_status(cfg, fits)


def cmd_compare(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    fits = _fits(cfg, data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = compare_models(fits, data, seed=cfg.sampler.seed)
    for w in caught:
        logger.warning("%s", w.message)
    cols = ["model", "d_bar", "d_at_mean", "p_d", "dic", "crps"]
    path = hio.write_table(report.records(), cfg.out / "compare.csv", columns=cols)
    hio.write_json(report.records(), cfg.out / "compare.json")
    hio.write_metadata(path, **_meta(cfg))
    return _convergence_status(cfg, fits)


def _risk_report(cfg: RunConfig, data: PortfolioData, fits, with_cv: bool) -> RiskReport:
    report = RiskReport(taus=cfg.taus)
    for model, per in fits.items():
        samples = _predictive(cfg, data, per, int(model[1:]))
        cv = None
        if with_cv:
            cv = monthly_cv(per, None, population_matrix(data), np.random.default_rng([cfg.sampler.seed, 100 + int(model[1:])]))
        report.add(model, samples, cv)
    return report


def cmd_premium(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    fits = _fits(cfg, data)
    report = _risk_report(cfg, data, fits, with_cv=False)
    for model in report.models:
        bands = report.premium[model]
        rows = [dict(age_class=a + 1, l_i=bands[a, 0], P=bands[a, 1], l_u=bands[a, 2]) for a in range(bands.shape[0])]
        path = hio.write_table(rows, cfg.out / f"premium_{model}.csv", columns=["age_class", "l_i", "P", "l_u"])
        hio.write_metadata(path, **_meta(cfg), horizon=cfg.horizon)
    hio.emit_plot_data(report, "premium_box", cfg.out / "premium_box.csv")
    return _convergence_status(cfg, fits)


def cmd_risk(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    fits = _fits(cfg, data)
    report = _risk_report(cfg, data, fits, with_cv=True)
    for model in report.models:
        rows = [
            dict(age_class=a + 1, tau=tau, var=report.var[model][a, j], tvar=report.tvar[model][a, j],
                 es=report.es[model][a, j])
            for a in range(report.var[model].shape[0])
            for j, tau in enumerate(report.taus)
        ]
        path = hio.write_table(rows, cfg.out / f"risk_{model}.csv", columns=["age_class", "tau", "var", "tvar", "es"])
        hio.write_metadata(path, **_meta(cfg), horizon=cfg.horizon)
    for kind in ("var_curve", "tvar_curve", "cv_curve"):
        hio.emit_plot_data(report, kind, cfg.out / f"{kind}.csv")
    return _convergence_status(cfg, fits)


def cmd_simulate(cfg: RunConfig) -> int:
    from .simulation import HYPER_ORDER, StudyConfig, run_study

    if cfg.models != ["M6"]:
        raise ConfigError("the recovery study generates and fits M6 only")
    cfg.out.mkdir(parents=True, exist_ok=True)
    checkpoint = cfg.out / "study_checkpoint.jsonl"
    if checkpoint.exists() and not cfg.resume:
        raise ConfigError(f"{checkpoint} exists; pass --resume to continue it or choose another --out")
    study = StudyConfig(n_datasets=cfg.n_datasets, fit_config=cfg.sampler, seed=cfg.sampler.seed,
                        horizon=cfg.horizon, prior=cfg.prior, checkpoint=checkpoint)

    def progress(rec):
        print(f"dataset {rec['index']}: {rec['status']}", file=sys.stderr)

    report = run_study(study, progress)
    hyper_rows = [dict(hyperparameter=k, true=report.true_hyper[k], mrb_percent=report.mrb_percent[k],
                       mse_percent=report.mse_percent[k]) for k in HYPER_ORDER]
    path = hio.write_table(hyper_rows, cfg.out / "study_recovery.csv")
    hio.write_table([dict(age_class=a + 1, u_a_percent=u) for a, u in enumerate(report.u_a_percent)],
                    cfg.out / "study_protection.csv")
    hio.write_json(report.__dict__, cfg.out / "study.json")
    hio.write_metadata(path, **_meta(cfg), n_used=report.n_used, n_excluded=report.n_excluded)
    return EXIT_OK if report.n_excluded == 0 else EXIT_CONVERGENCE


COMMANDS = {
    "fit": cmd_fit,
    "compare": cmd_compare,
    "premium": cmd_premium,
    "risk": cmd_risk,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.verb](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, hio.FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, ConvergenceError) as exc:
        print(f"sampler failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
