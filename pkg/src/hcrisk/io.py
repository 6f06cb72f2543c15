"""File formats: portfolios, posterior draws, reports and plot data.

Every payload is plain comma-separated text with floats written by
``repr`` (shortest round-trip form), so identical inputs give identical
bytes and every file re-parses to the exact values it was written from.
Wall-clock metadata goes to a ``<name>.meta.json`` sidecar, never into the
payload itself.

Draw files
----------
Line 1 is ``# hcrisk-draws v1``; the next lines are ``# key=value`` headers
(``model``, ``n_ages``, ``prior`` as JSON, ``chains``, ``iterations``,
``parameters`` as a comma list). Then a CSV header
``chain,iteration,log_post,<parameters...>`` and one row per retained draw,
chains in order, iterations 0-based.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import platform
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from .inference import ChainDraws
from .model import DataError, PortfolioData, PriorConfig
from .risk import RiskReport

PORTFOLIO_COLUMNS = ("service", "age_class", "month", "n_claims", "claim_total", "population")
DRAWS_MAGIC = "# hcrisk-draws v1"
PLOT_KINDS = ("premium_box", "var_curve", "tvar_curve", "cv_curve")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------- portfolios


def load_portfolio(path) -> PortfolioData:
    """Read a portfolio CSV; problems are reported with data-row numbers.

    Claim totals are parsed as decimal strings and then converted to the
    nearest binary double.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if tuple(header) != PORTFOLIO_COLUMNS:
        raise DataError(f"{path}: header must be {','.join(PORTFOLIO_COLUMNS)}, got {','.join(header)}")
    cols: list[list] = [[] for _ in PORTFOLIO_COLUMNS]
    problems = []
    for r, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(PORTFOLIO_COLUMNS):
            problems.append(f"row {r}: expected {len(PORTFOLIO_COLUMNS)} fields, got {len(row)}")
            continue
        try:
            vals = [int(row[i]) for i in (0, 1, 2, 3)]
            total = float(Decimal(row[4].strip()))
            pop = int(row[5])
        except (ValueError, InvalidOperation):
            problems.append(f"row {r}: non-numeric field in {row}")
            continue
        for c, v in zip(cols, [*vals, total, pop]):
            c.append(v)
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    try:
        return PortfolioData(*cols)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_portfolio(data: PortfolioData, path) -> Path:
    rows = [",".join(PORTFOLIO_COLUMNS)]
    for rec in data.records():
        rows.append(",".join(_fmt(rec[c]) for c in PORTFOLIO_COLUMNS))
    return _write_text(path, "\n".join(rows) + "\n")


# ---------------------------------------------------------------- draws


def _prior_json(prior: PriorConfig) -> str:
    return json.dumps(
        {"family": prior.family, "overrides": dict(prior.overrides), "fixed": dict(prior.fixed)}, sort_keys=True
    )


def write_draws(draws: ChainDraws, path) -> Path:
    C, N, P = draws.draws.shape
    out = [
        DRAWS_MAGIC,
        f"# model={draws.model}",
        f"# n_ages={draws.n_ages}",
        f"# prior={_prior_json(draws.prior)}",
        f"# chains={C}",
        f"# iterations={N}",
        f"# parameters={','.join(draws.names)}",
        ",".join(["chain", "iteration", "log_post", *draws.names]),
    ]
    for c in range(C):
        for i in range(N):
            vals = [repr(float(v)) for v in draws.draws[c, i]]
            out.append(",".join([str(c), str(i), repr(float(draws.log_post[c, i])), *vals]))
    return _write_text(path, "\n".join(out) + "\n")


def read_draws(path) -> ChainDraws:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != DRAWS_MAGIC:
        raise FormatError(f"{path}: not a draws file (expected first line {DRAWS_MAGIC!r})")
    meta = {}
    k = 1
    while k < len(lines) and lines[k].startswith("# "):
        key, _, value = lines[k][2:].partition("=")
        meta[key] = value
        k += 1
    try:
        names = meta["parameters"].split(",")
        C, N = int(meta["chains"]), int(meta["iterations"])
        prior_d = json.loads(meta["prior"])
        prior = PriorConfig(prior_d["family"], prior_d["overrides"], prior_d["fixed"])
        model, n_ages = meta["model"], int(meta["n_ages"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    if lines[k].split(",") != ["chain", "iteration", "log_post", *names]:
        raise FormatError(f"{path}: column header does not match the parameter manifest")
    body = lines[k + 1:]
    if len(body) != C * N:
        raise FormatError(f"{path}: expected {C * N} rows, found {len(body)}")
    arr = np.array([[float(v) for v in row.split(",")] for row in body]) if body else np.empty((0, len(names) + 3))
    arr = arr.reshape(C, N, len(names) + 3)
    return ChainDraws(arr[:, :, 3:], arr[:, :, 2], names, model, n_ages, prior)


# ---------------------------------------------------------------- tables


def write_table(rows: list[dict], path, columns=None) -> Path:
    """CSV with a header; ``columns`` fixes order (default: keys of the first row)."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    out = [",".join(columns)]
    for row in rows:
        out.append(",".join(_fmt(row[c]) for c in columns))
    return _write_text(path, "\n".join(out) + "\n")


def _parse(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v in ("true", "false"):
        return v == "true"
    return v


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{k: _parse(v) for k, v in row.items()} for row in reader]


def write_json(obj, path) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_metadata(payload_path, **info) -> Path:
    """Sidecar ``<payload>.meta.json`` with the wall-clock time and platform."""
    payload_path = Path(payload_path)
    meta = dict(
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        python=platform.python_version(),
        payload=payload_path.name,
        **info,
    )
    return write_json(meta, payload_path.with_name(payload_path.name + ".meta.json"))


# ---------------------------------------------------------------- plot data

_PLOT_COLUMNS = {
    "premium_box": ("model", "age_class", "sample", "r"),
    "var_curve": ("model", "age_class", "tau", "var"),
    "tvar_curve": ("model", "age_class", "tau", "tvar"),
    "cv_curve": ("model", "age_class", "month", "cv"),
}


def _plot_rows(report: RiskReport, kind: str):
    for model in report.models:
        if kind == "premium_box" and model in report.samples:
            s = report.samples[model]
            for a in range(s.shape[1]):
                for i in range(s.shape[0]):
                    yield model, a + 1, i, s[i, a]
        elif kind in ("var_curve", "tvar_curve"):
            curves = (report.var if kind == "var_curve" else report.tvar).get(model)
            if curves is None:
                continue
            for a in range(curves.shape[0]):
                for j, tau in enumerate(report.taus):
                    yield model, a + 1, tau, curves[a, j]
        elif kind == "cv_curve" and model in report.cv:
            cv = report.cv[model]
            for a in range(cv.shape[0]):
                for t in range(cv.shape[1]):
                    yield model, a + 1, t + 1, cv[a, t]


def emit_plot_data(report: RiskReport, kind: str, path) -> Path:
    """Long-format CSV of one plot type; an empty report gives a header-only file."""
    if kind not in _PLOT_COLUMNS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    lines = [",".join(_PLOT_COLUMNS[kind])]
    lines += [",".join(_fmt(v) for v in row) for row in _plot_rows(report, kind)]
    return _write_text(path, "\n".join(lines) + "\n")


def read_plot_data(path) -> dict[str, np.ndarray]:
    """Columns of a plot-data file; ``model`` as strings, the rest numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        if name == "model":
            out[name] = np.array(col, dtype=object)
        elif name in ("age_class", "sample", "month"):
            out[name] = np.array(col, dtype=np.int64)
        else:
            out[name] = np.array(col, dtype=float)
    return out
