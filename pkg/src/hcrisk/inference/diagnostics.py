"""Convergence diagnostics for multi-chain draws.

Array-level functions take ``x`` with shape ``(chain, draw)``.
:func:`compute_diagnostics` applies them to the log of each parameter,
which is the space the sampler moves in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDrawsError(ValueError):
    pass


def _check(x, min_chains=1, min_draws=4):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] < min_chains or x.shape[1] < min_draws:
        raise InsufficientDrawsError(
            f"need at least {min_chains} chains of {min_draws} draws, got shape {x.shape}"
        )
    return x


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-D series at every lag (FFT)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def split_rhat(x) -> float:
    """Potential scale reduction after splitting every chain in half."""
    x = _check(x, min_chains=1, min_draws=4)
    half = x.shape[1] // 2
    parts = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = parts.shape[1]
    w = parts.var(axis=1, ddof=1).mean()
    b = n * parts.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def effective_sample_size(x) -> float:
    """Multi-chain ESS with Geyer's initial-positive-sequence truncation.

    Autocorrelations are summed in adjacent pairs and the sum stops at the
    first negative pair.
    """
    x = _check(x, min_chains=1, min_draws=4)
    m, n = x.shape
    acov = np.array([autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
        t += 2
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(min(m * n / tau, m * n * np.log10(m * n)))


def geweke_z(x, first: float = 0.1, last: float = 0.5) -> float:
    """Geweke z-score comparing the first 10% and last 50% of one chain."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 20:
        raise InsufficientDrawsError("Geweke diagnostic needs at least 20 draws")
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]

    def mc_var(seg):
        v = seg.var(ddof=1)
        return 0.0 if v == 0 else v / effective_sample_size(seg)

    denom = np.sqrt(mc_var(a) + mc_var(b))
    if denom == 0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


def lag_autocorrelation(x, max_lag: int = 20) -> np.ndarray:
    """Chain-averaged autocorrelation at lags 1..max_lag."""
    x = _check(x)
    rows = []
    for c in x:
        ac = autocovariance(c)
        rows.append(ac[1:max_lag + 1] / ac[0] if ac[0] > 0 else np.zeros(max_lag))
    return np.mean(rows, axis=0)


@dataclass
class Diagnostics:
    names: list[str]
    rhat: np.ndarray
    ess: np.ndarray
    geweke_z: np.ndarray
    lag_autocorr: np.ndarray
    correlation: np.ndarray

    def table(self) -> list[dict]:
        return [
            dict(parameter=name, rhat=float(self.rhat[i]), ess=float(self.ess[i]),
                 **{f"geweke_z_chain{c + 1}": float(z) for c, z in enumerate(self.geweke_z[i])},
                 autocorr_lag1=float(self.lag_autocorr[i, 0]))
            for i, name in enumerate(self.names)
        ]


def compute_diagnostics(draws, max_lag: int = 20) -> Diagnostics:
    arr = np.log(draws.draws)
    C, N, P = arr.shape
    if C < 2 or N < 100:
        raise InsufficientDrawsError(f"diagnostics need >= 2 chains of >= 100 draws, got {C} x {N}")
    rhat = np.array([split_rhat(arr[:, :, p]) for p in range(P)])
    ess = np.array([effective_sample_size(arr[:, :, p]) for p in range(P)])
    gz = np.array([[geweke_z(arr[c, :, p]) for c in range(C)] for p in range(P)])
    lag = np.array([lag_autocorrelation(arr[:, :, p], max_lag) for p in range(P)])
    corr = np.corrcoef(arr.reshape(-1, P), rowvar=False)
    return Diagnostics(list(draws.names), rhat, ess, gz, lag, np.atleast_2d(corr))
