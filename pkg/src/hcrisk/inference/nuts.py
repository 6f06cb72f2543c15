"""No-U-turn Hamiltonian transitions and warmup adaptation.

One transition is a single compiled call (numba) that builds the doubling
trajectory iteratively, with multinomial sampling inside subtrees, biased
progressive sampling across subtrees and the generalized no-U-turn check on
every sub-subtree. All randomness is drawn by the caller and passed in as
``p0`` and ``unif`` so that a chain is reproducible under either backend.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from .._accel import njit

_kernel = kernels.logp_grad

DIVERGENCE_THRESHOLD = 1000.0


def n_uniforms(max_depth: int) -> int:
    """Uniform draws consumed by one transition in the worst case."""
    return 2 * max_depth + (1 << max_depth)


@njit(cache=True, error_model="numpy")
def _is_turning(inv_mass, p_left, p_right, p_sum):
    s_left = 0.0
    s_right = 0.0
    for i in range(p_sum.shape[0]):
        centered = p_sum[i] - 0.5 * (p_left[i] + p_right[i])
        s_left += inv_mass[i] * p_left[i] * centered
        s_right += inv_mass[i] * p_right[i] * centered
    return s_left <= 0.0 or s_right <= 0.0


@njit(cache=True, error_model="numpy")
def _ckpt_range(leaf):
    # nonzero bits of leaf>>1 give the top checkpoint, trailing ones the span
    idx_max = 0
    k = leaf >> 1
    while k > 0:
        idx_max += k & 1
        k >>= 1
    span = 0
    k = leaf
    while k & 1:
        span += 1
        k >>= 1
    return idx_max - span + 1, idx_max


@njit(cache=True, error_model="numpy")
def _kinetic(inv_mass, p):
    s = 0.0
    for i in range(p.shape[0]):
        s += inv_mass[i] * p[i] * p[i]
    return 0.5 * s


@njit(cache=True, error_model="numpy")
def nuts_transition(z0, lp0, g0, eps, inv_mass, p0, unif, max_depth,
                    n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                    size_code, count_code, offs, ia, ib, fa, fb, fam, shear):
    """One NUTS transition from ``z0``.

    Returns ``(z, logp, grad, accept_stat, n_leapfrog, depth, divergent)``.
    """
    d = z0.shape[0]
    h0 = -lp0 + _kinetic(inv_mass, p0)

    z_left = z0.copy()
    p_left = p0.copy()
    g_left = g0.copy()
    z_right = z0.copy()
    p_right = p0.copy()
    g_right = g0.copy()

    z_out = z0.copy()
    g_out = g0.copy()
    lp_out = lp0

    z_cur = np.empty(d)
    p_cur = np.empty(d)
    g_cur = np.empty(d)
    z_sub = np.empty(d)
    g_sub = np.empty(d)
    lp_sub = 0.0
    sub_psum = np.empty(d)
    p_sum = p0.copy()
    ckpt_p = np.empty((max_depth + 1, d))
    ckpt_psum = np.empty((max_depth + 1, d))

    log_w = 0.0
    ui = 0
    sum_accept = 0.0
    n_leapfrog = 0
    divergent = False
    depth = 0

    while depth < max_depth:
        direction = 1.0 if unif[ui] < 0.5 else -1.0
        ui += 1
        if direction > 0:
            z_cur[:] = z_right
            p_cur[:] = p_right
            g_cur[:] = g_right
        else:
            z_cur[:] = z_left
            p_cur[:] = p_left
            g_cur[:] = g_left
        step = direction * eps

        sub_log_w = -np.inf
        sub_psum[:] = 0.0
        turning = False
        n_leaves = 1 << depth
        for leaf in range(n_leaves):
            for i in range(d):
                p_cur[i] += 0.5 * step * g_cur[i]
                z_cur[i] += step * inv_mass[i] * p_cur[i]
            lp = _kernel(z_cur, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                         size_code, count_code, offs, ia, ib, fa, fb, fam, shear, g_cur)
            for i in range(d):
                p_cur[i] += 0.5 * step * g_cur[i]
            n_leapfrog += 1

            h = -lp + _kinetic(inv_mass, p_cur)
            if not np.isfinite(h):
                h = np.inf
            dh = h - h0
            if dh > DIVERGENCE_THRESHOLD:
                divergent = True
                break
            sum_accept += math.exp(min(0.0, -dh))

            lw = -dh
            if sub_log_w == -np.inf:
                new_log_w = lw
            else:
                hi = max(sub_log_w, lw)
                new_log_w = hi + math.log(math.exp(sub_log_w - hi) + math.exp(lw - hi))
            if math.log(unif[ui]) < lw - new_log_w:
                z_sub[:] = z_cur
                g_sub[:] = g_cur
                lp_sub = lp
            ui += 1
            sub_log_w = new_log_w
            for i in range(d):
                sub_psum[i] += p_cur[i]

            if leaf % 2 == 0:
                k = leaf >> 1
                idx = 0
                while k > 0:
                    idx += k & 1
                    k >>= 1
                ckpt_p[idx, :] = p_cur
                ckpt_psum[idx, :] = sub_psum
            else:
                idx_min, idx_max = _ckpt_range(leaf)
                j = idx_max
                while j >= idx_min:
                    span_psum = sub_psum - ckpt_psum[j] + ckpt_p[j]
                    if _is_turning(inv_mass, ckpt_p[j], p_cur, span_psum):
                        turning = True
                        break
                    j -= 1
                if turning:
                    break

        if divergent or turning:
            break

        if direction > 0:
            z_right[:] = z_cur
            p_right[:] = p_cur
            g_right[:] = g_cur
        else:
            z_left[:] = z_cur
            p_left[:] = p_cur
            g_left[:] = g_cur

        if math.log(unif[ui]) < sub_log_w - log_w:
            z_out[:] = z_sub
            g_out[:] = g_sub
            lp_out = lp_sub
        ui += 1
        hi = max(log_w, sub_log_w)
        log_w = hi + math.log(math.exp(log_w - hi) + math.exp(sub_log_w - hi))
        for i in range(d):
            p_sum[i] += sub_psum[i]
        depth += 1

        if _is_turning(inv_mass, p_left, p_right, p_sum):
            break

    accept = sum_accept / n_leapfrog if n_leapfrog > 0 else 0.0
    return z_out, lp_out, g_out, accept, n_leapfrog, depth, divergent


def leapfrog(target, z, p, g, eps, inv_mass):
    p = p + 0.5 * eps * g
    z = z + eps * inv_mass * p
    lp, g = target.logp_grad(z)
    p = p + 0.5 * eps * g
    return z, p, lp, g


def find_reasonable_step_size(target, z, lp, g, inv_mass, rng, eps=1.0, max_iter=100):
    """Double or halve ``eps`` until a single leapfrog step crosses acceptance 1/2."""
    p = rng.standard_normal(z.shape[0]) / np.sqrt(inv_mass)
    h0 = -lp + 0.5 * np.sum(inv_mass * p * p)

    def log_ratio(e):
        with np.errstate(over="ignore", invalid="ignore"):
            _, p1, lp1, _ = leapfrog(target, z, p, g, e, inv_mass)
            h1 = -lp1 + 0.5 * np.sum(inv_mass * p1 * p1)
            out = h0 - h1
        return out if np.isfinite(out) else -np.inf

    direction = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(max_iter):
        new_eps = eps * (2.0 ** direction)
        r = log_ratio(new_eps)
        if (direction > 0 and not r > math.log(0.5)) or (direction < 0 and r > math.log(0.5)):
            return new_eps if direction < 0 else eps
        eps = new_eps
    return eps


class DualAveraging:
    """Step-size adaptation toward a target mean acceptance statistic."""

    def __init__(self, eps0: float, target: float = 0.8, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.log_eps = math.log(eps0)

    def update(self, accept_stat: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def warmup_windows(n_warmup: int, init_buffer: int = 75, term_buffer: int = 50, base_window: int = 25):
    """``(start, end)`` iteration ranges of the slow mass-matrix windows.

    Fast step-size-only phases bracket the windows; widths double, and the
    last window absorbs whatever remains before the terminal buffer.
    """
    if n_warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    out = []
    start = init_buffer
    width = base_window
    stop = n_warmup - term_buffer
    while start + width <= stop:
        end = start + width
        if end + 2 * width > stop:
            end = stop
        out.append((start, end))
        start = end
        width *= 2
    return out
