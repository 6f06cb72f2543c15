"""Hot kernels: log posterior and gradient on the log-transformed parameter space.

Two implementations share one signature:

* ``logp_grad_loop``: explicit loops over cells, compiled with numba when
  available (see :mod:`hcrisk._accel`).
* ``logp_grad_numpy``: vectorized numpy/scipy.

``logp_grad`` is whichever the backend flag selects. Both return the log
target ``log_posterior(exp(z)) + sum(z)`` and fill ``grad`` in place.

Packed argument conventions
---------------------------
cells : ``age`` (0-based int64), ``n``, ``x``, ``pop`` as float64, plus the
    data-only constants ``logx``, ``lgn`` (lgamma(n), 0 when n=0), ``lgn1``
    (lgamma(n+1)) and ``s2`` (log1p(1/n), 0 when n=0).
size_code : 0 Gamma, 1 LogNormal, 2 LogT.
count_code : 0 Poisson, 1 NegBinomial.
offs : int64[4], start index in ``z`` of the lambda/theta/nu/delta blocks,
    -1 when a block is absent.
ia, ib : int64[4], index in ``z`` of the block's hyperparameters, -1 when pinned.
fa, fb : float64[4], pinned hyperparameter values (ignored when free).
fam : int64[4], hyperprior family, 0 Gamma(0.1, 0.1), 1 Half-Cauchy(0, 1).
shear : int64[4], 1 when the block is sampled as ``w_k = z_k + z_b`` with
    ``z_b`` the log rate hyperparameter. The map has unit Jacobian, so only
    the gradient changes; it removes the funnel between a weakly identified
    block and its rate.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import digamma, gammaln

from ._accel import HAS_NUMBA, njit

_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2_OVER_PI = math.log(2.0 / math.pi)
_HG_SHAPE = 0.1
_HG_RATE = 0.1
_HG_CONST = _HG_SHAPE * math.log(_HG_RATE) - math.lgamma(_HG_SHAPE)


@njit(cache=True, error_model="numpy")
def digamma_scalar(x):
    # recurrence up to x >= 10, then the asymptotic series
    r = 0.0
    while x < 10.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132)))))
    return r + math.log(x) - 0.5 / x + t


# log G(x + 1/2) - log G(x) - log(x)/2 has an odd series in 1/x
_LG_HALF = (-1.0 / 8, 1.0 / 192, -1.0 / 640, 17.0 / 14336)
_NU_SERIES = 40.0


@njit(cache=True, error_model="numpy")
def lt_nu_terms(nu):
    """``(L, D)`` for the LogT degrees of freedom.

    ``L = lgamma((nu+1)/2) - lgamma(nu/2) - log(nu)/2`` and ``D = dL/dnu``.
    Both cancel badly for large ``nu``, where an asymptotic series is used.
    """
    if nu < _NU_SERIES:
        L = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) - 0.5 * math.log(nu)
        D = 0.5 * digamma_scalar(0.5 * (nu + 1.0)) - 0.5 * digamma_scalar(0.5 * nu) - 0.5 / nu
        return L, D
    w = 2.0 / nu
    w2 = w * w
    L = -0.5 * math.log(2.0) + w * (_LG_HALF[0] + w2 * (_LG_HALF[1] + w2 * (_LG_HALF[2] + w2 * _LG_HALF[3])))
    # d/dnu = (d/dx) / 2 with x = nu / 2
    D = -0.5 * w2 * (_LG_HALF[0] + w2 * (3.0 * _LG_HALF[1] + w2 * (5.0 * _LG_HALF[2] + w2 * 7.0 * _LG_HALF[3])))
    return L, D


@njit(cache=True, error_model="numpy")
def _hyperprior(zh, fam):
    h = math.exp(zh)
    if fam == 0:
        return _HG_CONST + (_HG_SHAPE - 1.0) * zh - _HG_RATE * h, (_HG_SHAPE - 1.0) - _HG_RATE * h
    h2 = h * h
    return _LOG_2_OVER_PI - math.log1p(h2), -2.0 * h2 / (1.0 + h2)


@njit(cache=True, error_model="numpy")
def _logp_grad_core(z, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                    size_code, count_code, offs, ia, ib, fa, fb, fam, grad):
    lp = 0.0
    for i in range(z.shape[0]):
        lp += z[i]
        grad[i] = 1.0

    o_lam = offs[0]
    o_th = offs[1]
    o_nu = offs[2]
    o_del = offs[3]

    # per-class constants of the dispersion and tail parameters
    lg_d = np.zeros(n_ages)
    dg_d = np.zeros(n_ages)
    lt_l = np.zeros(n_ages)
    lt_d = np.zeros(n_ages)
    for k in range(n_ages):
        if count_code == 1:
            d = math.exp(z[o_del + k])
            lg_d[k] = math.lgamma(d)
            dg_d[k] = digamma_scalar(d)
        if size_code == 2:
            lt_l[k], lt_d[k] = lt_nu_terms(math.exp(z[o_nu + k]))

    for c in range(n.shape[0]):
        a = age[c]
        nc = n[c]
        m = math.exp(z[o_lam + a]) * pop[c]
        if count_code == 0:
            lp += nc * math.log(m) - m - lgn1[c]
            grad[o_lam + a] += nc - m
        else:
            zd = z[o_del + a]
            d = math.exp(zd)
            dm = d + m
            ldm = math.log(dm)
            lp += (math.lgamma(nc + d) - lgn1[c] - lg_d[a]
                   + nc * math.log(m) - nc * ldm - d * math.log1p(m / d))
            grad[o_lam + a] += nc - m * (d + nc) / dm
            grad[o_del + a] += d * (digamma_scalar(nc + d) - dg_d[a]
                                    + zd + 1.0 - ldm - (d + nc) / dm)
        if nc <= 0.0:
            continue
        zt = z[o_th + a]
        if size_code == 0:
            th = math.exp(zt)
            lp += nc * zt - lgn[c] + (nc - 1.0) * logx[c] - th * x[c]
            grad[o_th + a] += nc - th * x[c]
        else:
            sc = s2[c]
            r = logx[c] - math.log(nc) + zt + 0.5 * sc
            if size_code == 1:
                lp += -logx[c] - 0.5 * (_LOG_2PI + math.log(sc)) - r * r / (2.0 * sc)
                grad[o_th + a] += -r / sc
            else:
                nu = math.exp(z[o_nu + a])
                u = r * r / (nu * sc)
                l1u = math.log1p(u)
                lp += (lt_l[a] - 0.5 * (_LOG_PI + math.log(sc)) - logx[c]
                       - 0.5 * (nu + 1.0) * l1u)
                grad[o_th + a] += -(nu + 1.0) * r / (nu * sc + r * r)
                grad[o_nu + a] += (nu * (lt_d[a] + 0.5 * (u / (1.0 + u) - l1u))
                                   + 0.5 * u / (1.0 + u))

    for b in range(4):
        off = offs[b]
        if off < 0:
            continue
        if ia[b] >= 0:
            alpha = math.exp(z[ia[b]])
        else:
            alpha = fa[b]
        if ib[b] >= 0:
            beta = math.exp(z[ib[b]])
        else:
            beta = fb[b]
        lb = math.log(beta)
        lga = math.lgamma(alpha)
        dga = digamma_scalar(alpha)
        s_alpha = 0.0
        s_beta = 0.0
        for k in range(n_ages):
            zk = z[off + k]
            v = math.exp(zk)
            lp += alpha * lb - lga + (alpha - 1.0) * zk - beta * v
            grad[off + k] += (alpha - 1.0) - beta * v
            s_alpha += lb - dga + zk
            s_beta += alpha - beta * v
        if ia[b] >= 0:
            hp, dh = _hyperprior(z[ia[b]], fam[b])
            lp += hp
            grad[ia[b]] += alpha * s_alpha + dh
        if ib[b] >= 0:
            hp, dh = _hyperprior(z[ib[b]], fam[b])
            lp += hp
            grad[ib[b]] += s_beta + dh
    return lp


def lt_nu_terms_np(nu):
    nu = np.asarray(nu, dtype=float)
    small = nu < _NU_SERIES
    ns = np.where(small, nu, 1.0)
    L_direct = gammaln(0.5 * (ns + 1.0)) - gammaln(0.5 * ns) - 0.5 * np.log(ns)
    D_direct = 0.5 * digamma(0.5 * (ns + 1.0)) - 0.5 * digamma(0.5 * ns) - 0.5 / ns
    w = 2.0 / np.where(small, _NU_SERIES, nu)
    w2 = w * w
    c = _LG_HALF
    L_ser = -0.5 * math.log(2.0) + w * (c[0] + w2 * (c[1] + w2 * (c[2] + w2 * c[3])))
    D_ser = -0.5 * w2 * (c[0] + w2 * (3.0 * c[1] + w2 * (5.0 * c[2] + w2 * 7.0 * c[3])))
    return np.where(small, L_direct, L_ser), np.where(small, D_direct, D_ser)


@njit(cache=True, error_model="numpy")
def logp_grad_loop(z, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                   size_code, count_code, offs, ia, ib, fa, fb, fam, shear, grad):
    zz = z.copy()
    for b in range(4):
        if shear[b] == 1 and offs[b] >= 0 and ib[b] >= 0:
            for k in range(n_ages):
                zz[offs[b] + k] -= z[ib[b]]
    lp = _logp_grad_core(zz, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                         size_code, count_code, offs, ia, ib, fa, fb, fam, grad)
    for b in range(4):
        if shear[b] == 1 and offs[b] >= 0 and ib[b] >= 0:
            s = 0.0
            for k in range(n_ages):
                s += grad[offs[b] + k]
            grad[ib[b]] -= s
    return lp


def _hyperprior_np(zh, fam):
    h = np.exp(zh)
    if fam == 0:
        return _HG_CONST + (_HG_SHAPE - 1.0) * zh - _HG_RATE * h, (_HG_SHAPE - 1.0) - _HG_RATE * h
    return _LOG_2_OVER_PI - np.log1p(h * h), -2.0 * h * h / (1.0 + h * h)


def logp_grad_numpy(z, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                    size_code, count_code, offs, ia, ib, fa, fb, fam, shear, grad):
    sheared = [b for b in range(4) if shear[b] == 1 and offs[b] >= 0 and ib[b] >= 0]
    if sheared:
        z = np.array(z, dtype=float)
        for b in sheared:
            z[offs[b]:offs[b] + n_ages] -= z[ib[b]]
    lp = _logp_grad_numpy_core(z, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                               size_code, count_code, offs, ia, ib, fa, fb, fam, grad)
    for b in sheared:
        grad[ib[b]] -= np.sum(grad[offs[b]:offs[b] + n_ages])
    return lp


def _logp_grad_numpy_core(z, n_ages, age, n, x, pop, logx, lgn, lgn1, s2,
                          size_code, count_code, offs, ia, ib, fa, fb, fam, grad):
    grad[:] = 1.0
    lp = float(np.sum(z))
    o_lam, o_th, o_nu, o_del = (int(o) for o in offs)

    zl = z[o_lam:o_lam + n_ages]
    m = np.exp(zl)[age] * pop
    if count_code == 0:
        lp += np.sum(n * np.log(m) - m - lgn1)
        g_lam = n - m
    else:
        zd = z[o_del:o_del + n_ages][age]
        d = np.exp(zd)
        dm = d + m
        ldm = np.log(dm)
        lp += np.sum(gammaln(n + d) - lgn1 - gammaln(d) + n * np.log(m) - n * ldm - d * np.log1p(m / d))
        g_lam = n - m * (d + n) / dm
        g_del = d * (digamma(n + d) - digamma(d) + zd + 1.0 - ldm - (d + n) / dm)
        grad[o_del:o_del + n_ages] += np.bincount(age, g_del, minlength=n_ages)
    grad[o_lam:o_lam + n_ages] += np.bincount(age, g_lam, minlength=n_ages)

    pos = n > 0
    if np.any(pos):
        ap, np_, lx, sc = age[pos], n[pos], logx[pos], s2[pos]
        zt = z[o_th:o_th + n_ages][ap]
        if size_code == 0:
            th = np.exp(zt)
            lp += np.sum(np_ * zt - lgn[pos] + (np_ - 1.0) * lx - th * x[pos])
            g_th = np_ - th * x[pos]
        else:
            r = lx - np.log(np_) + zt + 0.5 * sc
            if size_code == 1:
                lp += np.sum(-lx - 0.5 * (_LOG_2PI + np.log(sc)) - r * r / (2.0 * sc))
                g_th = -r / sc
            else:
                nu_k = np.exp(z[o_nu:o_nu + n_ages])
                L_k, D_k = lt_nu_terms_np(nu_k)
                nu = nu_k[ap]
                u = r * r / (nu * sc)
                l1u = np.log1p(u)
                lp += np.sum(L_k[ap] - 0.5 * (_LOG_PI + np.log(sc)) - lx - 0.5 * (nu + 1.0) * l1u)
                g_th = -(nu + 1.0) * r / (nu * sc + r * r)
                g_nu = nu * (D_k[ap] + 0.5 * (u / (1.0 + u) - l1u)) + 0.5 * u / (1.0 + u)
                grad[o_nu:o_nu + n_ages] += np.bincount(ap, g_nu, minlength=n_ages)
        grad[o_th:o_th + n_ages] += np.bincount(ap, g_th, minlength=n_ages)

    for b in range(4):
        off = int(offs[b])
        if off < 0:
            continue
        alpha = np.exp(z[ia[b]]) if ia[b] >= 0 else fa[b]
        beta = np.exp(z[ib[b]]) if ib[b] >= 0 else fb[b]
        zk = z[off:off + n_ages]
        v = np.exp(zk)
        lb = np.log(beta)
        lp += np.sum(alpha * lb - gammaln(alpha) + (alpha - 1.0) * zk - beta * v)
        grad[off:off + n_ages] += (alpha - 1.0) - beta * v
        if ia[b] >= 0:
            hp, dh = _hyperprior_np(z[ia[b]], fam[b])
            lp += hp
            grad[ia[b]] += alpha * np.sum(lb - digamma(alpha) + zk) + dh
        if ib[b] >= 0:
            hp, dh = _hyperprior_np(z[ib[b]], fam[b])
            lp += hp
            grad[ib[b]] += np.sum(alpha - beta * v) + dh
    return float(lp)


logp_grad = logp_grad_loop if HAS_NUMBA else logp_grad_numpy
