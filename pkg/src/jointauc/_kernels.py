"""Compiled inner kernel for the joint log density.

The sampler evaluates the log posterior and its gradient tens of
thousands of times per fit; this module provides a single fused pass
compiled with numba. The pure-numpy implementation in
``likelihood.JointDensity.value_and_grad_reference`` is the reference;
the two are held together by an equality test. If numba is missing,
everything falls back to the reference path.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def logp_grad(theta, n, k, x, a, s, cens_idx, s_cens, vs, vt, vy,
              coef_scale, b_mu_scale, sd_scale):  # pragma: no cover - compiled
    n_cens = cens_idx.shape[0]
    m = vt.shape[0]
    dim = theta.shape[0]
    grad = np.zeros(dim)

    i_ga = 0
    o_gx = 1
    i_ba = 1 + k
    o_bx = 2 + k
    o_b = 2 + 2 * k
    o_bmu = o_b + 2 * n
    o_usb = o_bmu + 2
    i_rho = o_usb + 2
    i_us2 = i_rho + 1
    o_ut = i_us2 + 1

    g_a = theta[i_ga]
    b_a = theta[i_ba]
    u_sb1 = theta[o_usb]
    u_sb2 = theta[o_usb + 1]
    u_rho = theta[i_rho]
    u_s2 = theta[i_us2]

    sigma_b1 = np.exp(u_sb1)
    sigma_b2 = np.exp(u_sb2)
    rho = math.tanh(u_rho)
    sigma2 = np.exp(u_s2)
    one_m_r2 = 1.0 - rho * rho

    # Outside the (numerically representable) support: reject outright.
    # The products sigma_b * (1 - rho^2) appear as denominators, so
    # they must not underflow to zero either.
    if (not (0.0 < sigma2 < np.inf) or not (0.0 < sigma_b1 < np.inf)
            or not (0.0 < sigma_b2 < np.inf) or one_m_r2 <= 0.0
            or sigma_b1 * one_m_r2 <= 0.0 or sigma_b2 * one_m_r2 <= 0.0):
        return -np.inf, grad

    t_event = np.empty(n)
    for i in range(n):
        t_event[i] = s[i]
    for c in range(n_cens):
        t_event[cens_idx[c]] = s_cens[c] + np.exp(theta[o_ut + c])

    # survival
    logp = 0.0
    lam = np.empty(n)
    for i in range(n):
        eta = g_a * a[i]
        for j in range(k):
            eta += x[i, j] * theta[o_gx + j]
        li = np.exp(eta)
        lam[i] = li
        logp += eta - li * t_event[i]
        ge = 1.0 - li * t_event[i]
        grad[i_ga] += ge * a[i]
        for j in range(k):
            grad[o_gx + j] += x[i, j] * ge

    # longitudinal visits
    rss = 0.0
    slope = np.zeros(n)
    for v in range(m):
        i = vs[v]
        ti = t_event[i]
        psi = vt[v] / ti
        b1 = theta[o_b + 2 * i]
        b2 = theta[o_b + 2 * i + 1]
        mu = b_a * a[i] + b1 * psi + b2 * psi * psi
        for j in range(k):
            mu += x[i, j] * theta[o_bx + j]
        r = vy[v] - mu
        rss += r * r
        w = r / sigma2
        grad[i_ba] += w * a[i]
        for j in range(k):
            grad[o_bx + j] += x[i, j] * w
        grad[o_b + 2 * i] += w * psi
        grad[o_b + 2 * i + 1] += w * psi * psi
        slope[i] += w * (b1 * psi + 2.0 * b2 * psi * psi) / ti
    if m > 0:
        logp += -0.5 * m * (_LOG_2PI + u_s2) - 0.5 * rss / sigma2
        grad[i_us2] = -0.5 * m + 0.5 * rss / sigma2

    # bivariate normal random effects
    bmu1 = theta[o_bmu]
    bmu2 = theta[o_bmu + 1]
    sum_quad = 0.0
    sum_z1z2 = 0.0
    s_usb1 = 0.0
    s_usb2 = 0.0
    for i in range(n):
        z1 = (theta[o_b + 2 * i] - bmu1) / sigma_b1
        z2 = (theta[o_b + 2 * i + 1] - bmu2) / sigma_b2
        quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_m_r2
        sum_quad += quad
        sum_z1z2 += z1 * z2
        g1 = (z1 - rho * z2) / (sigma_b1 * one_m_r2)
        g2 = (z2 - rho * z1) / (sigma_b2 * one_m_r2)
        grad[o_b + 2 * i] -= g1
        grad[o_b + 2 * i + 1] -= g2
        grad[o_bmu] += g1
        grad[o_bmu + 1] += g2
        s_usb1 += z1 * (z1 - rho * z2)
        s_usb2 += z2 * (z2 - rho * z1)
    logp += n * (-_LOG_2PI - u_sb1 - u_sb2 - 0.5 * math.log(one_m_r2)) - 0.5 * sum_quad
    grad[o_usb] = -n + s_usb1 / one_m_r2
    grad[o_usb + 1] = -n + s_usb2 / one_m_r2
    grad[i_rho] = n * rho + sum_z1z2 - rho * sum_quad

    # augmented event times
    for c in range(n_cens):
        i = cens_idx[c]
        tgap = t_event[i] - s_cens[c]
        grad[o_ut + c] = (-lam[i] - slope[i]) * tgap + 1.0
        logp += theta[o_ut + c]

    # priors + change-of-variable terms
    cs2 = coef_scale * coef_scale
    sum_coef2 = g_a * g_a + b_a * b_a
    for j in range(k):
        sum_coef2 += theta[o_gx + j] ** 2 + theta[o_bx + j] ** 2
    logp += -0.5 * sum_coef2 / cs2 - (2 + 2 * k) * (0.5 * _LOG_2PI + math.log(coef_scale))
    grad[i_ga] -= g_a / cs2
    grad[i_ba] -= b_a / cs2
    for j in range(k):
        grad[o_gx + j] -= theta[o_gx + j] / cs2
        grad[o_bx + j] -= theta[o_bx + j] / cs2

    bs2 = b_mu_scale * b_mu_scale
    logp += (-0.5 * (bmu1 * bmu1 + bmu2 * bmu2) / bs2
             - 2.0 * (0.5 * _LOG_2PI + math.log(b_mu_scale)))
    grad[o_bmu] -= bmu1 / bs2
    grad[o_bmu + 1] -= bmu2 / bs2

    ss2 = sd_scale * sd_scale
    hn_const = 0.5 * math.log(2.0 / math.pi) - math.log(sd_scale)
    logp += (hn_const - 0.5 * sigma_b1 * sigma_b1 / ss2 + u_sb1
             + hn_const - 0.5 * sigma_b2 * sigma_b2 / ss2 + u_sb2)
    grad[o_usb] += -(sigma_b1 * sigma_b1) / ss2 + 1.0
    grad[o_usb + 1] += -(sigma_b2 * sigma_b2) / ss2 + 1.0
    logp += hn_const - 0.5 * sigma2 / ss2 + 0.5 * u_s2 - math.log(2.0)
    grad[i_us2] += -0.5 * sigma2 / ss2 + 0.5
    logp += -math.log(2.0) + math.log(one_m_r2)
    grad[i_rho] += -2.0 * rho

    if not math.isfinite(logp):
        return -np.inf, grad
    return logp, grad
