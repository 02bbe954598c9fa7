"""Compiled M-step kernel for one item's success probabilities.

The item objective is

    sum_h a_h log t_h + b_h log(1 - t_h) - lam * sum_{h != h'} min(|t_h - t_h'|, tau)

where ``a_h`` / ``b_h`` are posterior-weighted counts of ones / zeros.  The
truncated penalty is minorized at the current point by a weighted fused
lasso (pairs closer than ``tau`` keep weight 1, others are dropped as a
constant), and that surrogate is increased by exact coordinate and
fused-group updates.  Every step is an exact 1-D maximization, so the
surrogate, and hence the objective, never decreases.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LOWER = 1e-6
UPPER = 1.0 - 1e-6


@njit(cache=True)
def _obj1d(t, a, b, pts, wts, n_pts):
    val = 0.0
    if a > 0.0:
        val += a * np.log(t)
    if b > 0.0:
        val += b * np.log(1.0 - t)
    for i in range(n_pts):
        val -= wts[i] * abs(t - pts[i])
    return val


@njit(cache=True)
def maximize_1d(a, b, pts, wts, n_pts, lo, hi):
    """Maximize ``a log t + b log(1-t) - sum_i wts_i |t - pts_i|`` on [lo, hi].

    The objective is concave and smooth between breakpoints, where the
    stationarity condition is a quadratic in ``t``.  All segment roots,
    breakpoints and bounds are compared by objective value.
    """
    cand = np.empty(n_pts + 2)
    m = 0
    cand[m] = lo
    m += 1
    cand[m] = hi
    m += 1
    for i in range(n_pts):
        if lo < pts[i] < hi:
            cand[m] = pts[i]
            m += 1
    bounds = np.sort(cand[:m])
    best_t = lo
    best_v = _obj1d(lo, a, b, pts, wts, n_pts)
    for i in range(m):
        v = _obj1d(bounds[i], a, b, pts, wts, n_pts)
        if v > best_v:
            best_v = v
            best_t = bounds[i]
    for s in range(m - 1):
        left = bounds[s]
        right = bounds[s + 1]
        if right - left <= 0.0:
            continue
        mid = 0.5 * (left + right)
        c = 0.0
        for i in range(n_pts):
            if pts[i] < mid:
                c += wts[i]
            else:
                c -= wts[i]
        bb = c + a + b
        disc = bb * bb - 4.0 * c * a
        if disc < 0.0:
            disc = 0.0
        denom = bb + np.sqrt(disc)
        if denom <= 0.0:
            continue
        t = 2.0 * a / denom
        if left < t < right:
            v = _obj1d(t, a, b, pts, wts, n_pts)
            if v > best_v:
                best_v = v
                best_t = t
    return best_t


@njit(cache=True)
def surrogate_value(theta, a, b, w, mu):
    n = theta.shape[0]
    val = 0.0
    for h in range(n):
        if a[h] > 0.0:
            val += a[h] * np.log(theta[h])
        if b[h] > 0.0:
            val += b[h] * np.log(1.0 - theta[h])
    for h in range(n):
        for g in range(h + 1, n):
            if w[h, g]:
                val -= mu * abs(theta[h] - theta[g])
    return val


@njit(cache=True)
def _coordinate_sweep(theta, a, b, w, mu, lo, hi):
    n = theta.shape[0]
    pts = np.empty(n)
    wts = np.empty(n)
    for h in range(n):
        k = 0
        for g in range(n):
            if g != h and w[h, g]:
                pts[k] = theta[g]
                wts[k] = mu
                k += 1
        theta[h] = maximize_1d(a[h], b[h], pts, wts, k, lo, hi)


@njit(cache=True)
def _group_sweep(theta, a, b, w, mu, lo, hi, fuse_tol):
    """Move each set of (numerically) fused coordinates as one block."""
    n = theta.shape[0]
    label = -np.ones(n, dtype=np.int64)
    n_groups = 0
    for h in range(n):
        if label[h] >= 0:
            continue
        label[h] = n_groups
        for g in range(h + 1, n):
            if label[g] < 0 and abs(theta[g] - theta[h]) <= fuse_tol:
                label[g] = n_groups
        n_groups += 1
    pts = np.empty(n * n)
    wts = np.empty(n * n)
    for grp in range(n_groups):
        size = 0
        aa = 0.0
        bb = 0.0
        for h in range(n):
            if label[h] == grp:
                size += 1
                aa += a[h]
                bb += b[h]
        if size < 2:
            continue
        k = 0
        for h in range(n):
            if label[h] != grp:
                continue
            for g in range(n):
                if label[g] != grp and w[h, g]:
                    pts[k] = theta[g]
                    wts[k] = mu
                    k += 1
        t = maximize_1d(aa, bb, pts, wts, k, lo, hi)
        # internal pairs stay fused, so their penalty remains zero
        cur = surrogate_value(theta, a, b, w, mu)
        saved = theta.copy()
        for h in range(n):
            if label[h] == grp:
                theta[h] = t
        if surrogate_value(theta, a, b, w, mu) < cur:
            theta[:] = saved


@njit(cache=True)
def solve_item(theta0, a, b, lam, tau, max_sweeps, tol, dc_passes):
    """Penalized update of one item's success probabilities.

    Parameters
    ----------
    theta0 : current values (length 2^K), the majorization point
    a, b : posterior-weighted counts of ones and zeros
    lam : penalty weight on each ordered pair
    tau : truncation level
    max_sweeps, tol : coordinate-descent limits per majorization pass
    dc_passes : number of majorization passes
    """
    n = theta0.shape[0]
    theta = theta0.copy()
    for i in range(n):
        theta[i] = min(max(theta[i], LOWER), UPPER)
    mu = 2.0 * lam
    w = np.zeros((n, n), dtype=np.bool_)
    for rnd in range(dc_passes):
        changed = False
        for h in range(n):
            for g in range(n):
                neww = h != g and abs(theta[h] - theta[g]) < tau
                if neww != w[h, g]:
                    changed = True
                w[h, g] = neww
        for _sweep in range(max_sweeps):
            prev = theta.copy()
            _coordinate_sweep(theta, a, b, w, mu, LOWER, UPPER)
            if mu > 0.0:
                _group_sweep(theta, a, b, w, mu, LOWER, UPPER, 1e-12)
            delta = 0.0
            for h in range(n):
                d = abs(theta[h] - prev[h])
                if d > delta:
                    delta = d
            if delta < tol:
                break
        if not changed and rnd > 0:
            break
    return theta


@njit(cache=True)
def truncated_penalty(theta, lam, tau):
    """``lam * sum_{h != h'} min(|theta_h - theta_h'|, tau)`` for one row."""
    n = theta.shape[0]
    val = 0.0
    for h in range(n):
        for g in range(h + 1, n):
            d = abs(theta[h] - theta[g])
            val += d if d < tau else tau
    return 2.0 * lam * val
