"""Independent reference computations used by several test modules."""
from __future__ import annotations

import numpy as np


def _project(za, zs, C):
    """Euclidean projection of (a, a*) onto the box [0, C] with sum(a) = sum(a*).

    The balance gap is piecewise linear and nonincreasing in the shift lam,
    so the root is found exactly by interpolating between breakpoints.
    """
    bp = np.unique(np.concatenate([za, za - C, -zs, C - zs]))
    gap = (np.clip(za[None] - bp[:, None], 0, C).sum(1)
           - np.clip(zs[None] + bp[:, None], 0, C).sum(1))
    i = int(np.searchsorted(-gap, 0.0))
    if i == 0:
        lam = bp[0]
    elif i == bp.size:
        lam = bp[-1]
    else:
        g0, g1 = gap[i - 1], gap[i]
        lam = bp[i - 1] if g0 == g1 else bp[i - 1] + (bp[i] - bp[i - 1]) * g0 / (g0 - g1)
    return np.clip(za - lam, 0, C), np.clip(zs + lam, 0, C)


def svr_dual_qp(K, y, C, eps, iters=5000):
    """Minimum of the epsilon-SVR dual by accelerated projected gradient.

    Variables are the 2n multipliers (a, a*); the objective is
    0.5 (a - a*)' K (a - a*) - y'(a - a*) + eps * sum(a + a*).
    """
    n = y.size
    L = 2 * max(np.linalg.eigvalsh(K).max(), 1e-12)
    a = np.zeros(n)
    s = np.zeros(n)
    ya, ys = a.copy(), s.copy()
    t = 1.0

    def obj(a, s):
        b = a - s
        return 0.5 * b @ K @ b - y @ b + eps * (a + s).sum()

    for _ in range(iters):
        g = K @ (ya - ys)
        ga = g - y + eps
        gs = -g + y + eps
        an, sn = _project(ya - ga / L, ys - gs / L, C)
        tn = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        ya = an + (t - 1) / tn * (an - a)
        ys = sn + (t - 1) / tn * (sn - s)
        a, s, t = an, sn, tn
    return obj(a, s), a - s


def rbf(A, B, gamma):
    d = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return np.exp(-gamma * d)


def oracle_td5(ch, eps_zc=0.0, eps_ssc=0.0):
    """Left-to-right definitions over a list of floats."""
    n = len(ch)
    mav = 0.0
    for v in ch:
        mav += abs(v)
    wl = 0.0
    for k in range(1, n):
        wl += abs(ch[k] - ch[k - 1])
    s = 0.0
    for v in ch:
        s += v
    m = s / n
    q = 0.0
    for v in ch:
        q += (v - m) * (v - m)
    ssc = sum((ch[k] - ch[k - 1]) * (ch[k] - ch[k + 1]) > eps_ssc for k in range(1, n - 1))
    zc = sum(ch[k] * ch[k + 1] < 0 and abs(ch[k] - ch[k + 1]) > eps_zc for k in range(n - 1))
    return [mav / n, wl, q / (n - 1), float(ssc), float(zc)]
