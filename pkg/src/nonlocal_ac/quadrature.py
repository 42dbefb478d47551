"""Near-field integrals of |z|^{-(n+2s)} over pairs of unit cells.

For a pair of unit cells whose centres differ by the integer offset ``d``,

    int_{C_0} int_{C_d} k(x - y) dx dy = int k(z) prod_k tent(z_k - d_k) dz,

with ``tent(t) = max(0, 1 - |t|)``.  The right-hand side is integrated with
a tensor Gauss-Legendre rule on the sub-boxes cut at the tent kinks.  Touching
cells put the kernel singularity at a corner of a sub-box; those boxes are
graded geometrically toward the corner and the unresolved remainder is
extrapolated from the ratio of the last two level contributions.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_LEVELS = 48


@lru_cache(maxsize=None)
def _gauss(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


def _tensor_rule(lo, hi, q):
    """Nodes (m, n) and weights (m,) of the q^n Gauss rule on the box [lo, hi]."""
    x, w = _gauss(q)
    n = len(lo)
    axes, wts = [], []
    for k in range(n):
        half = 0.5 * (hi[k] - lo[k])
        axes.append(lo[k] + half * (x + 1.0))
        wts.append(half * w)
    if n == 1:
        return axes[0][:, None], wts[0]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    W = np.outer(wts[0], wts[1])
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def _box_integral(f, lo, hi, q):
    pts, wts = _tensor_rule(lo, hi, q)
    return float(np.dot(f(pts), wts))


def _graded_corner_integral(f, corner, far, q):
    """Integral over the box spanned by ``corner`` (the singular point) and ``far``.

    The box is split into the half-box at the corner and its complement; the
    complement is integrated directly and the half-box recursively.
    """
    corner = np.asarray(corner, float)
    far = np.asarray(far, float)
    n = corner.size
    total = 0.0
    contribs = []
    for _ in range(_LEVELS):
        mid = 0.5 * (corner + far)
        level = 0.0
        # the 2^n - 1 sub-boxes of [corner, far] other than [corner, mid]
        for code in range(1, 2**n):
            lo = np.empty(n)
            hi = np.empty(n)
            for k in range(n):
                a, b = (mid[k], far[k]) if (code >> k) & 1 else (corner[k], mid[k])
                lo[k], hi[k] = min(a, b), max(a, b)
            level += _box_integral(f, lo, hi, q)
        total += level
        contribs.append(level)
        far = mid
        if len(contribs) > 3 and abs(level) <= 1e-17 * abs(total):
            break
    if len(contribs) >= 2 and contribs[-2] != 0.0:
        r = contribs[-1] / contribs[-2]
        if 0.0 < r < 1.0:
            total += contribs[-1] * r / (1.0 - r)
    return total


def _split_points(d):
    """Kinks of prod tent(z_k - d_k) on [d_k - 1, d_k + 1]."""
    return [(dk - 1.0, float(dk), dk + 1.0) for dk in d]


def integrate_tent_product(f, d, q: int) -> float:
    """int f(z) prod tent(z_k - d_k) dz over [d - 1, d + 1]^n, f singular only at 0."""
    d = np.asarray(d, float)
    n = d.size

    def g(z):
        t = np.ones(z.shape[0])
        for k in range(n):
            t *= np.maximum(0.0, 1.0 - np.abs(z[:, k] - d[k]))
        return f(z) * t

    cuts = _split_points(d)
    total = 0.0
    for code in range(2**n):
        lo = np.array([cuts[k][(code >> k) & 1] for k in range(n)])
        hi = np.array([cuts[k][((code >> k) & 1) + 1] for k in range(n)])
        at_zero = [(lo[k] == 0.0 or hi[k] == 0.0) for k in range(n)]
        touches = all(lo[k] <= 0.0 <= hi[k] for k in range(n))
        if touches and all(at_zero):
            corner = np.where(lo == 0.0, lo, hi)
            far = np.where(lo == 0.0, hi, lo)
            total += _graded_corner_integral(g, corner, far, q)
        else:
            total += _box_integral(g, lo, hi, q)
    return total


def kernel_power(n: int, power: float):
    """z -> |z|^power for z of shape (m, n)."""

    def f(z):
        r = np.sqrt((z * z).sum(axis=1))
        return r**power

    return f


@lru_cache(maxsize=None)
def cell_pair_integral(n: int, s: float, d: tuple, q: int) -> float:
    """int_{C_0} int_{C_d} |x - y|^{-(n+2s)} for unit cells, offset d != 0."""
    return integrate_tent_product(kernel_power(n, -(n + 2 * s)), d, q)


@lru_cache(maxsize=None)
def cell_pair_moment(n: int, s: float, d: tuple, q: int) -> float:
    """int_{C_0} int_{C_d} |x - y|^{2-(n+2s)} for unit cells (d = 0 allowed)."""
    return integrate_tent_product(kernel_power(n, 2 - (n + 2 * s)), d, q)
