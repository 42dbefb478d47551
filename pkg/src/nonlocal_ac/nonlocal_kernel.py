"""Pair weights of the kernel |x - y|^{-(n+2s)} and the double integrals built on them.

The grid is uniform, so the weight of a cell pair depends only on the index
offset and is stored once per offset in ``KernelWeights.table``.  Two
near-field rules are available:

``"cell"``
    the weight is the exact cell-pair integral of the kernel.  This is the
    right rule for piecewise-constant data (sharp interfaces, s < 1/2) but
    the integral is infinite for touching cells when s >= 1/2.
``"moment"``
    near weights are chosen so that the discrete energy of any linear field
    matches the continuous one cell by cell: the weight is the cell-pair
    integral of |z|^{2-n-2s} divided by the squared centre distance, and the
    same-cell moment is shared among the 2n edge neighbours.  Finite for every
    s in (0, 1) and consistent for smooth fields.

Far pairs (centre distance > ``near_radius`` cells) use the midpoint value
h^{2n} |c_i - c_j|^{-(n+2s)} under both rules.  The default rule is
``"cell"`` for s < 1/2 and ``"moment"`` otherwise.

Beyond the collar the exterior is handled analytically: along each ray from a
quadrature point of an interior cell, the kernel integrates to
r^{-2s} / (2s), split wherever the exterior sign rule changes value.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .core_grid import (
    BoxDomain,
    ConstantExterior,
    DomainError,
    ExteriorRule,
    ProfileExterior,
    ScalarField,
    SignRule,
)
from .quadrature import _gauss, cell_pair_integral, cell_pair_moment

NEAR_RULES = ("cell", "moment")


def default_near_rule(s: float) -> str:
    return "cell" if s < 0.5 else "moment"


def tail_integral(alpha: float, s: float, dim: int) -> float:
    """int_{|z| >= alpha} |z|^{-(n+2s)} dz = surface(n) alpha^{-2s} / (2s)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    surface = {1: 2.0, 2: 2.0 * math.pi}[dim]
    return surface * alpha ** (-2 * s) / (2 * s)


@lru_cache(maxsize=64)
def _unit_table(dim: int, s: float, shape: tuple, near_rule: str, refinement: int,
                near_radius: float) -> np.ndarray:
    """Weights for h = 1 indexed by absolute offsets, shape ``shape``."""
    a = np.arange(shape[0], dtype=float)
    b = np.arange(shape[1], dtype=float)
    if dim == 1:
        r = np.broadcast_to(b, shape).copy()
    else:
        r = np.sqrt(a[:, None] ** 2 + b[None, :] ** 2)
    with np.errstate(divide="ignore"):
        t = np.where(r > 0, r ** (-(dim + 2 * s)), 0.0)
    same_share = 0.0
    if near_rule == "moment":
        same_share = cell_pair_moment(dim, s, (0,) * dim, refinement) / (2 * dim)
    na = min(shape[0], int(math.floor(near_radius)) + 1)
    nb = min(shape[1], int(math.floor(near_radius)) + 1)
    for i in range(na if dim == 2 else 1):
        for j in range(nb):
            if (i, j) == (0, 0) or r[i, j] > near_radius:
                continue
            d = (j,) if dim == 1 else (i, j)
            if near_rule == "cell":
                t[i, j] = cell_pair_integral(dim, s, d, refinement)
            else:
                w = cell_pair_moment(dim, s, d, refinement)
                if i + j == 1:
                    w += same_share
                t[i, j] = w / r[i, j] ** 2
    t.setflags(write=False)
    return t


@dataclass(frozen=True, eq=False)
class KernelWeights:
    """Offset-indexed pair weights for one domain and one s.

    ``table[|di|, |dj|]`` approximates int_{C_i} int_{C_j} |x-y|^{-(n+2s)}
    (or its moment-matched replacement); ``table[0, 0] == 0``.
    """

    s: float
    domain: BoxDomain
    table: np.ndarray
    refinement: int
    near_rule: str
    near_radius: float
    tail_angles: int = 24
    _cache: dict = field(default_factory=dict, repr=False)

    def pair_weight(self, i, j) -> float:
        """Weight between grid cells with (2-tuple) indices i and j."""
        return float(self.table[abs(i[0] - j[0]), abs(i[1] - j[1])])

    def tail_moments(self, rule: ExteriorRule) -> np.ndarray:
        """Per interior cell: int_{C_i} int_{beyond} k * (1, u(y), u(y)^2), shape (3,)+omega_shape."""
        key = ("tail", rule.key())
        if key not in self._cache:
            self._cache[key] = _tail_moments(self, rule)
        return self._cache[key]

    def tail_coeff(self, rule: Optional[ExteriorRule] = None) -> np.ndarray:
        """int_{C_i} int_{beyond collar} |x-y|^{-(n+2s)} dy dx per interior cell."""
        return self.tail_moments(rule or ConstantExterior(0.0))[0]

    def exterior_moments(self, u: ScalarField) -> np.ndarray:
        """Collar plus tail moments of the exterior data seen by each interior cell.

        The interaction of Omega with everything outside it is
        sum_i m0_i u_i^2 - 2 m1_i u_i + m2_i.
        """
        dom = self.domain
        cm = ~dom.interior_mask()
        collar_vals = u.values[cm]
        digest = hashlib.blake2b(collar_vals.tobytes(), digest_size=16).hexdigest()
        key = ("ext", u.exterior.key(), digest)
        if key not in self._cache:
            if len(self._cache) > 32:
                for k in [k for k in self._cache if k[0] == "ext"]:
                    del self._cache[k]
            ra, rb = _interior_rows(dom)
            mom = _kernels.row_moments(u.values, self.table, ra, rb, cm)
            mom = mom.reshape((3,) + dom.omega_shape)
            self._cache[key] = mom + self.tail_moments(u.exterior)
        return self._cache[key]


def _interior_rows(dom: BoxDomain):
    ia, ib = np.nonzero(dom.interior_mask())
    return ia.astype(np.int64), ib.astype(np.int64)


def build_weights(domain: BoxDomain, s: float, refinement: int = 8, near_rule: Optional[str] = None,
                  near_radius: float = 3.0, tail_angles: int = 24) -> KernelWeights:
    """Pair-weight table for ``domain``.

    Near pairs (centre distance <= near_radius * h, default 3h) use a graded
    tensor Gauss rule with ``refinement`` points per axis on each sub-box;
    farther pairs use the midpoint rule.  Weights are computed for h = 1 and
    scaled by h^{n-2s}.
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    near_rule = near_rule or default_near_rule(s)
    if near_rule not in NEAR_RULES:
        raise ValueError(f"near_rule must be one of {NEAR_RULES}")
    unit = _unit_table(domain.dim, float(s), domain.grid_shape, near_rule, int(refinement),
                       float(near_radius))
    table = unit * domain.h ** (domain.dim - 2 * s)
    table.setflags(write=False)
    return KernelWeights(float(s), domain, table, int(refinement), near_rule, float(near_radius),
                         int(tail_angles))


# ---------------------------------------------------------------------------
# tails beyond the collar


def _sub_points(dom: BoxDomain, q: int):
    """Gauss points inside every interior cell: (N_omega, q^n, n) and weights summing to 1."""
    x, w = _gauss(q)
    c = dom.centers()[dom.omega_slices].reshape(-1, dom.dim)
    off = 0.5 * dom.h * x
    if dom.dim == 1:
        pts = c[:, None, :] + off[None, :, None]
        return pts, 0.5 * w
    ox, oy = np.meshgrid(off, off, indexing="ij")
    offs = np.stack([ox.ravel(), oy.ravel()], axis=1)
    return c[:, None, :] + offs[None, :, :], 0.25 * np.outer(w, w).ravel()


def _ray_directions(dom: BoxDomain, pts: np.ndarray, n_theta: int):
    """Directions (P, M, n) and angular weights (P, M) for each point."""
    P = pts.shape[0]
    if dom.dim == 1:
        dirs = np.broadcast_to(np.array([[-1.0], [1.0]]), (P, 2, 1))
        return dirs, np.ones((P, 2))
    lo, up = dom.outer_lower, dom.outer_upper
    corners = np.array([[lo[0], lo[1]], [up[0], lo[1]], [up[0], up[1]], [lo[0], up[1]]])
    ang = np.arctan2(corners[None, :, 1] - pts[:, None, 1], corners[None, :, 0] - pts[:, None, 0])
    ang = np.sort(np.mod(ang, 2 * math.pi), axis=1)
    ends = np.concatenate([ang, ang[:, :1] + 2 * math.pi], axis=1)
    x, w = _gauss(n_theta)
    a, b = ends[:, :-1], ends[:, 1:]
    half = 0.5 * (b - a)
    theta = (a[..., None] + half[..., None] * (x + 1.0)).reshape(P, -1)
    weights = (half[..., None] * w).reshape(P, -1)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return dirs, weights


def _exit_distance(dom: BoxDomain, pts, dirs):
    """Distance along each ray to the boundary of the extended box."""
    lo, up = dom.outer_lower, dom.outer_upper
    r0 = np.full(dirs.shape[:2], np.inf)
    for k in range(dom.dim):
        e = dirs[..., k]
        x = pts[:, None, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(e > 0, (up[k] - x) / e, np.where(e < 0, (lo[k] - x) / e, np.inf))
        r0 = np.minimum(r0, t)
    return r0


def _antideriv(r, s):
    """int_r^inf t^{-1-2s} dt (r may be inf)."""
    with np.errstate(divide="ignore"):
        return np.where(np.isinf(r), 0.0, r ** (-2 * s)) / (2 * s)


def _sign_split(rule: SignRule, pts, dirs, r0, s):
    """Ray integrals of the kernel over the +1 and -1 parts of [r0, inf)."""
    lo = np.zeros_like(r0)
    hi = np.full_like(r0, np.inf)
    empty = np.zeros(r0.shape, dtype=bool)
    for a, b in zip(rule.normals, rule.offsets):
        a = np.asarray(a, float)
        ae = dirs @ a
        ax = (pts @ a)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = (b - ax) / ae
        lo = np.where(ae > 0, np.maximum(lo, cross), lo)
        hi = np.where(ae < 0, np.minimum(hi, cross), hi)
        empty |= (ae == 0) & ~(ax > b)
    start = np.maximum(lo, r0)
    stop = np.maximum(hi, r0)
    plus = np.where(~empty & (start < stop), _antideriv(start, s) - _antideriv(stop, s), 0.0)
    total = _antideriv(r0, s)
    minus = total - plus
    if rule.negate:
        plus, minus = minus, plus
    return plus, minus


def _profile_correction(rule: ProfileExterior, pts, dirs, r0, s, panels=40, ratio=1.2, q=3):
    """Ray integrals of (g - sgn) k and (g^2 - 1) k over [r0, r0 ratio^panels]."""
    x, w = _gauss(q)
    k = np.arange(panels)
    a = ratio**k
    b = ratio ** (k + 1)
    nodes = (0.5 * (a[:, None] + b[:, None]) + 0.5 * (b - a)[:, None] * x).ravel()
    wts = (0.5 * (b - a)[:, None] * w).ravel()
    c1 = np.zeros(r0.shape)
    c2 = np.zeros(r0.shape)
    for m in range(nodes.size):
        r = r0 * nodes[m]
        y = pts[:, None, :] + r[..., None] * dirs
        g = rule(y)
        sg = rule.limit(y)
        kern = r ** (-1 - 2 * s) * r0 * wts[m]
        c1 += (g - sg) * kern
        c2 += (g * g - 1.0) * kern
    return c1, c2


def _tail_moments(w: KernelWeights, rule: ExteriorRule) -> np.ndarray:
    dom = w.domain
    s = w.s
    q = 4 if dom.dim == 1 else 2
    pts_all, xw = _sub_points(dom, q)
    nc, nq, _ = pts_all.shape
    out = np.zeros((3, nc))
    chunk = max(1, 4096 // nq)
    for start in range(0, nc, chunk):
        sl = slice(start, min(nc, start + chunk))
        pts = pts_all[sl].reshape(-1, dom.dim)
        dirs, aw = _ray_directions(dom, pts, w.tail_angles)
        r0 = _exit_distance(dom, pts, dirs)
        if isinstance(rule, ConstantExterior):
            t0 = _antideriv(r0, s)
            m = [t0, rule.value * t0, rule.value**2 * t0]
        else:
            sign_rule = rule.limit if isinstance(rule, ProfileExterior) else rule
            plus, minus = _sign_split(sign_rule, pts, dirs, r0, s)
            m = [plus + minus, plus - minus, plus + minus]
            if isinstance(rule, ProfileExterior):
                c1, c2 = _profile_correction(rule, pts, dirs, r0, s)
                m[1] = m[1] + c1
                m[2] = m[2] + c2
        for i in range(3):
            per_pt = (m[i] * aw).sum(axis=1).reshape(-1, nq)
            out[i, sl] = per_pt @ xw
    out *= dom.cell_volume
    return out.reshape((3,) + dom.omega_shape)


# ---------------------------------------------------------------------------
# double integrals


def _mask(dom: BoxDomain, region) -> np.ndarray:
    m = np.asarray(region, dtype=bool)
    if m.shape != dom.grid_shape:
        raise DomainError("cell subset must be a boolean mask over the extended grid")
    return m


def interaction(u: ScalarField, E, F, w: KernelWeights) -> float:
    """u(E, F) = sum_{i in E, j in F} w_ij (u_i - u_j)^2 for cell subsets of the grid."""
    dom = w.domain
    E = _mask(dom, E)
    F = _mask(dom, F)
    # rows from a canonical one of the two sets, so u(E, F) == u(F, E) bit for bit
    if (int(F.sum()), F.tobytes()) < (int(E.sum()), E.tobytes()):
        E, F = F, E
    ia, ib = np.nonzero(E)
    e, _ = _kernels.row_sums(u.values, w.table, ia.astype(np.int64), ib.astype(np.int64), F)
    return float(e.sum())


def interior_energy(u: ScalarField, w: KernelWeights):
    """(1/2) u(Omega, Omega) and its gradient with respect to the interior values."""
    e, g = _kernels.block_energy_grad(np.ascontiguousarray(u.interior), w.table)
    return e, g


def exterior_energy(u: ScalarField, w: KernelWeights):
    """u(Omega, C Omega) (collar cells plus analytic tail) and its gradient."""
    m0, m1, m2 = w.exterior_moments(u)
    ui = u.interior
    per_cell = m0 * ui * ui - 2.0 * m1 * ui + m2
    return float(per_cell.sum()), 2.0 * (m0 * ui - m1), per_cell


def gagliardo(u: ScalarField, w: KernelWeights) -> float:
    """K(u, Omega) = (1/2) u(Omega, Omega) + u(Omega, C Omega)."""
    if u.domain != w.domain:
        raise DomainError("field and weights live on different domains")
    inner, _ = interior_energy(u, w)
    outer, _, _ = exterior_energy(u, w)
    return inner + outer


def set_interaction(A, D, w: KernelWeights) -> float:
    """L(A, D) = sum_{i in A, j in D} w_ij for disjoint cell subsets."""
    dom = w.domain
    A = _mask(dom, A)
    D = _mask(dom, D)
    if np.any(A & D):
        raise ValueError("set_interaction requires disjoint subsets")
    ia, ib = np.nonzero(A)
    return float(_kernels.set_pair_sum(w.table, ia.astype(np.int64), ib.astype(np.int64), D))


def local_gagliardo(u: ScalarField, E, w: KernelWeights) -> float:
    """K(u, E) = (1/2) u(E, E) + u(E, C E) for an interior subset E of Omega."""
    dom = w.domain
    E = _mask(dom, E)
    interior = dom.interior_mask()
    if np.any(E & ~interior):
        raise ValueError("local_gagliardo needs a subset of Omega")
    ia, ib = np.nonzero(E)
    ia = ia.astype(np.int64)
    ib = ib.astype(np.int64)
    full = np.ones(dom.grid_shape, dtype=bool)
    e_all, _ = _kernels.row_sums(u.values, w.table, ia, ib, full)
    e_in, _ = _kernels.row_sums(u.values, w.table, ia, ib, E)
    tail = w.tail_moments(u.exterior)
    sl = dom.omega_slices
    Ei = E[sl]
    ui = u.interior[Ei]
    tail_term = tail[0][Ei] * ui * ui - 2.0 * tail[1][Ei] * ui + tail[2][Ei]
    return float(e_all.sum() - 0.5 * e_in.sum() + tail_term.sum())


# ---------------------------------------------------------------------------
# binary cache of weight tables

_MAGIC = b"NLACW001"


def save_weights(path, w: KernelWeights) -> None:
    """Header (dims, h, s, refinement, near radius, rule) followed by the row-major table."""
    t = np.ascontiguousarray(w.table, dtype="<f8")
    rule = NEAR_RULES.index(w.near_rule)
    hdr = struct.pack("<8sIIIdddII", _MAGIC, w.domain.dim, t.shape[0], t.shape[1], w.domain.h, w.s,
                      w.near_radius, w.refinement, rule)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(t.tobytes())


def load_weights(path, domain: BoxDomain) -> KernelWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    size = struct.calcsize("<8sIIIdddII")
    magic, dim, n0, n1, h, s, radius, refinement, rule = struct.unpack("<8sIIIdddII", raw[:size])
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a weight-table file")
    if dim != domain.dim or (n0, n1) != domain.grid_shape or h != domain.h:
        raise ValueError(f"{path}: table does not match the domain")
    table = np.frombuffer(raw[size:], dtype="<f8").reshape(n0, n1).copy()
    table.setflags(write=False)
    return KernelWeights(s, domain, table, refinement, NEAR_RULES[rule], radius)


def cached_weights(domain: BoxDomain, s: float, refinement: int = 8, cache_dir=None,
                   **kw) -> KernelWeights:
    """build_weights with an optional on-disk cache keyed by (domain, s, refinement, rule)."""
    if cache_dir is None:
        return build_weights(domain, s, refinement, **kw)
    rule = kw.get("near_rule") or default_near_rule(s)
    key = repr((domain.key(), float(s), int(refinement), rule, kw.get("near_radius", 3.0)))
    name = hashlib.sha1(key.encode()).hexdigest()[:20] + ".bin"
    path = Path(cache_dir) / name
    if path.exists():
        w = load_weights(path, domain)
        if w.s == float(s) and w.refinement == refinement and w.near_rule == rule:
            return w
    w = build_weights(domain, s, refinement, **kw)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(path, w)
    return w
