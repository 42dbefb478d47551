"""Uniform cell grids on boxes in R^n (n = 1, 2), fields and pixel sets.

A :class:`BoxDomain` covers the open box Omega plus a discretized exterior
collar of width ``collar_radius``.  Everything lives on the *extended grid*
(Omega plus collar); beyond the collar the exterior data is described
analytically by an exterior rule so that kernel tails can be integrated in
closed form or along rays.

Arrays are always stored with ``ndim == 2``.  A 1D grid has shape ``(1, N)``
so that the kernel code handles both dimensions with the same loops.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

_REL_TOL = 1e-12


class DomainError(ValueError):
    """Raised for inconsistent grid geometry or mismatched domains."""


def _as_multiple(length: float, h: float, what: str) -> int:
    k = length / h
    n = int(round(k))
    if n < 0 or abs(k - n) > _REL_TOL * max(1.0, abs(k)):
        raise DomainError(f"{what} {length!r} is not an integer multiple of h={h!r}")
    return n


@dataclass(frozen=True)
class BoxDomain:
    """Box Omega = prod [lower_k, upper_k] with a collar of exterior cells."""

    dim: int
    lower: tuple
    upper: tuple
    h: float
    collar_radius: float
    cells: tuple = field(init=False)  # interior cells per axis
    collar_cells: int = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise DomainError("lower/upper must have length dim")
        if not self.h > 0:
            raise DomainError("h must be positive")
        if self.collar_radius < 0:
            raise DomainError("collar_radius must be >= 0")
        cells = []
        for lo, up in zip(self.lower, self.upper):
            if not up - lo > 0:
                raise DomainError(f"empty extent [{lo}, {up}]")
            cells.append(_as_multiple(up - lo, self.h, f"extent {up - lo}"))
        object.__setattr__(self, "cells", tuple(cells))
        object.__setattr__(
            self, "collar_cells", _as_multiple(self.collar_radius, self.h, "collar_radius")
        )

    # grid shapes -------------------------------------------------------
    @property
    def grid_shape(self) -> tuple:
        """Shape of the extended grid, always 2-tuple (1D uses a leading 1)."""
        c = self.collar_cells
        if self.dim == 1:
            return (1, self.cells[0] + 2 * c)
        return (self.cells[0] + 2 * c, self.cells[1] + 2 * c)

    @property
    def omega_slices(self) -> tuple:
        c = self.collar_cells
        if self.dim == 1:
            return (slice(0, 1), slice(c, c + self.cells[0]))
        return (slice(c, c + self.cells[0]), slice(c, c + self.cells[1]))

    @property
    def omega_shape(self) -> tuple:
        return (1, self.cells[0]) if self.dim == 1 else tuple(self.cells)

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.cells))

    @property
    def n_collar(self) -> int:
        return int(np.prod(self.grid_shape)) - self.n_interior

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def outer_lower(self) -> np.ndarray:
        return np.asarray(self.lower, float) - self.collar_radius

    @property
    def outer_upper(self) -> np.ndarray:
        return np.asarray(self.upper, float) + self.collar_radius

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.grid_shape, dtype=bool)
        m[self.omega_slices] = True
        return m

    def centers(self) -> np.ndarray:
        """Cell centres of the extended grid, shape ``grid_shape + (dim,)``."""
        lo = self.outer_lower
        if self.dim == 1:
            x = lo[0] + self.h * (np.arange(self.grid_shape[1]) + 0.5)
            return x.reshape(1, -1, 1)
        x = lo[0] + self.h * (np.arange(self.grid_shape[0]) + 0.5)
        y = lo[1] + self.h * (np.arange(self.grid_shape[1]) + 0.5)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def index_of(self, point: Sequence[float]) -> tuple:
        """Grid index of the cell containing ``point`` (extended grid)."""
        p = np.atleast_1d(np.asarray(point, float))
        k = np.floor((p - self.outer_lower) / self.h).astype(int)
        if self.dim == 1:
            return (0, int(k[0]))
        return (int(k[0]), int(k[1]))

    def key(self) -> tuple:
        return (self.dim, tuple(map(float, self.lower)), tuple(map(float, self.upper)),
                float(self.h), float(self.collar_radius))

    def ball_mask(self, center: Sequence[float], radius: float, interior_only=True) -> np.ndarray:
        """Cells whose centre lies in the open ball B_radius(center)."""
        c = self.centers() - np.asarray(center, float).reshape(1, 1, -1)
        m = np.sqrt((c**2).sum(-1)) < radius
        return m & self.interior_mask() if interior_only else m

    def box_mask(self, lower, upper, interior_only=True) -> np.ndarray:
        """Cells whose centre lies in the open box prod (lower_k, upper_k)."""
        c = self.centers()
        m = np.ones(self.grid_shape, dtype=bool)
        for k in range(self.dim):
            m &= (c[..., k] > lower[k]) & (c[..., k] < upper[k])
        return m & self.interior_mask() if interior_only else m


def build_domain(dim: int, lower, upper, h: float, collar_radius: float) -> BoxDomain:
    """Build a :class:`BoxDomain`; raises :class:`DomainError` when h does not divide extents."""
    lower = tuple(float(v) for v in np.atleast_1d(lower))
    upper = tuple(float(v) for v in np.atleast_1d(upper))
    return BoxDomain(dim, lower, upper, float(h), float(collar_radius))


# ---------------------------------------------------------------------------
# exterior rules


@dataclass(frozen=True)
class ConstantExterior:
    value: float

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise DomainError("exterior constant must lie in [-1, 1]")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.full(pts.shape[:-1], float(self.value))

    def key(self):
        return ("const", float(self.value))


@dataclass(frozen=True)
class SignRule:
    """+1 on the convex set {y : normal_k . y > offset_k for all k}, -1 elsewhere.

    One half-space gives the half-space rule; several give a convex polygon
    (the tilted square of the ``gamma2d-square`` scenario).  ``negate`` swaps
    the two values.
    """

    normals: tuple
    offsets: tuple
    negate: bool = False

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a, b in zip(self.normals, self.offsets):
            inside &= pts @ np.asarray(a, float) > b
        out = np.where(inside, 1.0, -1.0)
        return -out if self.negate else out

    def key(self):
        return ("sign", tuple(map(tuple, self.normals)), tuple(self.offsets), self.negate)


def half_space(normal, offset: float = 0.0) -> SignRule:
    """Sign rule +1 on {normal . y > offset}."""
    return SignRule((tuple(float(v) for v in np.atleast_1d(normal)),), (float(offset),))


@dataclass(frozen=True)
class ProfileExterior:
    """Exterior given by an evaluator y -> u(y), e.g. a recovery sequence.

    ``limit`` is the sign rule the evaluator approaches far from the
    interface; it is used beyond the ray-quadrature range of the tail.
    """

    evaluator: Optional[Callable[[np.ndarray], np.ndarray]]
    limit: SignRule
    tag: str = "profile"

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        if self.evaluator is None:
            raise DomainError(f"analytic-profile exterior {self.tag!r} has no registered evaluator")
        return np.clip(np.asarray(self.evaluator(pts), float), -1.0, 1.0)

    def key(self):
        return ("profile", self.tag, self.evaluator, self.limit.key())


ExteriorRule = Union[ConstantExterior, SignRule, ProfileExterior]


# ---------------------------------------------------------------------------
# fields and sets


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell values of u on the extended grid plus the rule for u beyond it."""

    domain: BoxDomain
    values: np.ndarray
    exterior: ExteriorRule

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.grid_shape:
            raise DomainError(f"values shape {v.shape} != grid shape {self.domain.grid_shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        if v.min(initial=0.0) < -1.0 or v.max(initial=0.0) > 1.0:
            raise DomainError("field values must lie in [-1, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.domain.omega_slices]

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.domain, values, self.exterior)


@dataclass(frozen=True, eq=False)
class IndicatorSet:
    """Pixel set E on the extended grid; ``exterior`` decides beyond the collar."""

    domain: BoxDomain
    mask: np.ndarray
    exterior: Union[bool, SignRule] = False

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.domain.grid_shape:
            raise DomainError(f"mask shape {m.shape} != grid shape {self.domain.grid_shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def exterior_rule(self) -> ExteriorRule:
        if isinstance(self.exterior, SignRule):
            return self.exterior
        return ConstantExterior(1.0 if self.exterior else -1.0)


def indicator_from_rule(domain: BoxDomain, rule: SignRule) -> IndicatorSet:
    """Pixel set of cells whose centre satisfies ``rule`` (+1), with the same exterior."""
    return IndicatorSet(domain, rule(domain.centers()) > 0, rule)


def constant_field(domain: BoxDomain, value: float) -> ScalarField:
    return ScalarField(domain, np.full(domain.grid_shape, float(value)), ConstantExterior(value))


def to_field(E: IndicatorSet) -> ScalarField:
    """chi_E - chi_{CE}: +1 on masked cells, -1 elsewhere."""
    return ScalarField(E.domain, np.where(E.mask, 1.0, -1.0), E.exterior_rule())


def threshold(u: ScalarField, level: float = 0.0) -> IndicatorSet:
    """Pixel set {u > level}; the exterior rule is carried over when it is a sign rule."""
    ext = u.exterior
    if isinstance(ext, ProfileExterior):
        ext = ext.limit
    if isinstance(ext, ConstantExterior):
        ext = ext.value > level
    return IndicatorSet(u.domain, u.values > level, ext)


def _region_mask(domain: BoxDomain, region) -> np.ndarray:
    if region is None:
        return domain.interior_mask()
    m = np.asarray(region, dtype=bool)
    if m.shape != domain.grid_shape:
        raise DomainError("region mask does not match the grid")
    return m


def l1_distance(a: ScalarField, b: ScalarField, region=None) -> float:
    """sum |a - b| h^n over ``region`` (default: Omega)."""
    if a.domain != b.domain:
        raise DomainError("fields live on different domains")
    m = _region_mask(a.domain, region)
    return float(np.abs(a.values - b.values)[m].sum() * a.domain.cell_volume)


def collar_fill(domain: BoxDomain, rule: ExteriorRule, interior: Optional[np.ndarray] = None) -> np.ndarray:
    """Grid values: ``interior`` on Omega (default: the rule itself) and the rule on the collar."""
    vals = np.asarray(rule(domain.centers()), float)
    if interior is not None:
        vals = vals.copy()
        vals[domain.omega_slices] = np.asarray(interior, float).reshape(domain.omega_shape)
    return vals


# ---------------------------------------------------------------------------
# plain-text I/O


def write_mask(path, E: IndicatorSet) -> None:
    """Mask as a {0,1} matrix, one grid row per line (1D: one line)."""
    np.savetxt(path, E.mask.astype(int), fmt="%d")


def read_mask(path, domain: BoxDomain, exterior: Union[bool, SignRule] = False) -> IndicatorSet:
    m = np.loadtxt(path, dtype=int, ndmin=2)
    if m.shape != domain.grid_shape:
        raise DomainError(f"{path}: mask shape {m.shape} != grid shape {domain.grid_shape}")
    if not np.isin(m, (0, 1)).all():
        raise DomainError(f"{path}: mask entries must be 0 or 1")
    return IndicatorSet(domain, m.astype(bool), exterior)


def write_field_csv(path, u: ScalarField) -> None:
    """Rows ``index, x[, y], value`` over the extended grid."""
    c = u.domain.centers()
    flat = u.values.reshape(-1)
    coords = c.reshape(-1, u.domain.dim)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + ["x", "y"][: u.domain.dim] + ["value"])
        for i, (xy, v) in enumerate(zip(coords, flat)):
            w.writerow([i] + [repr(float(t)) for t in xy] + [repr(float(v))])


def read_field_csv(path, domain: BoxDomain, exterior: ExteriorRule) -> ScalarField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    vals = np.array([float(r[-1]) for r in rows])
    if vals.size != int(np.prod(domain.grid_shape)):
        raise DomainError(f"{path}: expected {np.prod(domain.grid_shape)} rows, got {vals.size}")
    return ScalarField(domain, vals.reshape(domain.grid_shape), exterior)


def omega_n(dim: int) -> float:
    """Volume of the unit ball in R^dim (omega_0 = 1, omega_1 = 2)."""
    exact = {0: 1.0, 1: 2.0, 2: math.pi}
    if dim in exact:
        return exact[dim]
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
