"""Double-well potential and the scaled energies J_eps, F_eps, I_eps.

    J_eps(u, U) = eps^{2s} K(u, U) + int_U W(u)
    F_eps(u, U) = J_eps(u, U) / scaling(eps, s)
    I_eps(u, U) = (eps^{2s} u(U, U) / 2 + int_U W(u)) / scaling(eps, s)      (s >= 1/2)

with scaling eps^{2s}, eps |log eps| or eps below, at, or above s = 1/2.
I_eps drops the interaction of U with its complement, so I_eps <= F_eps.
For s < 1/2 it is not defined by the theory; here it is set equal to F_eps
and ``EnergyBreakdown.i_eps_by_convention`` is raised.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .core_grid import DomainError, ScalarField
from .nonlocal_kernel import KernelWeights, exterior_energy, interior_energy, interaction, local_gagliardo


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potential W on [-1, 1] with its first two derivatives."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    first_derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]


def quartic() -> PotentialSpec:
    """W(u) = (1 - u^2)^2 / 4."""
    return PotentialSpec(
        "quartic",
        lambda u: 0.25 * (1.0 - u * u) ** 2,
        lambda u: u * (u * u - 1.0),
        lambda u: 3.0 * u * u - 1.0,
    )


@dataclass
class PotentialReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list:
        return [k for k, ok in self.checks.items() if not ok]


def validate_potential(p: PotentialSpec, samples: int = 2001, tol: float = 1e-12) -> PotentialReport:
    """Check W(+-1) = 0, W'(+-1) = 0, W''(+-1) > 0 and W > 0 on interior samples."""
    ends = np.array([-1.0, 1.0])
    inner = np.linspace(-1.0, 1.0, samples + 2)[1:-1]
    rep = PotentialReport()
    rep.checks["W(+-1) = 0"] = bool(np.all(np.abs(p.value(ends)) <= tol))
    rep.checks["W'(+-1) = 0"] = bool(np.all(np.abs(p.first_derivative(ends)) <= tol))
    rep.checks["W''(+-1) > 0"] = bool(np.all(p.second_derivative(ends) > 0))
    rep.checks["W > 0 inside"] = bool(np.all(p.value(inner) > 0))
    return rep


class Regime(enum.Enum):
    BELOW = "below"
    HALF = "half"
    ABOVE = "above"


def regime_for(s: float, tag: Optional[str] = None) -> Regime:
    """Regime of s.  An explicit ``tag`` wins; otherwise s == 0.5 is tested exactly."""
    if tag is not None:
        reg = Regime(tag)
        expected = Regime.BELOW if s < 0.5 else Regime.ABOVE if s > 0.5 else Regime.HALF
        if abs(s - 0.5) > 1e-9 and reg is not expected:
            raise ValueError(f"regime tag {tag!r} inconsistent with s={s}")
        return reg
    if s == 0.5:
        return Regime.HALF
    return Regime.BELOW if s < 0.5 else Regime.ABOVE


def scaling_factor(eps: float, s: float, regime: Optional[Regime] = None) -> float:
    """eps^{2s} (s < 1/2), eps |log eps| (s = 1/2) or eps (s > 1/2)."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    regime = regime or regime_for(s)
    if regime is Regime.BELOW:
        return eps ** (2 * s)
    if regime is Regime.HALF:
        return eps * abs(math.log(eps))
    return eps


@dataclass(frozen=True)
class EnergyBreakdown:
    interior_seminorm: float
    exterior_interaction: float
    potential: float
    eps: float
    s: float
    h: float
    j_eps: float
    f_eps: float
    i_eps: float
    i_eps_by_convention: bool = False

    CSV_HEADER = ("s", "eps", "h", "interior", "exterior", "potential", "J", "F", "I")

    @property
    def kinetic(self) -> float:
        return self.interior_seminorm + self.exterior_interaction

    def csv_row(self) -> list:
        return [repr(float(v)) for v in (self.s, self.eps, self.h, self.interior_seminorm,
                                         self.exterior_interaction, self.potential,
                                         self.j_eps, self.f_eps, self.i_eps)]


def _check(u: ScalarField, w: KernelWeights):
    if u.domain != w.domain:
        raise DomainError("field and weights live on different domains")


def potential_integral(u: ScalarField, p: PotentialSpec, region=None) -> float:
    """h^n sum W(u_i) over Omega (or over an interior cell mask)."""
    dom = u.domain
    if region is None:
        vals = u.interior
    else:
        vals = u.values[np.asarray(region, bool)]
    return float(p.value(vals).sum() * dom.cell_volume)


def total_energy(u: ScalarField, w: KernelWeights, p: PotentialSpec, eps: float,
                 regime: Optional[Regime] = None) -> EnergyBreakdown:
    _check(u, w)
    s = w.s
    regime = regime or regime_for(s)
    scale = scaling_factor(eps, s, regime)
    inner, _ = interior_energy(u, w)
    outer, _, _ = exterior_energy(u, w)
    pot = potential_integral(u, p)
    e2s = eps ** (2 * s)
    j = e2s * (inner + outer) + pot
    # kinetic factor first: for s < 1/2 it is exactly 1.0, so F = K bit for bit on sharp fields
    kin = e2s / scale
    f = kin * (inner + outer) + pot / scale
    if regime is Regime.BELOW:
        i, flag = f, True
    else:
        i, flag = kin * inner + pot / scale, False
    return EnergyBreakdown(inner, outer, pot, eps, s, u.domain.h, j, f, i, flag)


def unscaled_energy(u: ScalarField, w: KernelWeights, p: PotentialSpec) -> float:
    """E(u, Omega) = K(u, Omega) + int_Omega W(u)."""
    _check(u, w)
    inner, _ = interior_energy(u, w)
    outer, _, _ = exterior_energy(u, w)
    return inner + outer + potential_integral(u, p)


def energy_and_gradient(u: ScalarField, w: KernelWeights, p: PotentialSpec, eps: float):
    """J_eps and dJ_eps/du_i over the interior cells (shape ``omega_shape``)."""
    _check(u, w)
    inner, g_in = interior_energy(u, w)
    outer, g_out, _ = exterior_energy(u, w)
    ui = u.interior
    hn = u.domain.cell_volume
    e2s = eps ** (2 * w.s)
    j = e2s * (inner + outer) + hn * float(p.value(ui).sum())
    g = e2s * (g_in + g_out) + hn * p.first_derivative(ui)
    return j, g


def energy_gradient(u: ScalarField, w: KernelWeights, p: PotentialSpec, eps: float) -> np.ndarray:
    """Gradient of the discrete J_eps with respect to the interior cell values."""
    return energy_and_gradient(u, w, p, eps)[1]


def hessian_vector(u: ScalarField, w: KernelWeights, p: PotentialSpec, eps: float,
                   v: np.ndarray) -> np.ndarray:
    """Hessian of J_eps at u applied to an interior-shaped direction v.

    The kinetic part is quadratic, so its Hessian applied to v is the
    kinetic gradient evaluated at v with zero exterior data.
    """
    _check(u, w)
    v = np.ascontiguousarray(np.asarray(v, float).reshape(u.domain.omega_shape))
    _, g_in = _kernels.block_energy_grad(v, w.table)
    m0 = w.exterior_moments(u)[0]
    hn = u.domain.cell_volume
    return eps ** (2 * w.s) * (g_in + 2.0 * m0 * v) + hn * p.second_derivative(u.interior) * v


# ---------------------------------------------------------------------------
# localized functionals


def _interior_subset(u: ScalarField, E) -> np.ndarray:
    E = np.asarray(E, bool)
    if E.shape != u.domain.grid_shape:
        raise DomainError("cell subset must be a mask over the extended grid")
    if np.any(E & ~u.domain.interior_mask()):
        raise ValueError("localized energies need a subset of Omega")
    return E


def local_f_eps(u: ScalarField, E, w: KernelWeights, p: PotentialSpec, eps: float,
                regime: Optional[Regime] = None) -> float:
    """F_eps(u, E) with K(u, E) = u(E, E)/2 + u(E, CE); CE includes everything outside E."""
    E = _interior_subset(u, E)
    scale = scaling_factor(eps, w.s, regime)
    k = local_gagliardo(u, E, w)
    return eps ** (2 * w.s) / scale * k + potential_integral(u, p, E) / scale


def local_i_eps(u: ScalarField, E, w: KernelWeights, p: PotentialSpec, eps: float,
                regime: Optional[Regime] = None) -> float:
    """I_eps(u, E); equal to F_eps(u, E) for s < 1/2."""
    E = _interior_subset(u, E)
    regime = regime or regime_for(w.s)
    if regime is Regime.BELOW:
        return local_f_eps(u, E, w, p, eps, regime)
    scale = scaling_factor(eps, w.s, regime)
    inner = 0.5 * interaction(u, E, E, w)
    return eps ** (2 * w.s) / scale * inner + potential_integral(u, p, E) / scale


@dataclass
class SubadditivityReport:
    f_union: float
    f_sum: float
    i_union: float
    i_sum: float
    tol: float

    @property
    def f_subadditive(self) -> bool:
        return self.f_union <= self.f_sum + self.tol

    @property
    def i_superadditive(self) -> bool:
        return self.i_union >= self.i_sum - self.tol

    @property
    def passed(self) -> bool:
        return self.f_subadditive and self.i_superadditive


def subadditivity_check(u: ScalarField, w: KernelWeights, p: PotentialSpec, eps: float, E, F,
                        rel_tol: float = 1e-12) -> SubadditivityReport:
    """F_eps(u, E u F) <= F_eps(u, E) + F_eps(u, F) and the reverse inequality for I_eps."""
    E = _interior_subset(u, E)
    F = _interior_subset(u, F)
    if np.any(E & F):
        raise ValueError("E and F must be disjoint")
    U = E | F
    fu, fe, ff = (local_f_eps(u, X, w, p, eps) for X in (U, E, F))
    iu, ie, i_f = (local_i_eps(u, X, w, p, eps) for X in (U, E, F))
    tol = rel_tol * (1.0 + abs(fu) + abs(fe) + abs(ff))
    return SubadditivityReport(fu, fe + ff, iu, ie + i_f, tol)
