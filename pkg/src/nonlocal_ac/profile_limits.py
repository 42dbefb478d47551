"""The 1D optimal profile, the interface constants b* and c*, and limit objects.

The 1D profile u0 minimizes E(u, (-L, L)) = K(u, (-L, L)) + int W(u) with
exterior data sign(t).  It is odd, increasing, and 1 - |u0(t)| decays like
|t|^{-2s}.  Its energy on growing balls B_R = (-R, R) defines b*:

    s > 1/2 :  E(u0, B_R)          -> b*
    s = 1/2 :  E(u0, B_R) / log R  -> b*

For s > 1/2 the ladder converges slowly because E(u0, B_R) does not see the
pairs of CB_R x CB_R.  Their leading part is the closed-form interaction of
the two half-lines {t < -R} and {t > R} with values -1 and +1,

    Delta(R) = 4 (2R)^{1-2s} / (2s (2s - 1)),

so ``estimate_bstar`` extrapolates E + Delta.  For s = 1/2 the log
coefficient is the slope of E(u0, B_R) against log R.  In both cases the
last three values are extrapolated by Aitken's delta-squared rule: the
remainder rate depends on how far the ladder is into the algebraic tail of
u0, so it is measured from the ladder rather than assumed.

c* converts b* to energy per unit interface measure.  With omega_0 = 1 it is
b* itself in 1D.  In 2D a planar profile sees the kernel integrated along
the interface, which multiplies the 1D kinetic term by
C(s) = int (1 + tau^2)^{-1-s} dtau; re-optimizing the layer width gives
c*_2D = C(s)^{1/(2s)} c*_1D for s > 1/2 and c*_2D = C(1/2) c*_1D = 2 c*_1D
for s = 1/2 (only the log coefficient survives the |eps log eps| scaling).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .core_grid import (
    BoxDomain,
    DomainError,
    IndicatorSet,
    ProfileExterior,
    ScalarField,
    SignRule,
    build_domain,
    collar_fill,
    half_space,
    omega_n,
    to_field,
)
from .energy_model import (
    EnergyBreakdown,
    PotentialSpec,
    Regime,
    local_f_eps,
    local_i_eps,
    potential_integral,
    quartic,
    regime_for,
    total_energy,
)
from .minimizer import MinimizeConfig, minimize
from .nonlocal_kernel import KernelWeights, build_weights, gagliardo, interaction, local_gagliardo


class ProfileError(RuntimeError):
    """The computed profile contradicts a structural property (e.g. monotonicity)."""


@dataclass
class ProfileResult:
    s: float
    t: np.ndarray  # recentred cell centres
    u: np.ndarray
    L: float
    h: float
    b_star: float
    c_star: float
    decay_exponent_fit: float
    derivative_decay_fit: float
    R_ladder: list  # (R, E(u0, B_R) / normalizer)
    exterior_share: list  # (R, u0(B_R, CB_R) / E(u0, B_R))
    energy: float
    shift: float
    converged: bool
    monotone: bool
    antisymmetry: float
    b_star_band: float = float("nan")
    solution: Optional[ScalarField] = field(default=None, repr=False)
    weights: Optional[KernelWeights] = field(default=None, repr=False)

    def __call__(self, t) -> np.ndarray:
        """Linear interpolation of u0, clamped to -1 / +1 beyond the tabulated range."""
        return np.interp(t, self.t, self.u, left=-1.0, right=1.0)

    @property
    def omega_convention(self) -> float:
        return omega_n(0)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "u0"])
            for t, u in zip(self.t, self.u):
                wr.writerow([repr(float(t)), repr(float(u))])

    def summary(self) -> dict:
        return {
            "s": self.s, "L": self.L, "h": self.h, "b_star": self.b_star, "c_star": self.c_star,
            "b_star_band": self.b_star_band, "decay_exponent_fit": self.decay_exponent_fit,
            "derivative_decay_fit": self.derivative_decay_fit, "energy": self.energy,
            "converged": self.converged, "monotone": self.monotone, "antisymmetry": self.antisymmetry,
        }


def exterior_pair_deficit(R: float, s: float) -> float:
    """Interaction of the half-lines (-inf, -R) and (R, inf) carrying -1 and +1 (s > 1/2)."""
    if s <= 0.5:
        return math.inf
    return 4.0 * (2.0 * R) ** (1.0 - 2.0 * s) / (2.0 * s * (2.0 * s - 1.0))


def transverse_factor(s: float) -> float:
    """C(s) = int_R (1 + tau^2)^{-1-s} dtau = sqrt(pi) Gamma(s + 1/2) / Gamma(s + 1)."""
    return math.sqrt(math.pi) * math.gamma(s + 0.5) / math.gamma(s + 1.0)


def cstar(c_star_1d: float, s: float, dim: int) -> float:
    """Interface energy per unit (n-1)-measure in dimension ``dim`` from the 1D constant."""
    if dim == 1:
        return c_star_1d
    if dim != 2:
        raise ValueError("dim must be 1 or 2")
    if s == 0.5:
        return transverse_factor(s) * c_star_1d
    if s < 0.5:
        raise ValueError("c* is only defined for s >= 1/2")
    return transverse_factor(s) ** (1.0 / (2.0 * s)) * c_star_1d


def _zero_crossing(t, u) -> float:
    k = int(np.searchsorted(u, 0.0))
    if k == 0 or k == u.size:
        raise ProfileError("profile has no zero crossing")
    t0, t1, u0, u1 = t[k - 1], t[k], u[k - 1], u[k]
    return float(t0 - u0 * (t1 - t0) / (u1 - u0))


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _ball_energies(uf: ScalarField, w: KernelWeights, p: PotentialSpec, centre: float, R: float):
    """E(u, B_R) and u(B_R, CB_R) with B_R = cells whose centre is within R of ``centre``."""
    dom = uf.domain
    B = dom.ball_mask([centre], R)
    k = local_gagliardo(uf, B, w)
    inner = 0.5 * interaction(uf, B, B, w)
    return k + potential_integral(uf, p, B), k - inner


def solve_profile(s: float, L: float, h: float, p: Optional[PotentialSpec] = None, *,
                  refinement: int = 8, collar: Optional[float] = None, init: str = "tanh",
                  ladder: int = 4, max_iters: int = 20000, check: bool = True) -> ProfileResult:
    """Minimize the unscaled 1D energy on (-L, L) with exterior sign(t).

    ``init`` is ``"tanh"`` (odd start) or ``"shifted"`` (tanh centred at L/10),
    which tests the translation gauge.  ``check=True`` enforces L >= 20 and
    h <= 0.05 and raises :class:`ProfileError` for a non-monotone result.
    """
    if check and (L < 20 or h > 0.05):
        raise ValueError("solve_profile needs L >= 20 and h <= 0.05")
    p = p or quartic()
    collar = collar if collar is not None else h * max(1, round(2.0 / h))
    dom = build_domain(1, [-L], [L], h, collar)
    rule = half_space([1.0])
    w = build_weights(dom, s, refinement)
    x = dom.centers()[dom.omega_slices][..., 0].ravel()
    start = np.tanh(x) if init == "tanh" else np.tanh(x - L / 10.0)
    u0 = ScalarField(dom, collar_fill(dom, rule, start), rule)
    res = minimize(u0, MinimizeConfig(max_iters=max_iters), w, p, None)
    u = res.field.interior.ravel().copy()
    monotone = bool(np.all(np.diff(u) > 0))
    if check and not monotone:
        raise ProfileError("converged profile is not increasing")
    shift = _zero_crossing(x, u)
    t = x - shift
    anti = float(np.max(np.abs(u + u[::-1])))

    pos = (t >= L / 4) & (t <= L / 2)
    decay = _slope(t[pos], 1.0 - u[pos])
    du = np.gradient(u, x)
    deriv = _slope(t[pos], np.abs(du[pos]))

    reg = regime_for(s)
    radii = [L / 2**k for k in range(ladder, 0, -1)]
    ladder_vals, shares = [], []
    for R in radii:
        e, ext = _ball_energies(res.field, w, p, shift, R)
        norm = math.log(R) if reg is Regime.HALF else (R ** (1 - 2 * s) if reg is Regime.BELOW else 1.0)
        ladder_vals.append((R, e / norm))
        shares.append((R, ext / e))
    pr = ProfileResult(s, t, u, L, h, math.nan, math.nan, decay, deriv, ladder_vals, shares,
                       res.energy, shift, res.converged, monotone, anti, solution=res.field, weights=w)
    if reg is not Regime.BELOW:
        est = bstar_estimate(pr)
        pr.b_star, pr.b_star_band = est.value, est.band
        pr.c_star = pr.b_star / omega_n(0)
    return pr


@dataclass
class BstarEstimate:
    value: float
    band: float
    sequence: list  # values whose limit is b*
    differences: list
    cauchy: bool
    exterior_share_decreasing: bool


def bstar_estimate(pr: ProfileResult) -> BstarEstimate:
    """b* from the R-ladder, with the diagnostics used to accept it."""
    if len(pr.R_ladder) < 4:
        raise ValueError("the R-ladder needs at least 4 points")
    if pr.R_ladder[-1][0] > pr.L / 2 + 1e-12:
        raise ValueError("ladder radii must not exceed L/2")
    reg = regime_for(pr.s)
    R = np.array([r for r, _ in pr.R_ladder])
    v = np.array([e for _, e in pr.R_ladder])
    if reg is Regime.ABOVE:
        seq = v + np.array([exterior_pair_deficit(r, pr.s) for r in R])
    elif reg is Regime.HALF:
        e = v * np.log(R)
        seq = np.diff(e) / np.log(R[1:] / R[:-1])
    else:
        seq = v
    diffs = np.abs(np.diff(seq))
    cauchy = bool(np.all(diffs[1:] < diffs[:-1]))
    shares = [x for _, x in pr.exterior_share]
    share_dec = bool(np.all(np.diff(shares) < 0))
    value, band = float(seq[-1]), float(diffs[-1])
    if reg is not Regime.BELOW and seq.size >= 3:
        # Aitken: geometric remainder with the observed ratio of the last two steps
        d1, d2 = seq[-2] - seq[-3], seq[-1] - seq[-2]
        r = d2 / d1 if d1 != 0 else np.nan
        if 0 < r < 1:
            corr = d2 * r / (1.0 - r)
            value, band = float(seq[-1] + corr), float(abs(corr))
    return BstarEstimate(value, band, list(map(float, seq)), list(map(float, diffs)), cauchy, share_dec)


def estimate_bstar(pr: ProfileResult) -> float:
    """Extrapolated b*; rejects a ladder whose successive differences do not shrink."""
    est = bstar_estimate(pr)
    if not est.cauchy:
        raise ValueError(f"b* ladder is not Cauchy: differences {est.differences}")
    return est.value


# ---------------------------------------------------------------------------
# signed distance and recovery sequences


def _boundary_faces(E: IndicatorSet):
    """Pixel faces between masked and unmasked cells as segments (a, b), shape (m, 2, dim)."""
    dom = E.domain
    m = E.mask
    lo = dom.outer_lower
    h = dom.h
    if dom.dim == 1:
        k = np.flatnonzero(m[0, 1:] != m[0, :-1])
        x = lo[0] + h * (k + 1.0)
        return np.stack([x, x], axis=1)[:, :, None]
    segs = []
    i, j = np.nonzero(m[1:, :] != m[:-1, :])  # faces normal to x1
    x = lo[0] + h * (i + 1.0)
    y0 = lo[1] + h * j
    segs.append(np.stack([np.stack([x, y0], 1), np.stack([x, y0 + h], 1)], 1))
    i, j = np.nonzero(m[:, 1:] != m[:, :-1])  # faces normal to x2
    y = lo[1] + h * (j + 1.0)
    x0 = lo[0] + h * i
    segs.append(np.stack([np.stack([x0, y], 1), np.stack([x0 + h, y], 1)], 1))
    return np.concatenate(segs, axis=0)


def _distance_to_segments(pts: np.ndarray, segs: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(pts.shape[0])
    a = segs[:, 0, :]
    ab = segs[:, 1, :] - a
    ll = (ab * ab).sum(1)
    ll = np.where(ll > 0, ll, 1.0)
    for k in range(0, pts.shape[0], chunk):
        q = pts[k:k + chunk, None, :]
        tt = np.clip(((q - a) * ab).sum(-1) / ll, 0.0, 1.0)
        d = q - (a + tt[..., None] * ab)
        out[k:k + chunk] = np.sqrt((d * d).sum(-1).min(axis=1))
    return out


def signed_distance(A: IndicatorSet) -> np.ndarray:
    """Distance from every cell centre to the pixel boundary of A; positive inside A."""
    segs = _boundary_faces(A)
    if segs.shape[0] == 0:
        raise DomainError("signed_distance needs a set with boundary inside the grid")
    dom = A.domain
    c = dom.centers().reshape(-1, dom.dim)
    d = _distance_to_segments(c, segs).reshape(dom.grid_shape)
    return np.where(A.mask, d, -d)


def rule_signed_distance(rule: SignRule, pts: np.ndarray) -> np.ndarray:
    """Signed distance to the boundary of a sign-rule set, positive where the rule is +1.

    Exact for a single half-space and for rectangles (any orientation).
    """
    viol = []
    for a, b in zip(rule.normals, rule.offsets):
        a = np.asarray(a, float)
        viol.append((pts @ a - b) / np.linalg.norm(a))
    viol = np.stack(viol, axis=-1)
    inside = viol.min(axis=-1)
    outside = -np.sqrt((np.minimum(viol, 0.0) ** 2).sum(axis=-1))
    d = np.where(inside > 0, inside, outside)
    return -d if rule.negate else d


def recovery_sequence(A: IndicatorSet, pr: ProfileResult, eps: float) -> ScalarField:
    """u_eps(x) = u0(d(x) / eps) with d the signed distance to the boundary of A.

    On the grid d is the pixel-boundary distance; beyond the collar the
    exterior rule of A (a sign rule) supplies the distance analytically.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    rule = A.exterior_rule()
    if not isinstance(rule, SignRule):
        raise DomainError("recovery_sequence needs a sign-rule exterior")
    d = signed_distance(A)
    vals = np.clip(pr(d / eps), -1.0, 1.0)

    def evaluator(pts, rule=rule, pr=pr, eps=eps):
        return pr(rule_signed_distance(rule, pts) / eps)

    ext = ProfileExterior(evaluator, rule, f"recovery(s={pr.s}, eps={eps!r})")
    return ScalarField(A.domain, vals, ext)


# ---------------------------------------------------------------------------
# perimeters


def dilate_region(dom: BoxDomain, region: np.ndarray, delta: float) -> np.ndarray:
    """Cells within ``delta`` (rounded up to whole cells) of ``region``."""
    k = int(math.ceil(delta / dom.h - 1e-12))
    if k <= 0:
        return np.asarray(region, bool)
    struct = np.ones((1, 3) if dom.dim == 1 else (3, 3), bool)
    return ndimage.binary_dilation(region, struct, iterations=k)


def pixel_perimeter(E: IndicatorSet, region=None, dilation: float = 0.0) -> float:
    """h^{n-1} times the number of faces between E and its complement with both cells in region.

    ``region`` defaults to Omega; ``dilation > 0`` grows it first, which gives
    the closure variant Per(E, closure U) for small dilations.
    """
    dom = E.domain
    reg = dom.interior_mask() if region is None else np.asarray(region, bool)
    reg = dilate_region(dom, reg, dilation)
    m = E.mask
    count = 0
    for ax in range(2):
        if dom.dim == 1 and ax == 0:
            continue
        sl_a = [slice(None)] * 2
        sl_b = [slice(None)] * 2
        sl_a[ax] = slice(1, None)
        sl_b[ax] = slice(None, -1)
        sa, sb = tuple(sl_a), tuple(sl_b)
        count += int(np.sum((m[sa] != m[sb]) & reg[sa] & reg[sb]))
    return count * dom.h ** (dom.dim - 1)


@dataclass(frozen=True)
class NonlocalPerimeter:
    value: float
    divergent: bool  # s >= 1/2: the value grows without bound as h -> 0


def nonlocal_perimeter(E: IndicatorSet, w: KernelWeights) -> NonlocalPerimeter:
    """K(chi_E - chi_CE, Omega); flagged divergent for s >= 1/2."""
    return NonlocalPerimeter(gagliardo(to_field(E), w), w.s >= 0.5)


# ---------------------------------------------------------------------------
# gluing


@dataclass
class GlueResult:
    v: ScalarField
    outer_shell: int
    inner_shell: int
    cutoff: np.ndarray  # phi over the extended grid
    energy_report: EnergyBreakdown
    outer_scores: list
    inner_scores: list
    cutoff_slope: float  # largest discrete |grad phi|
    bound: float  # F(w, Omega) - F(w, D_delta) + I(u, D)
    d_delta: np.ndarray = field(repr=False, default=None)

    @property
    def excess(self) -> float:
        return self.energy_report.f_eps - self.bound


def _cross_with_tail(f: ScalarField, A: np.ndarray, B: np.ndarray, w: KernelWeights,
                     with_tail: bool) -> float:
    """f(A, B) on the grid, plus f(A, beyond collar) if ``with_tail``."""
    val = interaction(f, A, B, w)
    if with_tail:
        dom = f.domain
        tm = w.tail_moments(f.exterior)
        Ai = A[dom.omega_slices]
        ui = f.interior[Ai]
        val += float((tm[0][Ai] * ui * ui - 2 * tm[1][Ai] * ui + tm[2][Ai]).sum())
    return val


def _discrete_slope(phi: np.ndarray, h: float) -> float:
    g = 0.0
    for ax in range(2):
        if phi.shape[ax] > 1:
            g = max(g, float(np.abs(np.diff(phi, axis=ax)).max(initial=0.0)) / h)
    return g


def glue(u: ScalarField, wfld: ScalarField, D, delta: float, M: int, eps: float,
         w: KernelWeights, p: PotentialSpec) -> GlueResult:
    """Blend u (inside D) and wfld (outside) through selected shells.

    Outer stage: with dt = delta / M, pick the shell D_{j dt} minus D_{(j+1) dt}
    minimizing wfld(shell, C D_delta) + u(shell, D).  Inner stage: in
    Dt = D_{j dt} take the layers A_i = {i eps < d(x) <= (i+1) eps},
    i < N = floor(dt / (2 eps)), and pick the one minimizing
    int_{A_i} |u - w| + eps^{2s} int_{Dt_{(i+1)eps} minus Dt_dt} |u - w| d_i^{-2s}
    with d_i = |d(x) - i eps| the distance to the i-th level set.  The
    cutoff is phi = clamp((d - i eps) / eps, 0, 1), so v = u on Dt_{(i+1) eps}
    and v = wfld outside Dt_{i eps}.
    """
    dom = u.domain
    if wfld.domain != dom:
        raise DomainError("u and wfld live on different domains")
    D = np.asarray(D, bool)
    interior = dom.interior_mask()
    if np.any(D & ~interior):
        raise ValueError("D must be a subset of Omega")
    dt = delta / M
    N = int(math.floor(dt / (2 * eps)))
    if dt < 4 * eps:
        raise ValueError(f"delta/M = {dt} < 4 eps: no room for inner shells")
    dD = signed_distance(IndicatorSet(dom, D))
    Dd = D & (dD > delta)
    if not Dd.any():
        raise ValueError("D_delta is empty")
    hn = dom.cell_volume

    outer_scores = []
    for j in range(M):
        shell = D & (dD > j * dt) & ~(dD > (j + 1) * dt)
        score = _cross_with_tail(wfld, shell, ~Dd, w, True) + interaction(u, shell, D, w)
        outer_scores.append(score)
    j = int(np.argmin(outer_scores))
    Dt = D & (dD > j * dt)
    dt_dist = signed_distance(IndicatorSet(dom, Dt))
    diff = np.abs(u.values - wfld.values)
    inner_scores = []
    for i in range(N):
        Ai = Dt & (dt_dist > i * eps) & (dt_dist <= (i + 1) * eps)
        far = Dt & (dt_dist > (i + 1) * eps) & ~(dt_dist > dt)
        di = np.maximum(np.abs(dt_dist - i * eps), 0.5 * dom.h)
        score = diff[Ai].sum() * hn + eps ** (2 * w.s) * (diff[far] * di[far] ** (-2 * w.s)).sum() * hn
        inner_scores.append(float(score))
    i = int(np.argmin(inner_scores))
    phi = np.clip((dt_dist - i * eps) / eps, 0.0, 1.0)
    phi = np.where(Dt & interior, phi, 0.0)
    vals = np.where(phi >= 1.0, u.values, np.where(phi <= 0.0, wfld.values,
                                                    phi * u.values + (1.0 - phi) * wfld.values))
    v = ScalarField(dom, vals, wfld.exterior)
    rep = total_energy(v, w, p, eps)
    f_w = total_energy(wfld, w, p, eps).f_eps
    bound = f_w - local_f_eps(wfld, Dd, w, p, eps) + local_i_eps(u, D, w, p, eps)
    return GlueResult(v, j, i, phi, rep, outer_scores, inner_scores, _discrete_slope(phi, dom.h),
                      bound, Dd)
