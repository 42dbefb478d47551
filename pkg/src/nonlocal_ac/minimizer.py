"""Box-constrained minimization of F_eps with the data frozen outside a free region.

Only the cells of ``free_region`` move; every other cell of the extended grid
and the exterior rule stay bit-identical to the input.  Three step rules:

``fixed``        projected gradient u <- clamp(u - eta g, -1, 1) with constant eta
``backtracking`` the same step, eta halved until the energy decreases and
                 doubled again after an accepted step
``lbfgs``        L-BFGS-B with the box [-1, 1] (scipy), much faster on fine grids

Convergence is measured by the sup norm of the projected gradient of J_eps
on the free cells; the default tolerance is 1e-8 h^n since every gradient
component carries a factor h^n.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage, optimize
from scipy.sparse.linalg import LinearOperator, cg

from .core_grid import ScalarField
from .energy_model import (PotentialSpec, Regime, energy_and_gradient, hessian_vector, regime_for,
                           scaling_factor)
from .nonlocal_kernel import KernelWeights

STEP_RULES = ("fixed", "backtracking", "lbfgs")
INIT_RULES = ("given", "exterior-extension", "sharp-interface", "random-seeded")


@dataclass(frozen=True)
class MinimizeConfig:
    free_region: Optional[np.ndarray] = None  # mask over the extended grid; None means Omega
    max_iters: int = 5000
    grad_tol: Optional[float] = None
    step_rule: str = "lbfgs"
    init: str = "given"
    step_size: float = 1.0  # eta in units of 1/h^n
    seed: int = 0
    polish_steps: int = 8

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.init not in INIT_RULES:
            raise ValueError(f"init must be one of {INIT_RULES}")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class MinimizeResult:
    field: ScalarField
    energy_trace: list  # F_eps per accepted iterate, starting with the initial state
    iterations: int
    converged: bool
    final_grad_norm: float
    free_region: np.ndarray = field(repr=False, default=None)
    eps: float = 0.0
    j_trace: list = field(default_factory=list)
    grad_trace: list = field(default_factory=list)

    @property
    def energy(self) -> float:
        return self.energy_trace[-1]

    def write_trace(self, path) -> None:
        """CSV rows (iter, J, F, grad_norm)."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "J", "F", "grad_norm"])
            for k, (j, f, g) in enumerate(zip(self.j_trace, self.energy_trace, self.grad_trace)):
                wr.writerow([k, repr(j), repr(f), repr(g)])


def _free_mask(u: ScalarField, cfg: MinimizeConfig) -> np.ndarray:
    interior = u.domain.interior_mask()
    if cfg.free_region is None:
        return interior
    m = np.asarray(cfg.free_region, bool)
    if m.shape != interior.shape:
        raise ValueError("free_region must be a mask over the extended grid")
    if np.any(m & ~interior):
        raise ValueError("free_region must be a subset of Omega")
    return m


def initial_values(u0: ScalarField, free: np.ndarray, rule: str, seed: int = 0) -> np.ndarray:
    """Starting values on the free cells; frozen cells keep ``u0``."""
    vals = np.array(u0.values, dtype=float)
    if rule == "given":
        return vals
    if rule == "exterior-extension":
        ext = np.asarray(u0.exterior(u0.domain.centers()), float)
        vals[free] = ext[free]
    elif rule == "sharp-interface":
        # sign of the nearest frozen cell
        _, idx = ndimage.distance_transform_edt(free, return_indices=True)
        nearest = vals[tuple(idx)]
        vals[free] = np.where(nearest[free] >= 0, 1.0, -1.0)
    elif rule == "random-seeded":
        rng = np.random.default_rng(seed)
        vals[free] = rng.uniform(-1.0, 1.0, int(free.sum()))
    else:
        raise ValueError(f"unknown init rule {rule!r}")
    return vals


def _projected_norm(x, g):
    pg = np.where((x <= -1.0) & (g > 0), 0.0, g)
    pg = np.where((x >= 1.0) & (pg < 0), 0.0, pg)
    return float(np.abs(pg).max(initial=0.0))


def minimize(u0: ScalarField, cfg: MinimizeConfig, w: KernelWeights, p: PotentialSpec, eps: Optional[float],
             regime: Optional[Regime] = None) -> MinimizeResult:
    """Minimize F_eps(., Omega) over fields equal to the initial data outside the free region.

    ``eps=None`` minimizes the unscaled energy E = K + int W (eps = 1, no scaling).
    """
    dom = u0.domain
    if eps is None:
        eps, scale = 1.0, 1.0
    else:
        scale = scaling_factor(eps, w.s, regime or regime_for(w.s))
    free = _free_mask(u0, cfg)
    free_in = free[dom.omega_slices]
    hn = dom.cell_volume
    tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-8 * hn
    base = initial_values(u0, free, cfg.init, cfg.seed)
    start = u0.with_values(base)

    def evaluate(x):
        vals = base.copy()
        vals[free] = x
        f = start.with_values(vals)
        j, g = energy_and_gradient(f, w, p, eps)
        return j, g[free_in]

    def hvp(x, v):
        vals = base.copy()
        vals[free] = x
        full = np.zeros(dom.omega_shape)
        full[free_in] = v
        return hessian_vector(start.with_values(vals), w, p, eps, full)[free_in]

    x = base[free].copy()
    j, g = evaluate(x)
    if not np.isfinite(j):
        raise ValueError("initial energy is not finite")
    j_trace, f_trace, g_trace = [j], [j / scale], [_projected_norm(x, g)]
    iters = 0
    if cfg.step_rule == "lbfgs":
        if g_trace[0] > tol and cfg.max_iters > 0 and x.size:

            def cb(intermediate_result):
                xi = intermediate_result.x
                ji, gi = evaluate(xi)
                j_trace.append(ji)
                f_trace.append(ji / scale)
                g_trace.append(_projected_norm(xi, gi))

            res = optimize.minimize(evaluate, x, jac=True, method="L-BFGS-B",
                                    bounds=[(-1.0, 1.0)] * x.size, callback=cb,
                                    options=dict(maxiter=cfg.max_iters, gtol=tol, ftol=0.0,
                                                 maxcor=30, maxls=40))
            x = np.clip(res.x, -1.0, 1.0)
            iters = int(res.nit)
            j, g = evaluate(x)
            if j < j_trace[-1]:
                j_trace.append(j)
                f_trace.append(j / scale)
                g_trace.append(_projected_norm(x, g))
            else:
                g_trace[-1] = _projected_norm(x, g)
            x, j, g = _newton_polish(x, j, g, evaluate, hvp, tol, cfg.polish_steps, scale,
                                     j_trace, f_trace, g_trace)
    else:
        eta = cfg.step_size / hn
        while iters < cfg.max_iters and g_trace[-1] > tol:
            while True:
                xn = np.clip(x - eta * g, -1.0, 1.0)
                jn, gn = evaluate(xn)
                if cfg.step_rule == "fixed" or jn < j:
                    break
                eta *= 0.5
                if eta * hn < 1e-20:
                    break
            if cfg.step_rule == "backtracking" and not jn < j:
                break
            x, j, g = xn, jn, gn
            iters += 1
            j_trace.append(j)
            f_trace.append(j / scale)
            g_trace.append(_projected_norm(x, g))
            if cfg.step_rule == "backtracking":
                eta *= 2.0
    vals = base.copy()
    vals[free] = x
    out = start.with_values(vals)
    return MinimizeResult(out, f_trace, iters, g_trace[-1] <= tol, g_trace[-1], free, eps,
                          j_trace, g_trace)


def _newton_polish(x, j, g, evaluate, hvp, tol, steps, scale, j_trace, f_trace, g_trace):
    """Newton-CG steps on the inactive cells once line searches stall at roundoff.

    Near a minimizer the energy decrease per step drops below the rounding
    error of J long before the gradient reaches the tolerance; Newton steps
    only need the gradient, which is far more accurate.  A step is kept when
    it shrinks the projected gradient and J rises by at most 1e-12 scale.
    """
    for _ in range(steps):
        gn0 = _projected_norm(x, g)
        if gn0 <= tol:
            break
        active = ((x <= -1.0) & (g > 0)) | ((x >= 1.0) & (g < 0))
        idx = np.flatnonzero(~active)
        if idx.size == 0:
            break

        def matvec(v, x=x, idx=idx):
            full = np.zeros_like(x)
            full[idx] = v
            return hvp(x, full)[idx]

        op = LinearOperator((idx.size, idx.size), matvec=matvec, dtype=float)
        d, _ = cg(op, -g[idx], rtol=1e-8, atol=0.1 * tol, maxiter=400)
        xn = x.copy()
        xn[idx] += d
        np.clip(xn, -1.0, 1.0, out=xn)
        jn, gn = evaluate(xn)
        if not (_projected_norm(xn, gn) < gn0 and jn <= j + 1e-12 * scale):
            break
        x, j, g = xn, jn, gn
        j_trace.append(j)
        f_trace.append(j / scale)
        g_trace.append(_projected_norm(x, g))
    return x, j, g


@dataclass
class MinimalityReport:
    trials: int
    failures: int
    worst_change: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def local_minimality_check(r: MinimizeResult, trials: int, amplitude: float, w: KernelWeights,
                           p: PotentialSpec, eps: float, seed: int = 0) -> MinimalityReport:
    """Perturb the free cells by clamped uniform noise; count trials that lower F_eps."""
    from .energy_model import total_energy

    u = r.field
    free = r.free_region if r.free_region is not None else u.domain.interior_mask()
    f0 = total_energy(u, w, p, eps).f_eps
    tol = 1e-9 * (1.0 + abs(f0))
    rng = np.random.default_rng(seed)
    failures = 0
    worst = np.inf
    for _ in range(trials):
        vals = np.array(u.values)
        vals[free] = np.clip(vals[free] + amplitude * rng.uniform(-1, 1, int(free.sum())), -1, 1)
        f1 = total_energy(u.with_values(vals), w, p, eps).f_eps
        change = f1 - f0
        worst = min(worst, change)
        if change < -tol:
            failures += 1
    return MinimalityReport(trials, failures, float(worst if trials else 0.0), tol)


def restrict_config(cfg: MinimizeConfig, region: np.ndarray) -> MinimizeConfig:
    """Same settings on a smaller free region (used for subdomain re-minimization)."""
    return replace(cfg, free_region=np.asarray(region, bool), init="given")
