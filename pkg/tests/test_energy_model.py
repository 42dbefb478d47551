import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_ac.core_grid import DomainError, ScalarField, build_domain, collar_fill, half_space
from nonlocal_ac.energy_model import (
    PotentialSpec,
    Regime,
    energy_and_gradient,
    hessian_vector,
    local_f_eps,
    local_i_eps,
    quartic,
    regime_for,
    scaling_factor,
    subadditivity_check,
    total_energy,
    unscaled_energy,
    validate_potential,
)
from nonlocal_ac.nonlocal_kernel import build_weights, gagliardo

DOM = build_domain(1, [-1.0], [1.0], 0.125, 0.5)
RULE = half_space([1.0])
WEIGHTS = {s: build_weights(DOM, s) for s in (0.25, 0.5, 0.75)}


def field_from(seed):
    rng = np.random.default_rng(seed)
    return ScalarField(DOM, collar_fill(DOM, RULE, rng.uniform(-1, 1, DOM.omega_shape)), RULE)


def test_quartic_is_valid():
    rep = validate_potential(quartic())
    assert rep.passed, rep.failures()


def test_bad_potential_is_reported():
    p = PotentialSpec("shifted", lambda u: (1 - u * u) ** 2 + 0.1, lambda u: 4 * u * (u * u - 1),
                      lambda u: 12 * u * u - 4)
    rep = validate_potential(p)
    assert not rep.passed
    assert "W(+-1) = 0" in rep.failures()


def test_scaling_and_regimes():
    assert scaling_factor(0.1, 0.25) == pytest.approx(0.1**0.5)
    assert scaling_factor(0.1, 0.5) == pytest.approx(0.1 * math.log(10))
    assert scaling_factor(0.1, 0.75) == 0.1
    assert regime_for(0.5) is Regime.HALF
    assert regime_for(0.5000000001, "half") is Regime.HALF
    with pytest.raises(ValueError):
        regime_for(0.75, "below")
    with pytest.raises(ValueError):
        scaling_factor(1.0, 0.5)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.floats(0.01, 0.5))
def test_i_below_f(s, seed, eps):
    rep = total_energy(field_from(seed), WEIGHTS[s], quartic(), eps)
    assert rep.i_eps <= rep.f_eps
    assert rep.i_eps_by_convention == (s < 0.5)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), split=st.floats(0.05, 0.95))
def test_sub_and_superadditivity(seed, split):
    u = field_from(seed)
    rng = np.random.default_rng(seed + 1)
    inner = DOM.interior_mask()
    E = inner & (rng.random(DOM.grid_shape) < split)
    F = inner & ~E
    rep = subadditivity_check(u, WEIGHTS[0.75], quartic(), 0.1, E, F)
    assert rep.passed


def test_subadditivity_rejects_overlap():
    u = field_from(0)
    inner = DOM.interior_mask()
    with pytest.raises(ValueError):
        subadditivity_check(u, WEIGHTS[0.5], quartic(), 0.1, inner, inner)


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_gradient_against_central_differences(s):
    u = field_from(7)
    w = WEIGHTS[s]
    p = quartic()
    _, g = energy_and_gradient(u, w, p, 0.1)
    step = 1e-6
    sl = DOM.omega_slices
    for k in (0, 5, 11):
        idx = (0, sl[1].start + k)
        vals = np.array(u.values)
        vals[idx] += step
        jp, _ = energy_and_gradient(u.with_values(vals), w, p, 0.1)
        vals[idx] -= 2 * step
        jm, _ = energy_and_gradient(u.with_values(vals), w, p, 0.1)
        fd = (jp - jm) / (2 * step)
        assert fd == pytest.approx(g[0, k], rel=1e-5)


def test_hessian_vector_matches_gradient_difference():
    u = field_from(9)
    w, p = WEIGHTS[0.75], quartic()
    v = np.random.default_rng(2).standard_normal(DOM.omega_shape)
    step = 1e-6
    base = np.array(u.values)
    up, dn = base.copy(), base.copy()
    up[DOM.omega_slices] += step * v
    dn[DOM.omega_slices] -= step * v
    gp = energy_and_gradient(u.with_values(np.clip(up, -1, 1)), w, p, 0.1)[1]
    gm = energy_and_gradient(u.with_values(np.clip(dn, -1, 1)), w, p, 0.1)[1]
    np.testing.assert_allclose(hessian_vector(u, w, p, 0.1, v), (gp - gm) / (2 * step), rtol=1e-4, atol=1e-8)


def test_sharp_field_identity_below_half():
    u = ScalarField(DOM, collar_fill(DOM, RULE), RULE)
    k = gagliardo(u, WEIGHTS[0.25])
    for eps in (0.1, 0.01):
        assert total_energy(u, WEIGHTS[0.25], quartic(), eps).f_eps == k


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_rescaling_identity(s):
    eps = 0.125
    small = build_domain(1, [-eps], [eps], 0.125 * eps, 0.5 * eps)
    u = field_from(3)
    ue = ScalarField(small, u.values, RULE)
    f = total_energy(ue, build_weights(small, s), quartic(), eps).f_eps
    e = unscaled_energy(u, WEIGHTS[s], quartic())
    assert f == pytest.approx(eps / scaling_factor(eps, s) * e, rel=1e-12)


def test_localized_energies_on_omega():
    u = field_from(4)
    w, p = WEIGHTS[0.75], quartic()
    rep = total_energy(u, w, p, 0.2)
    om = DOM.interior_mask()
    assert local_f_eps(u, om, w, p, 0.2) == pytest.approx(rep.f_eps, rel=1e-12)
    assert local_i_eps(u, om, w, p, 0.2) == pytest.approx(rep.i_eps, rel=1e-12)
    with pytest.raises(ValueError):
        local_f_eps(u, ~om, w, p, 0.2)


def test_domain_mismatch():
    other = build_domain(1, [-1.0], [1.0], 0.25, 0.5)
    with pytest.raises(DomainError):
        total_energy(field_from(0), build_weights(other, 0.5), quartic(), 0.1)


def test_csv_row():
    rep = total_energy(field_from(1), WEIGHTS[0.5], quartic(), 0.1)
    row = rep.csv_row()
    assert len(row) == len(rep.CSV_HEADER)
    assert float(row[7]) == rep.f_eps
