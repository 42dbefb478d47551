import math

import numpy as np
import pytest
from scipy import integrate

from nonlocal_ac.core_grid import (
    ConstantExterior,
    DomainError,
    ScalarField,
    build_domain,
    collar_fill,
    half_space,
)
from nonlocal_ac.nonlocal_kernel import (
    build_weights,
    cached_weights,
    gagliardo,
    interaction,
    interior_energy,
    exterior_energy,
    load_weights,
    local_gagliardo,
    save_weights,
    set_interaction,
    tail_integral,
)
from oracles import interval_pair, piecewise_gagliardo


def test_adjacent_unit_cells_quarter():
    d = build_domain(1, [0.0], [2.0], 1.0, 0.0)
    w = build_weights(d, 0.25)
    assert w.table[0, 1] == pytest.approx(8 - 4 * math.sqrt(2), rel=1e-8)
    assert w.table[0, 0] == 0.0


def test_separated_unit_cells_half():
    d = build_domain(1, [0.0], [3.0], 1.0, 0.0)
    w = build_weights(d, 0.5, near_rule="cell")
    assert w.table[0, 2] == pytest.approx(math.log(4 / 3), rel=1e-8)


@pytest.mark.parametrize("s", [0.1, 0.25, 0.4])
def test_cell_rule_matches_closed_form(s):
    d = build_domain(1, [0.0], [8.0], 1.0, 0.0)
    w = build_weights(d, s)
    for k in (1, 2, 3):
        assert w.table[0, k] == pytest.approx(interval_pair(0, 1, k, k + 1, s), rel=1e-4)


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_table_scales_with_h(s):
    a = build_weights(build_domain(1, [0.0], [8.0], 1.0, 2.0), s)
    b = build_weights(build_domain(1, [0.0], [4.0], 0.5, 1.0), s)
    np.testing.assert_allclose(b.table, a.table * 0.5 ** (1 - 2 * s), rtol=1e-14)


def test_moment_rule_finite_for_large_s():
    d = build_domain(2, [0, 0], [1, 1], 0.25, 0.5)
    w = build_weights(d, 0.75)
    assert w.near_rule == "moment"
    assert np.all(np.isfinite(w.table))
    assert np.all(w.table[w.table != 0] > 0)


@pytest.mark.parametrize("dim,s,alpha", [(1, 0.25, 0.5), (1, 0.75, 2.0), (2, 0.5, 1.0)])
def test_tail_integral(dim, s, alpha):
    if dim == 1:
        ref = 2 * integrate.quad(lambda r: r ** (-1 - 2 * s), alpha, np.inf)[0]
    else:
        ref = 2 * np.pi * integrate.quad(lambda r: r * r ** (-2 - 2 * s), alpha, np.inf)[0]
    assert tail_integral(alpha, s, dim) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        tail_integral(0.0, s, dim)


def test_sharp_field_matches_exact_1d():
    # piecewise-constant data, s < 1/2: the cell rule is exact up to far-field midpoints
    s = 0.25
    d = build_domain(1, [-1.0], [1.0], 0.125, 0.5)
    rule = half_space([1.0])
    rng = np.random.default_rng(3)
    vals = rng.uniform(-1, 1, 16)
    u = ScalarField(d, collar_fill(d, rule, vals), rule)
    ref = piecewise_gagliardo(vals, -1.0, 1.0, s)
    assert gagliardo(u, build_weights(d, s)) == pytest.approx(ref, rel=5e-3)


def test_exterior_tail_is_exact_for_sign_data():
    s = 0.75
    d = build_domain(1, [-1.0], [1.0], 0.25, 0.5)
    rule = half_space([1.0])
    vals = np.linspace(-0.9, 0.9, 8)
    u = ScalarField(d, collar_fill(d, rule, vals), rule)
    w = build_weights(d, s)
    # beyond the collar, only the tails (-inf, -1.5) and (1.5, inf) remain
    edges = np.linspace(-1, 1, 9)
    ref = 0.0
    for i, v in enumerate(vals):
        ref += (v - 1) ** 2 * interval_pair(edges[i], edges[i + 1], 1.5, math.inf, s)
        ref += (v + 1) ** 2 * interval_pair(-edges[i + 1], -edges[i], 1.5, math.inf, s)
    tm = w.tail_moments(rule)
    got = float((tm[0] * vals**2 - 2 * tm[1] * vals + tm[2]).sum())
    assert got == pytest.approx(ref, rel=1e-8)


def test_interaction_symmetry_and_additivity(rng):
    d = build_domain(2, [0, 0], [1, 1], 0.125, 0.25)
    w = build_weights(d, 0.5)
    rule = half_space([1.0, 0.0], 0.5)
    u = ScalarField(d, collar_fill(d, rule, rng.uniform(-1, 1, d.omega_shape)), rule)
    inner = d.interior_mask()
    E = inner & (rng.random(d.grid_shape) < 0.4)
    F1 = inner & ~E & (rng.random(d.grid_shape) < 0.5)
    F2 = ~E & ~F1
    assert interaction(u, E, F1, w) == interaction(u, F1, E, w)
    total = interaction(u, E, F1 | F2, w)
    assert total == pytest.approx(interaction(u, E, F1, w) + interaction(u, E, F2, w), rel=1e-13)


def test_gagliardo_decomposition(rng):
    d = build_domain(1, [-1.0], [1.0], 0.1, 0.4)
    w = build_weights(d, 0.75)
    rule = half_space([1.0])
    u = ScalarField(d, collar_fill(d, rule, rng.uniform(-1, 1, d.omega_shape)), rule)
    inner, _ = interior_energy(u, w)
    outer, _, per_cell = exterior_energy(u, w)
    om = d.interior_mask()
    assert inner == pytest.approx(0.5 * interaction(u, om, om, w), rel=1e-12)
    assert gagliardo(u, w) == pytest.approx(inner + outer, rel=1e-15)
    assert local_gagliardo(u, om, w) == pytest.approx(gagliardo(u, w), rel=1e-12)
    assert per_cell.shape == d.omega_shape


def test_set_interaction_rejects_overlap():
    d = build_domain(1, [0.0], [1.0], 0.125, 0.0)
    w = build_weights(d, 0.25)
    A = d.box_mask([0.0], [0.5])
    with pytest.raises(ValueError):
        set_interaction(A, A, w)
    with pytest.raises(DomainError):
        set_interaction(np.ones(3, bool), A, w)


def test_constant_field_has_zero_energy():
    d = build_domain(2, [0, 0], [1, 1], 0.25, 0.5)
    w = build_weights(d, 0.75)
    u = ScalarField(d, np.full(d.grid_shape, 1.0), ConstantExterior(1.0))
    assert gagliardo(u, w) == 0.0


def test_weight_cache_roundtrip(tmp_path):
    d = build_domain(1, [0.0], [1.0], 0.0625, 0.25)
    w = build_weights(d, 0.75)
    save_weights(tmp_path / "w.bin", w)
    v = load_weights(tmp_path / "w.bin", d)
    assert np.array_equal(v.table, w.table)
    assert (v.s, v.near_rule, v.refinement) == (w.s, w.near_rule, w.refinement)
    other = build_domain(1, [0.0], [2.0], 0.0625, 0.25)
    with pytest.raises(ValueError):
        load_weights(tmp_path / "w.bin", other)
    c1 = cached_weights(d, 0.75, cache_dir=tmp_path / "c")
    c2 = cached_weights(d, 0.75, cache_dir=tmp_path / "c")
    assert np.array_equal(c1.table, c2.table)


def test_invalid_arguments():
    d = build_domain(1, [0.0], [1.0], 0.25, 0.0)
    with pytest.raises(ValueError):
        build_weights(d, 1.0)
    with pytest.raises(ValueError):
        build_weights(d, 0.5, near_rule="fft")
