import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from nonlocal_ac.core_grid import (
    DomainError,
    IndicatorSet,
    ScalarField,
    build_domain,
    collar_fill,
    half_space,
    indicator_from_rule,
    l1_distance,
    to_field,
)
from nonlocal_ac.energy_model import quartic
from nonlocal_ac.minimizer import MinimizeConfig, minimize
from nonlocal_ac.nonlocal_kernel import build_weights
from nonlocal_ac.profile_limits import (
    ProfileError,
    bstar_estimate,
    cstar,
    estimate_bstar,
    exterior_pair_deficit,
    glue,
    nonlocal_perimeter,
    pixel_perimeter,
    recovery_sequence,
    rule_signed_distance,
    signed_distance,
    solve_profile,
    transverse_factor,
)
from oracles import interval_pair


@pytest.fixture(scope="module")
def small_profile():
    return solve_profile(0.75, 20.0, 0.05)


def test_profile_structure(small_profile):
    pr = small_profile
    assert pr.monotone and pr.converged
    assert pr.antisymmetry < 1e-6
    assert abs(pr(0.0)) < 1e-8
    assert pr(-100.0) == -1.0 and pr(100.0) == 1.0
    assert pr.b_star > 0 and pr.c_star == pr.b_star
    assert len(pr.R_ladder) == 4


def test_shifted_start_gives_same_profile(small_profile):
    other = solve_profile(0.75, 20.0, 0.05, init="shifted")
    assert other.b_star == pytest.approx(small_profile.b_star, rel=1e-6)
    t = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(other(t), small_profile(t), atol=1e-6)


def test_profile_guards():
    with pytest.raises(ValueError):
        solve_profile(0.75, 10.0, 0.05)
    with pytest.raises(ValueError):
        solve_profile(0.75, 20.0, 0.1)


def test_bstar_estimate_diagnostics(small_profile):
    est = bstar_estimate(small_profile)
    assert len(est.sequence) == 4
    assert est.band >= 0
    bad = replace(small_profile, R_ladder=[(1.25, 1.0), (2.5, 2.0), (5.0, 1.0), (10.0, 3.0)])
    with pytest.raises(ValueError):
        estimate_bstar(bad)


def test_exterior_pair_deficit():
    R, s = 3.0, 0.75
    ref = 4 * interval_pair(-math.inf, -R, R, math.inf, s)  # jump 2 squared
    assert exterior_pair_deficit(R, s) == pytest.approx(ref, rel=1e-12)
    assert exterior_pair_deficit(R, 0.5) == math.inf


@pytest.mark.parametrize("s", [0.5, 0.6, 0.75, 0.9])
def test_transverse_factor(s):
    ref = integrate.quad(lambda t: (1 + t * t) ** (-1 - s), -np.inf, np.inf)[0]
    assert transverse_factor(s) == pytest.approx(ref, rel=1e-10)
    assert cstar(1.0, s, 2) == pytest.approx(ref ** (1 / (2 * s)), rel=1e-10)
    assert cstar(3.0, s, 1) == 3.0


def test_transverse_factor_half_is_two():
    assert transverse_factor(0.5) == pytest.approx(2.0, rel=1e-14)


def test_signed_distance_half_plane():
    d = build_domain(2, [-0.5, -0.5], [0.5, 0.5], 0.1, 0.2)
    A = indicator_from_rule(d, half_space([0.0, 1.0]))
    sd = signed_distance(A)
    y = d.centers()[..., 1]
    np.testing.assert_allclose(sd, y, atol=1e-12)
    np.testing.assert_allclose(rule_signed_distance(A.exterior_rule(), d.centers()), y, atol=1e-12)
    with pytest.raises(DomainError):
        signed_distance(IndicatorSet(d, np.ones(d.grid_shape, bool), True))


def test_recovery_sequence_converges_in_l1(small_profile):
    d = build_domain(1, [-1.0], [1.0], 0.005, 0.05)
    A = indicator_from_rule(d, half_space([1.0]))
    dist = []
    for eps in (0.1, 0.05, 0.025):
        u = recovery_sequence(A, small_profile, eps)
        dist.append(l1_distance(u, to_field(A)))
    assert dist[0] > dist[1] > dist[2]
    with pytest.raises(ValueError):
        recovery_sequence(A, small_profile, 0.0)


def test_pixel_perimeter():
    d = build_domain(2, [-0.5, -0.5], [0.5, 0.5], 0.05, 0.1)
    A = indicator_from_rule(d, half_space([0.0, 1.0]))
    assert pixel_perimeter(A) == pytest.approx(1.0)
    assert pixel_perimeter(A, dilation=0.1) == pytest.approx(1.0 + 2 * 0.1)
    box = IndicatorSet(d, d.box_mask([-0.2, -0.2], [0.2, 0.2]), False)
    assert pixel_perimeter(box) == pytest.approx(1.6)


def test_nonlocal_perimeter_flags():
    d = build_domain(1, [-1.0], [1.0], 0.05, 0.2)
    A = indicator_from_rule(d, half_space([1.0]))
    assert not nonlocal_perimeter(A, build_weights(d, 0.25)).divergent
    assert nonlocal_perimeter(A, build_weights(d, 0.75)).divergent


def test_glue_identities(small_profile):
    eps, s = 0.05, 0.75
    d = build_domain(1, [-1.0], [1.0], eps / 10, 0.2)
    rule = half_space([1.0])
    w = build_weights(d, s)
    p = quartic()
    u = minimize(ScalarField(d, collar_fill(d, rule), rule), MinimizeConfig(), w, p, eps).field
    A = indicator_from_rule(d, rule)
    wf = recovery_sequence(A, small_profile, eps)
    D = d.box_mask([-0.8], [0.8])
    g = glue(u, wf, D, 0.4, 2, eps, w, p)
    assert np.array_equal(g.v.values[g.d_delta], u.values[g.d_delta])
    out = d.interior_mask() & ~D
    assert np.array_equal(g.v.values[out], wf.values[out])
    assert g.cutoff_slope <= 1.1 * 3 / eps
    assert np.all((g.cutoff >= 0) & (g.cutoff <= 1))
    with pytest.raises(ValueError):
        glue(u, wf, D, 0.1, 2, eps, w, p)  # delta / M < 4 eps


def test_profile_error_is_runtime_error():
    assert issubclass(ProfileError, RuntimeError)
