import math

import numpy as np
import pytest

from nonlocal_ac.core_grid import half_space
from nonlocal_ac.harness_cli import (
    ConfigError,
    ExperimentConfig,
    MissingProfileError,
    extrapolate_limit,
    limit_perimeter,
    load_profile,
    main,
    parse_config,
    relative_gap,
    run_density_check,
    run_gamma_sweep,
    save_profile,
    scenario_domain,
    tilted_square,
)
from nonlocal_ac.profile_limits import solve_profile


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "scenario: gamma1d\ns: 0.75\n"))
    assert cfg.eps_ladder == (0.2, 0.1, 0.05, 0.02)
    assert cfg.h_rule == 0.1
    assert cfg.theta1 == 0.5 and cfg.theta2 == 0.0


@pytest.mark.parametrize("text,line,msg", [
    ("scenario: gamma1d\ns: 0.75\neps_ladder: [0.1, 0.2]\n", 3, "strictly decreasing"),
    ("scenario: gamma1d\ns: 0.75\nh_rule: 0.5\n", 3, "layer under-resolved"),
    ("scenario: gamma1d\ns: 0.75\n\nfoo: 1\n", 4, "unknown key 'foo'"),
    ("scenario: gamma1d\ns: high\n", 2, "'s' must be a number"),
    ("scenario: gamma1d\n", 1, "missing required key 's'"),
    ("scenario: gamma3d\ns: 0.5\n", 1, "unknown scenario"),
    ("scenario: gamma1d\ns: 0.75\nh_floor: 0.01\n", 3, "h_floor"),
    ("scenario: gamma1d\ns: 0.75\nmax_iters: 1.5\n", 3, "integer"),
])
def test_config_errors_carry_lines(tmp_path, text, line, msg):
    with pytest.raises(ConfigError) as exc:
        parse_config(write(tmp_path, text))
    assert f":{line}:" in str(exc.value)
    assert msg in str(exc.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "none.yaml")


def test_missing_profile_is_rejected(tmp_path):
    cfg = ExperimentConfig("gamma1d", 0.75, output_dir=str(tmp_path))
    with pytest.raises(MissingProfileError, match="profile1d"):
        run_gamma_sweep(cfg)


def test_relative_gap():
    assert relative_gap(1.1, 1.0) == pytest.approx(0.1)
    assert relative_gap(0.0, 0.0) == 0.0


def test_extrapolation_recovers_power_law():
    eps = [0.2, 0.1, 0.05]
    vals = [3.0 + 2.0 * e**0.7 for e in eps]
    lim, p = extrapolate_limit(eps, vals)
    assert lim == pytest.approx(3.0, rel=1e-9)
    assert p == pytest.approx(0.7, rel=1e-9)
    assert extrapolate_limit(eps, [1.0, 2.0, 1.5]) == (None, None)


def test_limit_perimeters():
    assert limit_perimeter(half_space([0.0, 1.0]), (-0.5, -0.5), (0.5, 0.5)) == pytest.approx(1.0)
    assert limit_perimeter(tilted_square(), (-0.5, -0.5), (0.5, 0.5)) == pytest.approx(math.sqrt(2))
    assert limit_perimeter(half_space([1.0]), (-1.0,), (1.0,)) == 1.0
    assert limit_perimeter(half_space([1.0], 2.0), (-1.0,), (1.0,)) == 0.0


def test_grid_snaps_to_box():
    cfg = ExperimentConfig("energy-bound", 0.75, eps_ladder=(0.03,))
    d = scenario_domain(cfg, 0.03)
    assert d.h <= 0.1 * 0.03
    assert d.upper[0] == pytest.approx(1.06)


def _below_cfg(tmp_path, **kw):
    base = dict(eps_ladder=(0.2, 0.1), h_rule=0.2, output_dir=str(tmp_path))
    base.update(kw)
    return ExperimentConfig("nonlocal-s-below-half", 0.25, **base)


def _csv_without_runtime(path):
    return [line.rsplit(",", 1)[0] for line in path.read_text().splitlines()]


def test_sweep_is_deterministic_and_threads_agree(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run_gamma_sweep(_below_cfg(a))
    run_gamma_sweep(_below_cfg(b))
    run_gamma_sweep(_below_cfg(c, threads=2))
    ref = _csv_without_runtime(a / "report.csv")
    assert ref == _csv_without_runtime(b / "report.csv")
    assert ref == _csv_without_runtime(c / "report.csv")
    assert (a / "fields" / "u_eps0.1.csv").read_bytes() == (b / "fields" / "u_eps0.1.csv").read_bytes()


def test_sweep_rows_respect_i_below_f(tmp_path):
    rep = run_gamma_sweep(_below_cfg(tmp_path), write=False)
    assert all(r.I_eps <= r.F_eps for r in rep.rows)
    assert rep.checks["F(chi) == K(chi) exactly"]


def test_density_out_of_regime(tmp_path):
    cfg = ExperimentConfig("density-check", 0.75, eps_ladder=(0.1,), r_ladder=(0.05, 0.02),
                           output_dir=str(tmp_path))
    rep = run_density_check(cfg)
    assert rep.passed is None
    assert all(not ok for _, _, ok in rep.rows)
    assert "OUT-OF-REGIME" in (tmp_path / "summary.txt").read_text()
    # deep inside the + phase the ratio is 1
    assert all(q == 1.0 for _, q in rep.deep_rows)


def test_profile_roundtrip(tmp_path):
    pr = solve_profile(0.75, 20.0, 0.05)
    save_profile(pr, tmp_path / "p.json")
    back = load_profile(tmp_path / "p.json")
    assert back.b_star == pr.b_star
    np.testing.assert_array_equal(back.u, pr.u)
    t = np.linspace(-3, 3, 7)
    np.testing.assert_array_equal(back(t), pr(t))


def test_cli_exit_codes(tmp_path):
    bad = write(tmp_path, "scenario: gamma1d\ns: 0.75\nh_rule: 0.5\n", "bad.yaml")
    assert main(["sweep", "--config", str(bad)]) == 1
    ok = write(tmp_path, "scenario: energy-bound\ns: 0.75\nexterior: constant\n"
                         "eps_ladder: [0.2, 0.1, 0.05]\nh_rule: 0.2\n", "ok.yaml")
    assert main(["energy-bound", "--config", str(ok), "--out", str(tmp_path / "eb")]) == 0
    assert (tmp_path / "eb" / "report.csv").read_text().splitlines()[1:] == \
        ["0.2,0.0", "0.1,0.0", "0.05,0.0"]
    fail = write(tmp_path, "scenario: nonlocal-s-below-half\ns: 0.25\neps_ladder: [0.2, 0.1]\n"
                           "h_rule: 0.2\n", "fail.yaml")
    assert main(["sweep", "--config", str(fail), "--out", str(tmp_path / "f"), "--seed", "3"]) == 2
    assert "result: FAIL" in (tmp_path / "f" / "summary.txt").read_text()
    nopro = write(tmp_path, "scenario: gamma1d\ns: 0.75\n", "np.yaml")
    assert main(["glue-demo", "--config", str(nopro), "--out", str(tmp_path / "g")]) == 1


def test_cli_perimeter(tmp_path):
    cfg = write(tmp_path, "scenario: gamma2d-square\ns: 0.25\neps_ladder: [0.2, 0.1, 0.05]\nh_rule: 0.2\n")
    assert main(["perimeter", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    text = (tmp_path / "p" / "summary.txt").read_text()
    assert "exact length: 1.414" in text
