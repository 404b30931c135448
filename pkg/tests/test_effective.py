"""Effective radius dynamics: profile tables, brackets, trajectories."""

import numpy as np
import pytest

from siwave.effective import (
    ProfileTable,
    bracket_values,
    build_profile_table,
    check_quench_envelopes,
    integrate_R,
    mean_curvature,
    rhs_Rpp,
    write_trajectory_csv,
)
from siwave.ioutil import read_csv
from siwave.potential import PotentialSpec
from siwave.profiles import ProfileGrid, solve_profile
from siwave.linop import solve_F1

SPEC = PotentialSpec(lambda_phi=2.0, lambda_sigma=1.0, beta=1.2, d=0.3)

# analytic branch radius for lambda_phi = 2 (unit-width kink)
_NU = 0.5 * (-1.0 + np.sqrt(1.0 + 4.0 * SPEC.beta))
R_STAR = SPEC.d / np.sqrt(SPEC.lambda_sigma - SPEC.beta + _NU**2)


@pytest.fixture(scope="module")
def table():
    return build_profile_table(SPEC, 0.25, 1.3, n_knots=12)


@pytest.fixture(scope="module")
def mcf_table():
    # d = 0 kills the winding term, so the bracket is exactly -1 at every
    # radius and the radius equation reduces to mean curvature flow
    spec0 = PotentialSpec(2.0, 1.0, 1.2, 0.0)
    return spec0, build_profile_table(spec0, 0.25, 2.2, n_knots=5)


@pytest.fixture(scope="module")
def stored_table():
    return build_profile_table(SPEC, 0.8, 1.1, n_knots=5, store_profiles=True)


def synthetic_table(c, lo, hi, n, R_star=None):
    """Table whose bracket is exactly -c R at the knots.

    Crafting ||s0||^2 = (R^2/d^2)(1 - cR) against unit ||F0'||^2 and
    int W = 1/2 makes both bracket forms equal -cR, yielding the closed
    trajectory R(t) = R0 - log(cosh(ct))/c from rest when c R = const.
    """
    Rk = np.linspace(lo, hi, n)
    ns = (Rk**2 / SPEC.d**2) * (1.0 - c * Rk)
    return ProfileTable(
        spec=SPEC,
        grid=ProfileGrid(10.0, 257),
        R_knots=Rk,
        mu=np.zeros_like(Rk),
        mu_prime=-SPEC.d**2 * ns / Rk**3,
        norm_F0prime_sq=np.ones_like(Rk),
        norm_s0_sq=ns,
        W_L1_norm=np.full_like(Rk, 0.5),
        decay_alpha=np.ones_like(Rk),
        condensed=np.ones(Rk.size, bool),
        R_star=R_star,
    )


def test_mean_curvature_values():
    assert mean_curvature(2.0, 0.0, 0.0) == pytest.approx(0.5)
    assert mean_curvature(1.0, 0.6, 0.0) == pytest.approx(1.25)
    # static radius with Rpp = -1/R * (1 - Rp^2) is a minimal (H = 0) profile
    assert mean_curvature(1.0, 0.0, -1.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        mean_curvature(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        mean_curvature(1.0, 1.0, 0.0)


def test_table_matches_analytic_branch_radius(table):
    assert table.R_star == pytest.approx(R_STAR, abs=2e-3)
    # exactly at R_star the bare branch answers
    assert table.column("norm_s0_sq", table.R_star) == 0.0


def test_bracket_forms_agree(table):
    for R in np.linspace(0.26, 1.29, 25):
        b_norm, b_w = bracket_values(SPEC, table, float(R))
        assert abs(b_norm - b_w) <= 1e-5
        assert -1.0 <= b_norm < 0.0
    # bare side: no condensate, no winding pressure, bracket is exactly -1
    for R in (0.3, 0.45, 0.55):
        b_norm, b_w = bracket_values(SPEC, table, R)
        assert b_norm == -1.0
        assert b_w == -1.0


def test_table_interpolants_match_fresh_solves(table):
    rng = np.random.default_rng(7)
    for R in rng.uniform(0.7, 1.25, 5):
        R = float(R)
        sol = solve_profile(SPEC, R)
        fresh = SPEC.d**2 / R**2 * sol.norm_s0_sq / sol.norm_F0prime_sq - 1.0
        b_norm, _ = bracket_values(SPEC, table, R)
        assert abs(b_norm - fresh) <= 1e-4 * abs(fresh)
    for R in (0.75, 1.1):
        sol = solve_profile(SPEC, R)
        assert table.column("mu", R) == pytest.approx(sol.mu, rel=1e-5)
        assert table.column("mu_prime", R) == pytest.approx(sol.mu_prime, rel=5e-3)


def test_mcf_cosine_oracle(mcf_table):
    spec0, t0 = mcf_table
    traj = integrate_R(spec0, t0, R0=2.0, Rp0=0.0, T_max=1.0)
    assert traj.exit_reason == "time_limit"
    assert np.isnan(traj.quench_time)
    exact_R = 2.0 * np.cos(traj.times / 2.0)
    exact_Rp = -np.sin(traj.times / 2.0)
    assert np.abs(traj.R - exact_R).max() <= 1e-10
    assert np.abs(traj.Rp - exact_Rp).max() <= 1e-10
    assert np.all(traj.bracket == -1.0)


def test_mcf_horizon_exit(mcf_table):
    # |R'| = sin(t/2) reaches 0.99 at t = 2 asin(0.99), before the
    # trajectory leaves the table window
    spec0, t0 = mcf_table
    traj = integrate_R(spec0, t0, R0=2.0, Rp0=0.0, T_max=10.0)
    assert traj.exit_reason == "horizon"
    assert traj.T == pytest.approx(2.0 * np.arcsin(0.99), abs=5e-3)
    assert np.abs(traj.Rp).max() < 1.0


def test_rk4_observed_order(mcf_table):
    spec0, t0 = mcf_table
    errs = []
    for n in (4, 8, 16):
        traj = integrate_R(spec0, t0, R0=2.0, Rp0=0.0, T_max=1.0,
                           dt=1.0 / n, tol=np.inf)
        errs.append(abs(traj.R[-1] - 2.0 * np.cos(traj.times[-1] / 2.0)))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.8


def test_constant_bracket_logcosh_oracle():
    c = 0.5
    tbl = synthetic_table(c, 0.9, 1.9, 201)
    traj = integrate_R(SPEC, tbl, R0=1.8, Rp0=0.0, T_max=1.0)
    exact_R = 1.8 - np.log(np.cosh(c * traj.times)) / c
    exact_Rp = -np.tanh(c * traj.times)
    assert np.abs(traj.R - exact_R).max() <= 1e-8
    assert np.abs(traj.Rp - exact_Rp).max() <= 1e-8


def test_rpp_column_is_rhs_not_a_difference(table):
    traj = integrate_R(SPEC, table, R0=1.2, Rp0=0.0, T_max=0.5)
    for k in range(0, traj.times.size, 7):
        expect = rhs_Rpp(SPEC, table, float(traj.R[k]), float(traj.Rp[k]))
        assert traj.Rpp[k] == expect
        b_norm, _ = bracket_values(SPEC, table, float(traj.R[k]))
        assert traj.bracket[k] == b_norm


def test_quench_trajectory_monotone(table):
    traj = integrate_R(SPEC, table, R0=1.2, Rp0=0.0, T_max=10.0)
    assert traj.exit_reason == "below_r0"
    assert np.all(traj.Rp[1:] < 0.0)
    assert np.all(np.diff(traj.R) < 0.0)
    assert 1.0 < traj.quench_time < 1.7
    assert abs(traj.eval_R(traj.quench_time) - table.R_star) <= 1e-8
    # quenched flags follow the R_star crossing
    assert not traj.quenched[0]
    assert traj.quenched[-1]
    # node evaluation reproduces the samples
    assert np.abs(traj.eval_R(traj.times) - traj.R).max() <= 1e-14
    assert np.abs(traj.eval_Rp(traj.times) - traj.Rp).max() <= 1e-14


def test_mirror_reversal():
    tbl = synthetic_table(0.5, 0.9, 1.9, 201)
    fwd = integrate_R(SPEC, tbl, R0=1.8, Rp0=0.0, T_max=0.4)
    back = integrate_R(SPEC, tbl, R0=float(fwd.R[-1]), Rp0=float(-fwd.Rp[-1]),
                       T_max=0.4)
    assert abs(back.R[-1] - 1.8) <= 1e-9
    assert abs(back.Rp[-1]) <= 1e-9


def test_quench_envelopes_pass(table):
    rep = check_quench_envelopes(SPEC, table, delta=0.05)
    assert rep.hypothesis_ok
    assert rep.max_violation <= 1e-6
    assert rep.passed
    assert rep.c_hi == pytest.approx(2.0 / table.R_star)
    assert rep.c_lo == pytest.approx(0.5 / (table.R_star + 0.05))
    assert rep.n_samples > 0


def test_quench_envelopes_hypothesis_fails():
    # shallow bracket -0.3 R stays above -1/2 on the scan window
    tbl = synthetic_table(0.3, 0.35, 1.3, 191, R_star=0.8)
    rep = check_quench_envelopes(SPEC, tbl, delta=0.05)
    assert not rep.hypothesis_ok
    assert "hypothesis fails" in rep.notes
    assert not rep.passed


def test_envelope_requires_branch_switch(mcf_table):
    spec0, t0 = mcf_table
    with pytest.raises(ValueError, match="R_star"):
        check_quench_envelopes(spec0, t0, delta=0.05)
    with pytest.raises(ValueError, match="delta"):
        check_quench_envelopes(SPEC, synthetic_table(0.3, 0.35, 1.3, 11, R_star=0.8),
                               delta=0.0)


def test_domain_errors(table):
    with pytest.raises(ValueError, match="profile table exhausted"):
        table.column("mu", 2.0)
    with pytest.raises(ValueError, match="profile table exhausted"):
        integrate_R(SPEC, table, R0=5.0)
    with pytest.raises(ValueError, match="below 1"):
        rhs_Rpp(SPEC, table, 1.0, 1.0)
    with pytest.raises(ValueError, match="below 1"):
        integrate_R(SPEC, table, R0=1.0, Rp0=1.0)
    with pytest.raises(ValueError, match="store_profiles"):
        table.eval_field("f", 0.0, 1.0)


def test_store_profiles_requires_condensed_window():
    with pytest.raises(ValueError, match="condensed"):
        build_profile_table(SPEC, 0.4, 0.7, n_knots=4, store_profiles=True)


def test_stored_fields_match_solutions(stored_table):
    R = 0.95  # a knot of the 5-point window
    sol = solve_profile(SPEC, R)
    xs = sol.grid.x[::128]
    assert np.abs(stored_table.eval_field("f", xs, R) - sol.f[::128]).max() <= 1e-9
    assert np.abs(stored_table.eval_field("s", xs, R) - sol.s[::128]).max() <= 1e-9
    # the interface sits at the phase zero for every stored radius
    for Rq in (0.8, 0.93, 1.1):
        assert abs(stored_table.eval_field("f", 0.0, Rq)) <= 1e-15
    corr = solve_F1(SPEC, sol)
    assert np.abs(stored_table.eval_field("f1", xs, R) - corr.f1[::128]).max() <= 1e-9
    assert np.abs(stored_table.eval_field("s1", xs, R) - corr.s1[::128]).max() <= 1e-9


def test_trajectory_csv_roundtrip(tmp_path, table):
    traj = integrate_R(SPEC, table, R0=1.2, Rp0=0.0, T_max=0.5)
    path = write_trajectory_csv(traj, tmp_path / "trajectory.csv")
    cols, comments = read_csv(path)
    assert np.array_equal(cols["y0"], traj.times)
    assert np.array_equal(cols["R"], traj.R)
    assert np.array_equal(cols["Rp"], traj.Rp)
    assert np.array_equal(cols["Rpp"], traj.Rpp)
    assert np.array_equal(cols["bracket"], traj.bracket)
    assert float(comments["quench_time"]) == traj.quench_time or (
        np.isnan(float(comments["quench_time"])) and np.isnan(traj.quench_time))
    assert comments["exit_reason"] == traj.exit_reason
