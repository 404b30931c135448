"""Profile layer: branch structure, discrete identities at the stated
tolerances, quench diagnostics, tail fits, and CSV export."""

import numpy as np
import pytest
from scipy.integrate import quad

from siwave.ioutil import read_csv
from siwave.potential import FieldPoint, PotentialSpec, eval_W
from siwave.profiles import (
    ProfileGrid,
    ProfileSolveError,
    default_grid,
    find_quench_radius,
    fit_decay,
    mu_of_R_bare,
    mu_prime_of_R,
    quench_energy_test,
    solve_profile,
    sweep_profiles,
    write_profile_csv,
)
from siwave._fd import derivative_matrix_4, trapezoid_weights

SPEC = PotentialSpec(lambda_phi=2.0, lambda_sigma=1.0, beta=1.2, d=0.3)
# analytic branch-switch radius: the sigma-block ground state
# beta - lambda_sigma + d^2/R^2 - nu^2 crosses zero, nu(nu+1) = beta
NU = (-1.0 + np.sqrt(1.0 + 4.0 * SPEC.beta)) / 2.0
R_STAR = SPEC.d / np.sqrt(SPEC.lambda_sigma - SPEC.beta + NU**2)


@pytest.fixture(scope="module")
def condensed():
    return solve_profile(SPEC, R=1.0)


@pytest.fixture(scope="module")
def bare():
    return solve_profile(SPEC, R=0.4)


def test_default_grid_size():
    g = default_grid(SPEC)
    assert g.L == 27.0  # ceil(12 / sqrt(0.2))
    assert g.n_points == 2049


def test_condensed_branch_above_quench_radius(condensed):
    assert condensed.condensed
    assert condensed.mu < mu_of_R_bare(SPEC)
    assert condensed.el_residual <= 1e-8


def test_bare_branch_is_discrete_kink(bare):
    assert not bare.condensed
    assert np.abs(bare.s).max() <= 1e-10
    x = bare.grid.x
    assert np.abs(bare.f - np.tanh(x)).max() < 1e-5
    # kink energy (2/3) sqrt(2 lambda_phi) = 4/3
    assert bare.mu == pytest.approx(4.0 / 3.0, abs=1e-5)
    assert bare.mu_prime == 0.0


def test_parity_and_bounds(condensed):
    f, s = condensed.f, condensed.s
    assert np.abs(f + f[::-1]).max() <= 1e-8
    assert np.abs(s - s[::-1]).max() <= 1e-8
    assert np.abs(f).max() <= 1.0 + 1e-10
    assert s.min() >= -1e-10 and s.max() <= 1.0 + 1e-10
    n = f.size
    assert f[n // 2] == pytest.approx(0.0, abs=1e-12)


def test_equipartition(condensed):
    """Pointwise 1/2 |F0'|^2 = W along the minimizer, sup defect <= 1e-6."""
    g = condensed.grid
    G = derivative_matrix_4(g.n_points, g.h)
    dens = 0.5 * ((G @ condensed.f) ** 2 + (G @ condensed.s) ** 2)
    W = eval_W(SPEC, FieldPoint(condensed.f, condensed.s), condensed.R)
    assert np.abs(dens - W).max() <= 1e-6


def test_envelope_identity_against_finite_differences(condensed):
    """mu'(R) = -(d^2/R^3)||s||^2 vs centered difference of mu, dR = 1e-3."""
    dR = 1e-3
    hi = solve_profile(SPEC, R=1.0 + dR, seed=(condensed.f, condensed.s))
    lo = solve_profile(SPEC, R=1.0 - dR, seed=(condensed.f, condensed.s))
    fd = (hi.mu - lo.mu) / (2 * dR)
    assert abs(fd - condensed.mu_prime) <= 1e-4 * abs(fd)
    assert condensed.mu_prime < 0


def test_mu_prime_of_R_matches_solution(condensed):
    assert mu_prime_of_R(SPEC, 1.0) == pytest.approx(condensed.mu_prime, rel=1e-12)


def test_norms_consistency(condensed):
    g = condensed.grid
    w = trapezoid_weights(g.n_points, g.h)
    assert condensed.norm_s0_sq == pytest.approx(float(w @ condensed.s**2), rel=1e-14)
    # equipartition integrated: ||F0'||^2 = 2 int W
    W = eval_W(SPEC, FieldPoint(condensed.f, condensed.s), condensed.R)
    assert condensed.norm_F0prime_sq == pytest.approx(2 * float(w @ W), rel=1e-6)
    assert condensed.mu == pytest.approx(condensed.norm_F0prime_sq, rel=1e-6)


def test_decay_rates(condensed, bare):
    alpha_s = np.sqrt(SPEC.beta - SPEC.lambda_sigma + SPEC.d**2 / condensed.R**2)
    assert condensed.decay_alpha == pytest.approx(alpha_s, rel=0.02)
    assert bare.decay_alpha == pytest.approx(np.sqrt(2 * SPEC.lambda_phi), rel=0.02)


def test_fit_decay_prefix_on_underflow():
    x = np.linspace(0, 40, 4001)
    y = np.exp(-1.5 * x)
    y[y < 1e-300] = 0.0
    fit = fit_decay(x, y, vacuum=0.0)
    assert fit.alpha == pytest.approx(1.5, rel=1e-6)
    assert fit.used_prefix
    assert fit.e_foldings >= 5.0


def test_quench_energy_test_closed_form():
    # pinned parameters: d^2/R^2 = 0.05 gives bracket -0.05 over B = sqrt(1/2)
    R = np.sqrt(SPEC.d**2 / 0.05)
    val = quench_energy_test(SPEC, R)
    assert val == pytest.approx(-0.05 * np.sqrt(2.0), rel=1e-12)
    # sign flips at d^2/R^2 = lambda_sigma/2 - beta/3
    R_zero = np.sqrt(SPEC.d**2 / (SPEC.lambda_sigma / 2 - SPEC.beta / 3))
    assert quench_energy_test(SPEC, R_zero) == pytest.approx(0.0, abs=1e-15)
    assert quench_energy_test(SPEC, R_zero * 1.05) < 0
    assert quench_energy_test(SPEC, R_zero * 0.95) > 0


def test_quench_energy_test_matches_quadrature():
    """Closed form == energy difference of the matched-width trial, 1e-8."""
    B = np.sqrt(SPEC.lambda_sigma / 2.0)
    R = 1.3

    def integrand(x):
        ss = 1.0 / np.cosh(B * x)
        ds = -B * np.tanh(B * x) / np.cosh(B * x)
        return (0.5 * ds**2
                + SPEC.lambda_sigma / 4 * (ss**2 - 2) * ss**2
                + SPEC.beta / 2 * np.tanh(B * x) ** 2 * ss**2
                + SPEC.d**2 / (2 * R**2) * ss**2)

    val, _ = quad(integrand, -80, 80, limit=500)
    assert abs(quench_energy_test(SPEC, R) - val) <= 1e-8


def test_find_quench_radius_matches_analytic_bifurcation():
    res = find_quench_radius(SPEC, R_lo=0.4, R_hi=0.8)
    assert res.R_star == pytest.approx(R_STAR, abs=2e-3)
    assert res.monotone
    assert "monotone" in res.diagnostics


def test_find_quench_radius_requires_sign_change():
    with pytest.raises(ValueError, match="no sign change"):
        find_quench_radius(SPEC, R_lo=1.0, R_hi=1.5)


def test_sweep_crosses_branches():
    sols = sweep_profiles(SPEC, [1.2, 0.9, 0.7, 0.5, 0.45])
    flags = [s.condensed for s in sols]
    assert flags == [True, True, True, False, False]
    # bare tail of the sweep is R-independent
    assert sols[-1].mu == pytest.approx(sols[-2].mu, rel=1e-12)


def test_seed_is_respected_and_energy_postcondition():
    g = ProfileGrid(L=27.0, n_points=2049)
    x = g.x
    sol = solve_profile(SPEC, R=1.0, grid=g,
                        seed=(np.tanh(x), 0.3 / np.cosh(0.5 * x)))
    assert sol.condensed
    assert sol.el_residual <= 1e-8


def test_newton_failure_carries_last_iterate():
    g = ProfileGrid(L=27.0, n_points=513)
    x = g.x
    bad = (np.sign(x) * (np.abs(x) / g.L) ** 0.1, 0.9 * np.ones_like(x))
    with pytest.raises(ProfileSolveError) as err:
        solve_profile(SPEC, R=1.0, grid=g, seed=bad, flow_iters=0, max_newton=1)
    assert err.value.last_f.shape == x.shape
    assert err.value.residual > 1e-11


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        solve_profile(SPEC, R=-1.0)
    with pytest.raises(ValueError):
        ProfileGrid(L=10.0, n_points=100)  # even
    with pytest.raises(ValueError):
        default_grid(PotentialSpec(2.0, 1.0, 1.0, 0.3))  # lambda_star = 0


def test_profile_csv_roundtrip(tmp_path, condensed):
    path = write_profile_csv(condensed, tmp_path)
    assert path.name == "profile_R1.csv"
    cols, comments = read_csv(path)
    assert set(cols) == {"x", "f", "s"}
    np.testing.assert_array_equal(cols["f"], condensed.f)
    np.testing.assert_array_equal(cols["s"], condensed.s)
    assert float(comments["mu"]) == condensed.mu
    assert float(comments["decay_alpha"]) == condensed.decay_alpha
