"""Potential layer: frozen values, closed-form derivatives vs finite
differences, vacuum structure, and the assumptions audit."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siwave.potential import (
    PotentialSpec,
    FieldPoint,
    CustomPotential,
    eval_V,
    eval_W,
    grad_W,
    hess_W,
    partial_R_w,
    check_assumptions,
)

SPEC = PotentialSpec(lambda_phi=2.0, lambda_sigma=1.0, beta=1.2, d=0.3)


def test_frozen_values():
    # V(0,0) = lambda_phi/4
    assert eval_V(SPEC, FieldPoint(0.0, 0.0)) == pytest.approx(0.5, abs=1e-15)
    # hand-computed at (0.5, 0.5), R=1.5
    assert eval_V(SPEC, FieldPoint(0.5, 0.5)) == pytest.approx(0.209375, abs=1e-15)
    assert eval_W(SPEC, FieldPoint(0.5, 0.5), R=1.5) == pytest.approx(0.214375, abs=1e-15)
    g = grad_W(SPEC, FieldPoint(0.5, 0.5), R=1.5)
    assert g == pytest.approx([-0.6, -0.205], abs=1e-15)
    H = hess_W(SPEC, FieldPoint(0.5, 0.5), R=1.5)
    assert np.allclose(H, [[-0.2, 0.6], [0.6, 0.09]], atol=1e-15)


def test_vacua_are_critical_and_normalized():
    for phi0 in (1.0, -1.0):
        p = FieldPoint(phi0, 0.0)
        assert eval_V(SPEC, p) == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(grad_W(SPEC, p, R=2.0), 0.0, atol=1e-15)


def test_vacuum_hessian_eigenvalues():
    spec0 = PotentialSpec(2.0, 1.0, 1.2, d=0.0)
    H = hess_W(spec0, FieldPoint(1.0, 0.0), R=1.0)
    assert np.allclose(H, np.diag([4.0, 0.2]), atol=1e-15)
    # with winding the sigma curvature gains d^2/R^2
    H = hess_W(SPEC, FieldPoint(1.0, 0.0), R=1.5)
    assert H[1, 1] == pytest.approx(0.2 + 0.09 / 2.25, abs=1e-15)


def test_partial_R_w_closed_form():
    out = partial_R_w(SPEC, FieldPoint(0.7, 0.4), R=1.25)
    assert out[0] == 0.0
    assert out[1] == pytest.approx(-2 * 0.09 * 0.4 / 1.25**3, rel=1e-15)


@given(
    phi=st.floats(-1.8, 1.8),
    sigma=st.floats(-1.4, 1.4),
    R=st.floats(0.4, 5.0),
)
@settings(max_examples=60, deadline=None)
def test_gradient_matches_finite_differences(phi, sigma, R):
    h = 1e-6
    p = FieldPoint(phi, sigma)
    g = grad_W(SPEC, p, R)
    fd_p = (eval_W(SPEC, FieldPoint(phi + h, sigma), R)
            - eval_W(SPEC, FieldPoint(phi - h, sigma), R)) / (2 * h)
    fd_s = (eval_W(SPEC, FieldPoint(phi, sigma + h), R)
            - eval_W(SPEC, FieldPoint(phi, sigma - h), R)) / (2 * h)
    assert g[0] == pytest.approx(fd_p, abs=1e-8)
    assert g[1] == pytest.approx(fd_s, abs=1e-8)


@given(
    phi=st.floats(-1.8, 1.8),
    sigma=st.floats(-1.4, 1.4),
)
@settings(max_examples=60, deadline=None)
def test_hessian_matches_gradient_differences(phi, sigma):
    h = 1e-6
    R = 1.5
    H = hess_W(SPEC, FieldPoint(phi, sigma), R)
    col_p = (grad_W(SPEC, FieldPoint(phi + h, sigma), R)
             - grad_W(SPEC, FieldPoint(phi - h, sigma), R)) / (2 * h)
    col_s = (grad_W(SPEC, FieldPoint(phi, sigma + h), R)
             - grad_W(SPEC, FieldPoint(phi, sigma - h), R)) / (2 * h)
    assert np.allclose(H[:, 0], col_p, atol=1e-7)
    assert np.allclose(H[:, 1], col_s, atol=1e-7)


def test_R_derivative_of_gradient_matches_finite_differences():
    p = FieldPoint(0.3, 0.8)
    R, h = 1.3, 1e-6
    fd = (grad_W(SPEC, p, R + h) - grad_W(SPEC, p, R - h)) / (2 * h)
    assert np.allclose(partial_R_w(SPEC, p, R), fd, atol=1e-7)


def test_vectorized_evaluation_shapes():
    phi = np.linspace(-1, 1, 11)
    sigma = np.linspace(0, 1, 11)
    p = FieldPoint(phi, sigma)
    assert eval_V(SPEC, p).shape == (11,)
    assert grad_W(SPEC, p, 2.0).shape == (11, 2)
    assert hess_W(SPEC, p, 2.0).shape == (11, 2, 2)


def test_check_assumptions_default():
    rep = check_assumptions(SPEC)
    assert rep.regime_ok
    assert rep.positivity_ok
    assert rep.lambda_star == pytest.approx(0.2)
    assert rep.vacuum_hessian_eigs == pytest.approx((4.0, 0.2))
    assert rep.normalization == 0.0
    assert rep.all_ok
    assert rep.messages == ()


@pytest.mark.parametrize("beta", [0.5, 2.5])
def test_check_assumptions_flags_regime(beta):
    spec = PotentialSpec(2.0, 1.0, beta, d=0.3)
    rep = check_assumptions(spec)
    assert not rep.regime_ok
    assert any("regime" in m for m in rep.messages)
    # beta = 0.5 also degenerates the vacuum: lambda_star = -0.5
    if beta < 1.0:
        assert not rep.all_ok


def test_custom_potential_with_normalization():
    lf, ls, b = SPEC.lambda_phi, SPEC.lambda_sigma, SPEC.beta
    shift = 3.0

    def v(p, s):
        return lf / 4 * (p**2 - 1) ** 2 + ls / 4 * (s**2 - 2) * s**2 + b / 2 * p**2 * s**2 + shift

    def grad(p, s):
        return (lf * (p**2 - 1) * p + b * p * s**2,
                ls * (s**2 - 1) * s + b * p**2 * s)

    def hess(p, s):
        return (lf * (3 * p**2 - 1) + b * s**2,
                2 * b * p * s,
                ls * (3 * s**2 - 1) + b * p**2)

    custom = CustomPotential(v=v, grad=grad, hess=hess, lambda_star=0.2,
                             normalization=shift)
    p = FieldPoint(0.5, 0.5)
    assert eval_V(SPEC, p, custom) == pytest.approx(eval_V(SPEC, p), abs=1e-14)
    assert np.allclose(grad_W(SPEC, p, 1.5, custom), grad_W(SPEC, p, 1.5), atol=1e-14)
    assert np.allclose(hess_W(SPEC, p, 1.5, custom), hess_W(SPEC, p, 1.5), atol=1e-14)
    rep = check_assumptions(SPEC, custom)
    assert rep.positivity_ok
    assert rep.normalization == shift
    assert rep.vacuum_hessian_eigs == pytest.approx((0.2, 4.0))


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        PotentialSpec(-1.0, 1.0, 1.2, 0.3)
    with pytest.raises(ValueError):
        PotentialSpec(2.0, 1.0, 1.2, -0.1)
    with pytest.raises(ValueError):
        PotentialSpec(2.0, 1.0, 1.2, 0.3, epsilon=0.0)
    with pytest.raises(ValueError):
        eval_W(SPEC, FieldPoint(0.0, 0.0), R=0.0)
