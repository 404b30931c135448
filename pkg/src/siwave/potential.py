"""Two-component pair potential and its radius-shifted variant.

The fields are Phi = (phi, sigma). The base potential is

    V(phi, sigma) = lambda_phi/4 (phi^2 - 1)^2
                  + lambda_sigma/4 (sigma^2 - 2) sigma^2
                  + beta/2 phi^2 sigma^2,

normalized so the vacua (phi, sigma) = (+-1, 0) sit at V = 0. At interface
radius R the winding of the second component contributes a centrifugal term,
giving the shifted potential

    W(Phi, R) = V(Phi) + d^2 / (2 R^2) sigma^2.

All derivative operations (gradient, Hessian, R-derivative of the gradient)
are closed-form. `check_assumptions` audits the structural hypotheses the
rest of the pipeline relies on: positivity, vacuum non-degeneracy, and the
coupling regime lambda_sigma < beta < lambda_phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PotentialSpec",
    "FieldPoint",
    "CustomPotential",
    "AssumptionsReport",
    "eval_V",
    "eval_W",
    "grad_W",
    "hess_W",
    "partial_R_w",
    "check_assumptions",
]


@dataclass(frozen=True)
class PotentialSpec:
    """Coupling constants of the pair potential plus the interface scale.

    d is the winding number of the sigma-component (enters only through
    d^2/R^2), epsilon the interface width parameter of the rescaled system.
    """

    lambda_phi: float
    lambda_sigma: float
    beta: float
    d: float
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.lambda_phi <= 0 or self.lambda_sigma <= 0:
            raise ValueError("lambda_phi and lambda_sigma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.d < 0:
            raise ValueError("d must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def in_regime(self) -> bool:
        """Coupling regime lambda_sigma < beta < lambda_phi."""
        return self.lambda_sigma < self.beta < self.lambda_phi

    @property
    def lambda_star(self) -> float:
        """Slowest vacuum curvature: min eigenvalue of Hess V at (+-1, 0) is
        min(2 lambda_phi, beta - lambda_sigma)."""
        return min(2.0 * self.lambda_phi, self.beta - self.lambda_sigma)


@dataclass(frozen=True)
class FieldPoint:
    """A point (phi, sigma) in field space; entries may be scalars or arrays."""

    phi: object
    sigma: object


@dataclass(frozen=True)
class CustomPotential:
    """User-supplied potential: callables for value, gradient and Hessian.

    v(phi, sigma) -> array; grad(phi, sigma) -> (dV/dphi, dV/dsigma);
    hess(phi, sigma) -> (V_pp, V_ps, V_ss). `lambda_star` must be declared
    by the caller since it cannot be inferred from callables.
    `normalization` is the additive constant subtracted from v so that the
    vacua sit at zero; it is stored, not guessed.
    """

    v: Callable
    grad: Callable
    hess: Callable
    lambda_star: float
    normalization: float = 0.0


@dataclass(frozen=True)
class AssumptionsReport:
    """Outcome of the structural audit of the potential."""

    regime_ok: bool
    positivity_ok: bool
    min_V: float
    argmin_V: tuple
    vacuum_hessian_eigs: tuple
    lambda_star: float
    normalization: float
    messages: tuple = field(default_factory=tuple)

    @property
    def all_ok(self) -> bool:
        return self.regime_ok and self.positivity_ok and self.lambda_star > 0


def _fields(point: FieldPoint):
    return np.asarray(point.phi, dtype=float), np.asarray(point.sigma, dtype=float)


def eval_V(spec: PotentialSpec, point: FieldPoint,
           potential: Optional[CustomPotential] = None):
    """Base potential V(phi, sigma), vacuum-normalized."""
    phi, sigma = _fields(point)
    if potential is not None:
        return np.asarray(potential.v(phi, sigma), dtype=float) - potential.normalization
    return (spec.lambda_phi / 4.0 * (phi**2 - 1.0) ** 2
            + spec.lambda_sigma / 4.0 * (sigma**2 - 2.0) * sigma**2
            + spec.beta / 2.0 * phi**2 * sigma**2)


def eval_W(spec: PotentialSpec, point: FieldPoint, R: float,
           potential: Optional[CustomPotential] = None):
    """Shifted potential W(Phi, R) = V(Phi) + d^2/(2R^2) sigma^2."""
    if np.any(np.asarray(R) <= 0):
        raise ValueError("R must be positive")
    _, sigma = _fields(point)
    return eval_V(spec, point, potential) + spec.d**2 / (2.0 * R**2) * sigma**2


def grad_W(spec: PotentialSpec, point: FieldPoint, R: float,
           potential: Optional[CustomPotential] = None):
    """Field-space gradient w = grad_Phi W, stacked as (..., 2).

    dW/dphi   = lambda_phi (phi^2 - 1) phi + beta phi sigma^2
    dW/dsigma = lambda_sigma (sigma^2 - 1) sigma + beta phi^2 sigma
              + (d^2/R^2) sigma
    """
    if np.any(np.asarray(R) <= 0):
        raise ValueError("R must be positive")
    phi, sigma = _fields(point)
    if potential is not None:
        gp, gs = potential.grad(phi, sigma)
        gp = np.asarray(gp, dtype=float)
        gs = np.asarray(gs, dtype=float) + spec.d**2 / R**2 * sigma
        return np.stack(np.broadcast_arrays(gp, gs), axis=-1)
    gp = spec.lambda_phi * (phi**2 - 1.0) * phi + spec.beta * phi * sigma**2
    gs = (spec.lambda_sigma * (sigma**2 - 1.0) * sigma
          + spec.beta * phi**2 * sigma + spec.d**2 / R**2 * sigma)
    return np.stack(np.broadcast_arrays(gp, gs), axis=-1)


def hess_W(spec: PotentialSpec, point: FieldPoint, R: float,
           potential: Optional[CustomPotential] = None):
    """Field-space Hessian of W, stacked as (..., 2, 2).

    Entries for the quartic pair potential:
      W_pp = lambda_phi (3 phi^2 - 1) + beta sigma^2
      W_ps = 2 beta phi sigma
      W_ss = lambda_sigma (3 sigma^2 - 1) + beta phi^2 + d^2/R^2
    """
    if np.any(np.asarray(R) <= 0):
        raise ValueError("R must be positive")
    phi, sigma = _fields(point)
    if potential is not None:
        a, b, c = potential.hess(phi, sigma)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        c = np.asarray(c, dtype=float) + spec.d**2 / R**2
    else:
        a = spec.lambda_phi * (3.0 * phi**2 - 1.0) + spec.beta * sigma**2
        b = 2.0 * spec.beta * phi * sigma
        c = (spec.lambda_sigma * (3.0 * sigma**2 - 1.0)
             + spec.beta * phi**2 + spec.d**2 / R**2)
    a, b, c = np.broadcast_arrays(a, b, np.asarray(c, dtype=float))
    out = np.empty(a.shape + (2, 2))
    out[..., 0, 0] = a
    out[..., 0, 1] = b
    out[..., 1, 0] = b
    out[..., 1, 1] = c
    return out


def partial_R_w(spec: PotentialSpec, point: FieldPoint, R: float):
    """R-derivative of the gradient: d_R w = (0, -2 d^2/R^3 sigma).

    Only the centrifugal term depends on R, so this is potential-independent.
    """
    if np.any(np.asarray(R) <= 0):
        raise ValueError("R must be positive")
    phi, sigma = _fields(point)
    gp = np.zeros_like(np.broadcast_arrays(phi, sigma)[0])
    gs = -2.0 * spec.d**2 / R**3 * sigma
    return np.stack(np.broadcast_arrays(gp, gs), axis=-1)


def check_assumptions(spec: PotentialSpec,
                      potential: Optional[CustomPotential] = None,
                      box: float = 2.0, spacing: float = 0.01) -> AssumptionsReport:
    """Audit the structural hypotheses on the potential.

    Evaluates V on the grid [-box, box]^2 with the given spacing and checks
    nonnegativity (up to roundoff), records the vacuum Hessian eigenvalues
    (2 lambda_phi, beta - lambda_sigma) for the default potential, and flags
    the coupling regime. For a custom potential the declared lambda_star is
    trusted and vacuum eigenvalues are probed numerically at (+-1, 0).
    """
    grid = np.arange(-box, box + spacing / 2, spacing)
    P, S = np.meshgrid(grid, grid, indexing="ij")
    vals = eval_V(spec, FieldPoint(P, S), potential)
    k = int(np.argmin(vals))
    min_V = float(vals.flat[k])
    argmin = (float(P.flat[k]), float(S.flat[k]))
    positivity_ok = min_V >= -1e-12

    if potential is None:
        eigs = (2.0 * spec.lambda_phi, spec.beta - spec.lambda_sigma)
        lam_star = spec.lambda_star
        norm_const = float(eval_V(spec, FieldPoint(1.0, 0.0)))
    else:
        H = hess_W(spec, FieldPoint(1.0, 0.0), R=1.0, potential=potential)
        H[..., 1, 1] -= spec.d**2  # remove the shift probe at R=1
        eigs = tuple(float(e) for e in np.linalg.eigvalsh(H))
        lam_star = potential.lambda_star
        norm_const = potential.normalization

    messages = []
    if not spec.in_regime:
        messages.append(
            f"coupling regime violated: need lambda_sigma < beta < lambda_phi, "
            f"got {spec.lambda_sigma} / {spec.beta} / {spec.lambda_phi}")
    if not positivity_ok:
        messages.append(f"V attains {min_V:.3e} < 0 at {argmin}")
    if lam_star <= 0:
        messages.append(f"vacuum degenerate: lambda_star = {lam_star:.3e}")

    return AssumptionsReport(
        regime_ok=spec.in_regime,
        positivity_ok=positivity_ok,
        min_V=min_V,
        argmin_V=argmin,
        vacuum_hessian_eigs=eigs,
        lambda_star=lam_star,
        normalization=norm_const,
        messages=tuple(messages),
    )
