"""Shift extraction, error fields, and the epsilon-convergence study.

For each snapshot the modulation shift a(y0) recenters the interface
profile so that the error

    xi = Phi - F0~ - eps F1~

is L2-orthogonal to the translation direction d_y1 F0~ on the chart band.
The convergence study repeats the wave run over a descending epsilon
ladder on shared scaled grids, fits the log-log slope of the band norms
of xi and of its time derivative, and runs a control arm with the
corrector F1~ dropped from the ansatz, which must lose an order.

Norm conventions. `l2`, `h1_band` and `l2_t` integrate |.|^2 dr along a
fixed-time slice of the band (slab norms in the lab frame); the energy E,
the coercivity audit, the orthogonality pairing and the outside-band tail
use the chart line measure m dr, the discrete stand-in for dy1.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.signal import savgol_filter

from .coords import ChartError, NormalFrame
from .effective import InterfaceTrajectory, ProfileTable, build_profile_table, integrate_R
from .ioutil import write_csv, write_json
from .linop import spectral_report
from .potential import FieldPoint, PotentialSpec, grad_W, hess_W, partial_R_w
from .profiles import ProfileGrid, solve_profile
from .wavesim import BlowUpError, FieldState, RadialGrid, run

__all__ = [
    "UDeltaExit",
    "BandSlice",
    "ShiftSolve",
    "ErrorFields",
    "ResidualNorms",
    "SlopeFit",
    "EpsSeries",
    "ErrorReport",
    "band_slice",
    "solve_shift",
    "error_fields",
    "residual_decomposition",
    "convergence_study",
    "write_error_report",
]

G_TOL = 1e-10  # converged shift residual |G|
STEP_TOL = 1e-13  # Newton step below which the iteration has settled
BRACKET_UNITS = 5.0  # bisection bracket half-width, in units of eps
_NEWTON_BUDGET = 12  # Newton iterations before falling back to bisection
_PAD = 2  # ghost nodes each side of the band for the radial stencil


class UDeltaExit(RuntimeError):
    """The shift functional has no root within |a| <= 5 eps: the state
    left the neighborhood where the shift map is defined."""


# --------------------------------------------------------------------------
# chart pullback of a fixed-time slice


@dataclass(frozen=True)
class BandSlice:
    """Chart pullback of one fixed-t grid slice onto the band |y1| <= y_star.

    Arrays cover the band plus two ghost nodes per side; `interior`
    selects the band proper within them and `span` locates the padded
    window in the parent grid. `truncated` marks slices where the chart
    fails over part of the requested band.
    """

    t: float
    y_star: float
    span: slice
    s: np.ndarray
    d: np.ndarray
    interior: slice
    truncated: bool


def _invert_slice(frame: NormalFrame, t: float, r: np.ndarray):
    """Chart coordinates (s, d) of the slice {t} x r, with a validity mask."""
    r = np.asarray(r, dtype=float)
    s = np.full(r.shape, float(t))
    for _ in range(60):
        R = np.asarray(frame.R(s), float)
        Rp = np.asarray(frame.Rp(s), float)
        g = -(t - s) + (r - R) * Rp
        gp = 1.0 - Rp * Rp + (r - R) * np.asarray(frame.Rpp(s), float)
        ds = -g / gp
        s = np.clip(s + ds, frame.y0_min, frame.y0_max)
        if np.max(np.abs(ds)) < 1e-14:
            break
    R = np.asarray(frame.R(s), float)
    Rp = np.asarray(frame.Rp(s), float)
    d = (r - R) * np.sqrt(1.0 - Rp * Rp)
    g = -(t - s) + (r - R) * Rp
    ok = (np.abs(g) < 1e-10) & (np.abs(d) <= frame.y1_max)
    return s, d, ok


def _band_from_slice(t, y_star, s, d, ok) -> BandSlice:
    band = ok & (np.abs(d) <= y_star)
    if not band.any():
        raise ChartError(f"no chart-valid band nodes at t = {t:.6g}")
    truncated = bool(np.any(~ok & (np.abs(d) <= y_star)))
    idx = np.flatnonzero(band)
    truncated = truncated or not bool(np.all(band[idx[0]:idx[-1] + 1]))
    lo = idx[0] - _PAD
    hi = idx[-1] + 1 + _PAD
    if lo < 0 or hi > d.size:
        truncated = True
        lo, hi = max(lo, 0), min(hi, d.size)
    span = slice(int(lo), int(hi))
    interior = slice(int(idx[0] - lo), int(idx[-1] + 1 - lo))
    return BandSlice(t=float(t), y_star=float(y_star), span=span,
                     s=s[span], d=d[span], interior=interior,
                     truncated=truncated)


def band_slice(frame: NormalFrame, t: float, r: np.ndarray,
               y_star: float) -> BandSlice:
    """Invert the chart along the slice {t} x r and cut out the band."""
    s, d, ok = _invert_slice(frame, t, r)
    return _band_from_slice(t, y_star, s, d, ok)


# --------------------------------------------------------------------------
# ansatz evaluation on a slice


def _profile_pair(table: ProfileTable, z, R, dz: int = 0, dR: int = 0,
                  corrector: bool = False):
    lead, sub = ("f1", "s1") if corrector else ("f", "s")
    return np.stack([table.eval_field(lead, z, R, dz=dz, dR=dR),
                     table.eval_field(sub, z, R, dz=dz, dR=dR)], axis=-1)


@dataclass(frozen=True)
class _SliceAnsatz:
    F0: np.ndarray
    F0z: np.ndarray
    A: np.ndarray
    A_t: np.ndarray
    f1_term: np.ndarray  # eps * m * F1, zeros when the corrector is off
    R: np.ndarray
    v: np.ndarray
    m: np.ndarray
    n: np.ndarray


def _ansatz_on_slice(table, frame, sl: BandSlice, eps, a, a_prime,
                     include_f1) -> _SliceAnsatz:
    """Ansatz and its lab-time derivative on the padded slice."""
    s, d = sl.s, sl.d
    R = np.asarray(frame.R(s), float)
    v = np.asarray(frame.Rp(s), float)
    Rpp = np.asarray(frame.Rpp(s), float)
    m = 1.0 / np.sqrt(1.0 - v * v)
    n = 1.0 + d * m**3 * Rpp
    s_t = m * m / n  # dy0/dt along the slice
    z = (d - a) / eps
    z_t = (-m * v - a_prime * s_t) / eps
    F0 = _profile_pair(table, z, R)
    F0z = _profile_pair(table, z, R, dz=1)
    F0R = _profile_pair(table, z, R, dR=1)
    A = F0.copy()
    A_t = F0z * z_t[:, None] + F0R * (v * s_t)[:, None]
    f1_term = np.zeros_like(A)
    if include_f1:
        F1 = _profile_pair(table, z, R, corrector=True)
        F1z = _profile_pair(table, z, R, dz=1, corrector=True)
        F1R = _profile_pair(table, z, R, dR=1, corrector=True)
        m_s = m**3 * v * Rpp  # dm/dy0 along the trajectory
        f1_term = eps * m[:, None] * F1
        A = A + f1_term
        A_t = A_t + eps * (m[:, None] * (F1z * z_t[:, None]
                                         + F1R * (v * s_t)[:, None])
                           + (m_s * s_t)[:, None] * F1)
    return _SliceAnsatz(F0=F0, F0z=F0z, A=A, A_t=A_t, f1_term=f1_term,
                        R=R, v=v, m=m, n=n)


def _deriv_r(arr: np.ndarray, dr: float) -> np.ndarray:
    """Fourth-order centered d/dr along axis 0; the two nodes at each end
    are ghost padding and just copy the nearest interior value."""
    out = np.empty_like(arr)
    out[2:-2] = (arr[:-4] - 8 * arr[1:-3] + 8 * arr[3:-1] - arr[4:]) / (12 * dr)
    out[:2] = out[2]
    out[-2:] = out[-3]
    return out


# --------------------------------------------------------------------------
# modulation shift


@dataclass(frozen=True)
class ShiftSolve:
    """Converged modulation shift at one snapshot."""

    y0: float
    a: float
    G_residual: float
    newton_iters: int
    dG_da: float
    method: str  # "newton" or "bisection"
    truncated_band: bool


def solve_shift(snapshot: FieldState, traj: InterfaceTrajectory,
                frame: NormalFrame, table: ProfileTable,
                a_prev: float = 0.0, *, grid: RadialGrid,
                y_star: float) -> ShiftSolve:
    """Root of the shift functional G(a) = d/da ||Phi - F0((. - a)/eps)||^2.

    Newton from the previous shift (zero at the first snapshot) with the
    analytic derivative; on stagnation or escape it falls back to
    bisection over |a| <= 5 eps. No sign change over that bracket means
    the state left the neighborhood where the shift is defined.
    """
    t = float(snapshot.t)
    if not min(0.0, frame.y0_min) <= t <= traj.T:
        raise ChartError(f"snapshot time {t:.6g} outside the trajectory "
                         f"range [0, {traj.T:.6g}]")
    eps = grid.epsilon
    sl = band_slice(frame, t, grid.r, y_star)
    it = sl.interior
    d = sl.d[it]
    R = np.asarray(frame.R(sl.s[it]), float)
    v = np.asarray(frame.Rp(sl.s[it]), float)
    w = grid.dr / np.sqrt(1.0 - v * v)  # chart measure m dr on the band
    Phi = np.stack([snapshot.phi[sl.span][it],
                    snapshot.sigma[sl.span][it]], axis=-1)

    def g_and_slope(a):
        z = (d - a) / eps
        F0 = _profile_pair(table, z, R)
        F0z = _profile_pair(table, z, R, dz=1)
        F0zz = _profile_pair(table, z, R, dz=2)
        diff = Phi - F0
        G = (2.0 / eps**2) * float(np.sum(w[:, None] * diff * F0z))
        dG = (2.0 / eps**3) * float(np.sum(w[:, None] * F0z * F0z)
                                    - np.sum(w[:, None] * diff * F0zz))
        return G, dG

    half = BRACKET_UNITS * eps
    a = float(a_prev)
    method = "newton"
    iters = 0
    G, dG = np.nan, np.nan
    converged = False
    for _ in range(_NEWTON_BUDGET):
        G, dG = g_and_slope(a)
        iters += 1
        step = -G / dG if dG > 0.0 else np.inf
        if abs(G) <= G_TOL and abs(step) < STEP_TOL:
            converged = True
            break
        if not np.isfinite(step) or abs(a + step) > half:
            break
        a += step
    if not converged:
        G_lo, _ = g_and_slope(-half)
        G_hi, _ = g_and_slope(half)
        if not (np.isfinite(G_lo) and np.isfinite(G_hi)) or G_lo * G_hi > 0:
            raise UDeltaExit(
                f"left U_delta neighborhood at t = {t:.6g}: shift functional "
                f"does not change sign on |a| <= {BRACKET_UNITS:g} eps "
                f"(G(-{half:.4g}) = {G_lo:.4g}, G(+{half:.4g}) = {G_hi:.4g})")
        method = "bisection"
        a = float(brentq(lambda x: g_and_slope(x)[0], -half, half,
                         xtol=1e-15, rtol=8.9e-16))
        for _ in range(4):  # Newton polish down to the residual tolerance
            G, dG = g_and_slope(a)
            iters += 1
            if abs(G) <= G_TOL:
                break
            a -= G / dG
        G, dG = g_and_slope(a)
        if abs(G) > G_TOL:
            raise UDeltaExit(f"shift residual stalled at |G| = {abs(G):.3g} "
                             f"after bisection at t = {t:.6g}")
    if not dG > 0.0:
        raise UDeltaExit(f"shift functional slope is not positive at the "
                         f"root (dG/da = {dG:.4g} at t = {t:.6g})")
    return ShiftSolve(y0=t, a=float(a), G_residual=float(G),
                      newton_iters=iters, dG_da=float(dG), method=method,
                      truncated_band=sl.truncated)


# --------------------------------------------------------------------------
# error fields and norms


@dataclass(frozen=True)
class ErrorFields:
    """Error xi on the band at one snapshot, with its norms and audits."""

    y0: float
    a: float
    a_prime: float
    y1: np.ndarray
    xi: np.ndarray
    xi_t: np.ndarray
    xi_r: np.ndarray
    E: float
    l2: float
    h1_band: float
    l2_t: float
    l2_chart: float
    A_underline: float
    tail: float
    tail_bound: float
    coercivity_ratio: float
    coercivity_bound: float
    orth: float
    orth_rel: float
    f1_projection: float
    truncated_band: bool


def error_fields(snapshot: FieldState, shift: ShiftSolve,
                 traj: InterfaceTrajectory, frame: NormalFrame,
                 table: ProfileTable, *, spec: PotentialSpec,
                 grid: RadialGrid, y_star: float, a_prime: float = 0.0,
                 include_f1: bool = True, gap: Optional[float] = None,
                 alpha: Optional[float] = None) -> ErrorFields:
    """Pull the snapshot onto the band, subtract the ansatz, and evaluate
    the norms, the energy, and the audits.

    The corrector part of the ansatz is projected off the translation
    direction in the discrete chart measure, restoring the continuum
    orthogonality that quadrature breaks; the projection coefficient is
    reported and treated as constant in time, so `xi_t` differentiates
    the unprojected ansatz.
    """
    t = float(snapshot.t)
    if abs(shift.y0 - t) > 1e-9:
        raise ValueError("shift was solved for a different snapshot time")
    eps = grid.epsilon
    if alpha is None:
        alpha = float(table.column("decay_alpha",
                                   float(np.asarray(frame.R(t), float))))
    s_full, d_full, ok_full = _invert_slice(frame, t, grid.r)
    sl = _band_from_slice(t, y_star, s_full, d_full, ok_full)
    an = _ansatz_on_slice(table, frame, sl, eps, shift.a, a_prime,
                          include_f1)
    it = sl.interior
    Phi = np.stack([snapshot.phi[sl.span], snapshot.sigma[sl.span]], axis=-1)
    Phi_t = np.stack([snapshot.phi_t[sl.span], snapshot.sigma_t[sl.span]],
                     axis=-1)
    u = an.F0z / eps  # translation direction d_y1 F0~
    w = an.m[it] * grid.dr
    u_sq = float(np.sum(w * (u[it] * u[it]).sum(-1)))
    xi = Phi - an.A
    c = 0.0
    if include_f1:
        c = float(np.sum(w * (an.f1_term[it] * u[it]).sum(-1))) / u_sq
        xi = xi + c * u
    xi_t = Phi_t - an.A_t
    xi_r = _deriv_r(xi, grid.dr)
    y1 = sl.d[it]
    xi_b, xi_tb, xi_rb = xi[it], xi_t[it], xi_r[it]

    # slab norms in the radial measure
    l2 = float(np.sqrt(np.sum((xi_b**2).sum(-1)) * grid.dr))
    h1_band = float(np.sqrt(np.sum((xi_b**2 + xi_rb**2).sum(-1)) * grid.dr))
    l2_t = float(np.sqrt(np.sum((xi_tb**2).sum(-1)) * grid.dr))

    # chart derivatives and the band energy
    v, m, n = an.v[it], an.m[it], an.n[it]
    xi_y0 = n[:, None] * (xi_tb + v[:, None] * xi_rb)
    xi_y1 = m[:, None] * (v[:, None] * xi_tb + xi_rb)
    F0b, Rb = an.F0[it], an.R[it]
    quad = np.empty(y1.size)
    for j in range(y1.size):
        H = hess_W(spec, FieldPoint(F0b[j, 0], F0b[j, 1]), Rb[j])
        quad[j] = xi_b[j] @ H @ xi_b[j]
    e_dens = (0.5 * (m / n)**2 * (xi_y0**2).sum(-1)
              + 0.5 * (xi_y1**2).sum(-1)
              + 0.5 / eps**2 * quad)
    E = float(np.sum(w * e_dens))
    l2c_sq = float(np.sum(w * (xi_b**2).sum(-1)))

    # audits: orthogonality, coercivity, shift functional size
    orth = float(np.sum(w * (xi_b * u[it]).sum(-1)))
    denom = np.sqrt(l2c_sq) * np.sqrt(u_sq)
    orth_rel = float(abs(orth) / denom) if denom > 0 else 0.0
    tail_bound = float(np.exp(-alpha * (y_star - abs(shift.a)) / eps))
    coercivity_ratio = float((l2c_sq / eps**2) / (E + tail_bound / eps**2))
    coercivity_bound = float(2.0 / gap) if gap else float("nan")
    A_underline = float((1.0 + abs(shift.a) / eps + abs(a_prime) / eps)**3)

    # outside-band tail against the same ansatz, chart measure
    out = ok_full & (np.abs(d_full) > y_star)
    tail = 0.0
    if out.any():
        so, do = s_full[out], d_full[out]
        Ro = np.asarray(frame.R(so), float)
        mo = 1.0 / np.sqrt(1.0 - np.asarray(frame.Rp(so), float)**2)
        zo = (do - shift.a) / eps
        Ao = _profile_pair(table, zo, Ro)
        if include_f1:
            Ao = Ao + eps * mo[:, None] * _profile_pair(table, zo, Ro,
                                                        corrector=True)
        Po = np.stack([snapshot.phi[out], snapshot.sigma[out]], axis=-1)
        tail = float(np.sqrt(np.sum(mo * grid.dr * ((Po - Ao)**2).sum(-1))))

    return ErrorFields(y0=t, a=shift.a, a_prime=float(a_prime), y1=y1,
                       xi=xi_b, xi_t=xi_tb, xi_r=xi_rb, E=E, l2=l2,
                       h1_band=h1_band, l2_t=l2_t,
                       l2_chart=float(np.sqrt(l2c_sq)),
                       A_underline=A_underline, tail=tail,
                       tail_bound=tail_bound,
                       coercivity_ratio=coercivity_ratio,
                       coercivity_bound=coercivity_bound, orth=orth,
                       orth_rel=orth_rel, f1_projection=c,
                       truncated_band=sl.truncated)


# --------------------------------------------------------------------------
# residual decomposition


@dataclass(frozen=True)
class ResidualNorms:
    """L2(band) size of the three source terms at one y0 slice."""

    y0: float
    a: float
    epsilon: float
    n_band: int
    S_minus1: float
    S_0: float
    N: float


def _ansatz_row(table, frame, y0, y1, a, eps):
    """Corrected ansatz on a fixed-y0 row of the uniform band."""
    R = float(np.asarray(frame.R(y0), float))
    v = float(np.asarray(frame.Rp(y0), float))
    m = 1.0 / np.sqrt(1.0 - v * v)
    z = (y1 - a) / eps
    Rv = np.full_like(y1, R)
    return (_profile_pair(table, z, Rv)
            + eps * m * _profile_pair(table, z, Rv, corrector=True))


def residual_decomposition(snapshot: Optional[FieldState],
                           shift: ShiftSolve, traj: InterfaceTrajectory,
                           frame: NormalFrame, table: ProfileTable, *,
                           spec: PotentialSpec, y_star: float,
                           grid: Optional[RadialGrid] = None,
                           a_path: Optional[Callable[[float], float]] = None,
                           n_band: int = 801,
                           include_xi: bool = True) -> ResidualNorms:
    """Source terms of the error equation on the uniform band at the
    shift's y0: the order -1 source (corrector response, curvature
    transport, mean-curvature drive), the order 0 source from the slow
    drift of the ansatz along y0, and the quadratic remainder N.

    `a_path`, when given, supplies a(y0) for the drift stencil; otherwise
    the shift is frozen at its snapshot value. With `include_xi` the
    measured error joins the remainder argument; otherwise N is evaluated
    at F_xi = eps F1~ alone.
    """
    eps = spec.epsilon
    y0 = float(shift.y0)
    a_of = a_path if a_path is not None else (lambda s: shift.a)
    a0 = float(a_of(y0))
    R = float(np.asarray(frame.R(y0), float))
    v = float(np.asarray(frame.Rp(y0), float))
    m = 1.0 / np.sqrt(1.0 - v * v)
    y1 = np.linspace(-y_star, y_star, int(n_band))
    dy = y1[1] - y1[0]
    B0, B1 = frame.B_coeffs(np.full_like(y1, y0), y1)
    n = 1.0 + y1 * m**3 * float(np.asarray(frame.Rpp(y0), float))
    z = (y1 - a0) / eps
    Rv = np.full_like(y1, R)
    F0 = _profile_pair(table, z, Rv)
    F0z = _profile_pair(table, z, Rv, dz=1)
    F1 = _profile_pair(table, z, Rv, corrector=True)
    F1z = _profile_pair(table, z, Rv, dz=1, corrector=True)
    F1zz = _profile_pair(table, z, Rv, dz=2, corrector=True)
    Hm = np.empty((y1.size, 2, 2))
    dRw = np.empty((y1.size, 2))
    for j in range(y1.size):
        pt = FieldPoint(F0[j, 0], F0[j, 1])
        Hm[j] = hess_W(spec, pt, R)
        dRw[j] = partial_R_w(spec, pt, R)

    # order -1: eps * L(F0~) F1~ + curvature transport + mean-curvature drive
    LF1 = (-m * F1zz + np.einsum("jkl,jl->jk", Hm, m * F1)) / eps**2
    S_m1 = (eps * LF1 + B1[:, None] * F0z / eps
            + (y1 / eps**2)[:, None] * m * dRw)

    # order 0: slow drift of the ansatz along y0 at fixed y1
    h = 1e-4
    rows = [_ansatz_row(table, frame, y0 + j * h, y1,
                        float(a_of(y0 + j * h)), eps)
            for j in (-2, -1, 0, 1, 2)]
    A_00 = (-rows[0] + 16 * rows[1] - 30 * rows[2] + 16 * rows[3]
            - rows[4]) / (12 * h * h)
    A_0 = (rows[0] - 8 * rows[1] + 8 * rows[3] - rows[4]) / (12 * h)
    S_0 = ((m * m / (n * n))[:, None] * A_00 + B0[:, None] * A_0
           + B1[:, None] * (m * F1z))

    # quadratic remainder at F_xi = eps F1~ (+ measured xi when requested)
    F_xi = eps * m * F1
    if include_xi:
        if snapshot is None or grid is None:
            raise ValueError("include_xi needs the snapshot and its grid")
        sl = band_slice(frame, float(snapshot.t), grid.r, y_star)
        an = _ansatz_on_slice(table, frame, sl, eps, shift.a, 0.0, True)
        itv = sl.interior
        Phi = np.stack([snapshot.phi[sl.span][itv],
                        snapshot.sigma[sl.span][itv]], axis=-1)
        xi_meas = Phi - an.A[itv]
        F_xi = F_xi + np.stack([np.interp(y1, sl.d[itv], xi_meas[:, 0]),
                                np.interp(y1, sl.d[itv], xi_meas[:, 1])],
                               axis=-1)
    Ntot = np.empty((y1.size, 2))
    for j in range(y1.size):
        base = FieldPoint(F0[j, 0], F0[j, 1])
        bent = FieldPoint(F0[j, 0] + F_xi[j, 0], F0[j, 1] + F_xi[j, 1])
        Ntot[j] = (np.asarray(grad_W(spec, bent, R + y1[j] * m))
                   - np.asarray(grad_W(spec, base, R))
                   - Hm[j] @ F_xi[j] - y1[j] * m * dRw[j]) / eps**2

    def _l2(arr):
        return float(np.sqrt(np.sum(dy * (arr * arr).sum(-1))))

    return ResidualNorms(y0=y0, a=a0, epsilon=float(eps), n_band=int(n_band),
                         S_minus1=_l2(S_m1), S_0=_l2(S_0), N=_l2(Ntot))


# --------------------------------------------------------------------------
# convergence study


@dataclass(frozen=True)
class SlopeFit:
    """Log-log slope of a norm against epsilon, with fit diagnostics."""

    name: str
    epsilons: np.ndarray
    values: np.ndarray
    slope: float
    ci95: float
    residuals: np.ndarray
    pairwise: np.ndarray


def _fit_slope(name, eps, vals) -> SlopeFit:
    eps = np.asarray(eps, float)
    vals = np.asarray(vals, float)
    if eps.size < 2 or np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        empty = np.full(eps.shape, np.nan)
        return SlopeFit(name, eps, vals, float("nan"), float("nan"),
                        empty, empty[:-1] if eps.size else empty)
    x, y = np.log(eps), np.log(vals)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    sxx = float(np.sum((x - x.mean())**2))
    dof = max(eps.size - 2, 1)
    se = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    return SlopeFit(name=name, epsilons=eps, values=vals,
                    slope=float(coef[0]), ci95=float(1.96 * se),
                    residuals=resid, pairwise=np.diff(y) / np.diff(x))


@dataclass(frozen=True)
class EpsSeries:
    """Per-snapshot error series at one epsilon, plus the control arm."""

    epsilon: float
    y0: np.ndarray
    a: np.ndarray
    a_prime: np.ndarray
    E: np.ndarray
    l2: np.ndarray
    h1_band: np.ndarray
    l2_t: np.ndarray
    A_underline: np.ndarray
    tail: np.ndarray
    tail_bound: np.ndarray
    orth: np.ndarray
    coercivity: np.ndarray
    newton_iters: np.ndarray
    truncated: np.ndarray
    l2_control: np.ndarray
    h1_control: np.ndarray
    l2_t_control: np.ndarray

    def _pick(self, main, ctrl, control):
        return ctrl if control else main

    def norm_L1H1(self, control: bool = False) -> float:
        vals = self._pick(self.h1_band, self.h1_control, control)
        return float(np.trapezoid(vals, self.y0))

    def norm_L1L2t(self, control: bool = False) -> float:
        vals = self._pick(self.l2_t, self.l2_t_control, control)
        return float(np.trapezoid(vals, self.y0))

    def sup_l2(self, control: bool = False) -> float:
        vals = self._pick(self.l2, self.l2_control, control)
        return float(np.max(vals))


@dataclass(frozen=True)
class ErrorReport:
    """Outcome of one convergence study."""

    epsilons: np.ndarray
    T_bar: float
    y_star: float
    alpha: float
    gap: float
    series: tuple
    slopes: dict
    excluded: tuple


def convergence_study(spec_base: PotentialSpec, eps_list, T_bar: float = 1.0,
                      *, table: Optional[ProfileTable] = None,
                      R0: float = 3.0, traj_T_max: Optional[float] = None,
                      nodes_per_eps: int = 40, n_snapshots: int = 51,
                      y_star: Optional[float] = None, cfl: float = 0.5,
                      grid_margin: float = 0.25,
                      include_control: bool = True,
                      gap: Optional[float] = None,
                      threads: int = 1) -> ErrorReport:
    """Wave runs over a descending epsilon ladder on shared scaled grids
    (dr = eps / nodes_per_eps, dt from one CFL rule), with shift and error
    series per epsilon and fitted log-log slopes of the band norms.

    Runs that blow up, leave the chart, or lose the shift root are
    dropped from the fit and reported in `excluded`. The reference
    trajectory is integrated past T_bar so the chart covers the full band
    at late snapshot times.
    """
    eps_arr = np.asarray(tuple(eps_list), float)
    if eps_arr.size < 3:
        raise ValueError("need at least three epsilon values")
    if not np.all(np.diff(eps_arr) < 0):
        raise ValueError("epsilon ladder must be strictly descending")
    if n_snapshots < 5:
        raise ValueError("need at least five snapshots for the "
                         "a-derivative stencil")
    if table is None:
        table = build_profile_table(spec_base, 0.85 * R0, 1.05 * R0,
                                    n_knots=13, grid=ProfileGrid(28.0, 5741),
                                    store_profiles=True)
    traj = integrate_R(spec_base, table, R0,
                       T_max=(T_bar + 1.0 if traj_T_max is None
                              else traj_T_max))
    if traj.T < T_bar:
        raise ValueError(f"reference trajectory stops at T = {traj.T:.4g} "
                         f"({traj.exit_reason}) before T_bar = {T_bar:g}")
    frame = NormalFrame(traj)
    delta = frame.y1_max - 0.01
    if y_star is None:
        y_star = delta - 2.0 * eps_arr[0] - 0.03
    if not 0.0 < y_star < delta - 2.0 * eps_arr[0]:
        raise ValueError("band half-width must sit inside the plateau of "
                         "the edge blending")
    alpha = float(table.column("decay_alpha", R0))
    if gap is None:
        gap = float(spectral_report(
            spec_base, solve_profile(spec_base, R0, grid=table.grid)).gap)

    def one_eps(eps: float) -> EpsSeries:
        spec = replace(spec_base, epsilon=float(eps))
        dr = eps / nodes_per_eps
        r_lo = R0 - delta - T_bar - grid_margin
        r_hi = R0 + delta + T_bar + grid_margin
        n_r = int(np.ceil((r_hi - r_lo) / dr)) + 1
        grid = RadialGrid(r_lo, r_hi, n_r, float(eps))
        wave = run(spec, table, traj, frame=frame, grid=grid, delta=delta,
                   T_max=T_bar, n_snapshots=n_snapshots, cfl=cfl)
        shifts = []
        a_prev = 0.0
        for snap in wave.snapshots:
            sh = solve_shift(snap, traj, frame, table, a_prev,
                             grid=grid, y_star=y_star)
            shifts.append(sh)
            a_prev = sh.a
        a_series = np.array([sh.a for sh in shifts])
        dt_snap = float(wave.times[1] - wave.times[0])
        a_prime = savgol_filter(a_series, 5, 3, deriv=1, delta=dt_snap,
                                mode="interp")
        nan = np.full(len(wave.snapshots), np.nan)
        cols = {name: [] for name in
                ("E", "l2", "h1", "l2t", "Au", "tail", "tailb", "orth",
                 "coer", "trunc", "l2c", "h1c", "l2tc")}
        for k, snap in enumerate(wave.snapshots):
            ef = error_fields(snap, shifts[k], traj, frame, table,
                              spec=spec, grid=grid, y_star=y_star,
                              a_prime=float(a_prime[k]), include_f1=True,
                              gap=gap, alpha=alpha)
            cols["E"].append(ef.E)
            cols["l2"].append(ef.l2)
            cols["h1"].append(ef.h1_band)
            cols["l2t"].append(ef.l2_t)
            cols["Au"].append(ef.A_underline)
            cols["tail"].append(ef.tail)
            cols["tailb"].append(ef.tail_bound)
            cols["orth"].append(ef.orth)
            cols["coer"].append(ef.coercivity_ratio)
            cols["trunc"].append(ef.truncated_band or
                                 shifts[k].truncated_band)
            if include_control:
                cf = error_fields(snap, shifts[k], traj, frame, table,
                                  spec=spec, grid=grid, y_star=y_star,
                                  a_prime=float(a_prime[k]),
                                  include_f1=False, gap=gap, alpha=alpha)
                cols["l2c"].append(cf.l2)
                cols["h1c"].append(cf.h1_band)
                cols["l2tc"].append(cf.l2_t)
        arr = {name: np.asarray(vals, float)
               for name, vals in cols.items() if name != "trunc"}
        return EpsSeries(
            epsilon=float(eps), y0=np.asarray(wave.times, float),
            a=a_series, a_prime=np.asarray(a_prime, float),
            E=arr["E"], l2=arr["l2"], h1_band=arr["h1"], l2_t=arr["l2t"],
            A_underline=arr["Au"], tail=arr["tail"], tail_bound=arr["tailb"],
            orth=arr["orth"], coercivity=arr["coer"],
            newton_iters=np.array([sh.newton_iters for sh in shifts]),
            truncated=np.asarray(cols["trunc"], bool),
            l2_control=arr["l2c"] if include_control else nan,
            h1_control=arr["h1c"] if include_control else nan,
            l2_t_control=arr["l2tc"] if include_control else nan)

    def guarded(eps: float):
        try:
            return one_eps(float(eps))
        except (BlowUpError, ChartError, UDeltaExit) as exc:
            return (float(eps), f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            outcomes = list(pool.map(guarded, eps_arr))
    else:
        outcomes = [guarded(eps) for eps in eps_arr]
    series = tuple(o for o in outcomes if isinstance(o, EpsSeries))
    excluded = tuple(o for o in outcomes if not isinstance(o, EpsSeries))

    slopes = {}
    if len(series) >= 2:
        kept = np.array([s.epsilon for s in series])
        mains = (("sup_l2", lambda s: s.sup_l2()),
                 ("L1H1", lambda s: s.norm_L1H1()),
                 ("L1L2t", lambda s: s.norm_L1L2t()))
        for name, grab in mains:
            slopes[name] = _fit_slope(name, kept, [grab(s) for s in series])
        if include_control:
            ctrls = (("sup_l2_control", lambda s: s.sup_l2(control=True)),
                     ("L1H1_control",
                      lambda s: s.norm_L1H1(control=True)),
                     ("L1L2t_control",
                      lambda s: s.norm_L1L2t(control=True)))
            for name, grab in ctrls:
                slopes[name] = _fit_slope(name, kept,
                                          [grab(s) for s in series])
    return ErrorReport(epsilons=eps_arr, T_bar=float(T_bar),
                       y_star=float(y_star), alpha=alpha, gap=float(gap),
                       series=series, slopes=slopes, excluded=excluded)


# --------------------------------------------------------------------------
# artifacts


def write_error_report(report: ErrorReport, outdir) -> Path:
    """One JSON summary plus a flat CSV series per epsilon."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    series_files = []
    summary = {}

    def _finite(x):
        return float(x) if np.isfinite(x) else None

    for s in report.series:
        fname = f"series_eps{s.epsilon:g}.csv"
        write_csv(outdir / fname,
                  {"y0": s.y0, "a": s.a, "a_prime": s.a_prime, "E": s.E,
                   "l2": s.l2, "h1_band": s.h1_band, "l2_t": s.l2_t,
                   "A_underline": s.A_underline, "tail": s.tail,
                   "tail_bound": s.tail_bound, "orth": s.orth,
                   "coercivity": s.coercivity,
                   "newton_iters": s.newton_iters.astype(float),
                   "truncated": s.truncated.astype(float),
                   "l2_control": s.l2_control, "h1_control": s.h1_control,
                   "l2_t_control": s.l2_t_control},
                  header_comments={"epsilon": s.epsilon,
                                   "T_bar": report.T_bar,
                                   "y_star": report.y_star})
        series_files.append(fname)
        summary[f"{s.epsilon:g}"] = {
            "L1H1": s.norm_L1H1(),
            "L1L2t": s.norm_L1L2t(),
            "sup_l2": s.sup_l2(),
            "L1H1_control": _finite(s.norm_L1H1(control=True)),
            "L1L2t_control": _finite(s.norm_L1L2t(control=True)),
            "sup_l2_control": _finite(s.sup_l2(control=True)),
            "E_max": float(np.max(s.E)),
            "E_0": float(s.E[0]),
            "A_underline_max": float(np.max(s.A_underline)),
            "a_abs_max": float(np.max(np.abs(s.a))),
            "coercivity_max": float(np.max(s.coercivity)),
            "orth_abs_max": float(np.max(np.abs(s.orth))),
            "tail_max": float(np.max(s.tail)),
            "truncated_count": int(np.sum(s.truncated)),
        }
    payload = {
        "epsilons": report.epsilons,
        "T_bar": report.T_bar,
        "y_star": report.y_star,
        "alpha": report.alpha,
        "gap": report.gap,
        "excluded": [{"epsilon": e, "reason": r}
                     for e, r in report.excluded],
        "slopes": {name: {"slope": _finite(f.slope),
                          "ci95": _finite(f.ci95),
                          "epsilons": f.epsilons,
                          "values": f.values,
                          "residuals": f.residuals,
                          "pairwise": f.pairwise}
                   for name, f in report.slopes.items()},
        "series_files": series_files,
        "summary": summary,
    }
    return write_json(outdir / "error_report.json", payload)
