"""Effective motion of the interface radius.

To leading order the interface radius obeys

    R'' = [ (d^2/R^2) ||s0||^2(R) / ||F0'||^2(R) - 1 ] (1 - R'^2) / R,

where the bracket can equivalently be written with the integrated shifted
potential, (1/2)(d^2/R^2) ||s0||^2 / int W - 1, by equipartition. Below the
quench radius the profile is bare (s == 0), the bracket is exactly -1, and
the equation reduces to radial mean-curvature flow of the unit-speed
hyperboloid family; R(t) = R0 cos(t / R0) solves it exactly.

Profile data enters through a `ProfileTable`: per-knot scalars with C^1
cubic interpolation (Hermite for mu, using the exact envelope derivative;
shape-preserving cubics for the norms), split at the branch-switch radius.
At exactly R_star the table answers with the lower (bare) branch.

`check_quench_envelopes` verifies the comparison-function bounds: while the
bracket stays in [-1, -1/2] on [R_*/2, R_* + delta] and the trajectory
starts at rest at R_* + delta, the velocity is pinched between
-tanh(c_hi y0) and -tanh(c_lo y0) with c_hi = 2/R_*, c_lo = 1/(2(R_*+delta)),
and R between the matching R(0) - (1/c) log cosh(c y0) envelopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PchipInterpolator, RectBivariateSpline

from .ioutil import write_csv
from .potential import FieldPoint, PotentialSpec, eval_W
from .profiles import (
    ProfileGrid,
    ProfileSolution,
    default_grid,
    find_quench_radius,
    solve_profile,
    sweep_profiles,
)
from ._fd import trapezoid_weights

__all__ = [
    "ProfileTable",
    "InterfaceTrajectory",
    "BoundReport",
    "build_profile_table",
    "mean_curvature",
    "bracket_values",
    "rhs_Rpp",
    "integrate_R",
    "check_quench_envelopes",
    "write_trajectory_csv",
]

HORIZON_SPEED = 0.99


def mean_curvature(R: float, Rp: float, Rpp: float) -> float:
    """Mean curvature of the moving radius-R interface in (t, r):

        H = m ( Rpp / (1 - Rp^2) + 1/R ),   m = (1 - Rp^2)^{-1/2}.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if abs(Rp) >= 1:
        raise ValueError("|R'| must be below 1")
    m = 1.0 / np.sqrt(1.0 - Rp * Rp)
    return float(m * (Rpp / (1.0 - Rp * Rp) + 1.0 / R))


@dataclass
class ProfileTable:
    """Interpolated profile scalars over a radius window.

    Columns are per-knot values on the condensed side; the bare side is
    R-independent so it is stored as single constants. Exactly at R_star the
    bare branch answers. When built with store_profiles=True the field
    profiles (f, s and the rest-frame corrector f1, s1) are kept on the
    (x, R) product grid with bicubic interpolation for the modulation study;
    that requires the window to stay on the condensed side.
    """

    spec: PotentialSpec
    grid: ProfileGrid
    R_knots: np.ndarray
    mu: np.ndarray
    mu_prime: np.ndarray
    norm_F0prime_sq: np.ndarray
    norm_s0_sq: np.ndarray
    W_L1_norm: np.ndarray
    decay_alpha: np.ndarray
    condensed: np.ndarray
    R_star: Optional[float] = None
    bare_values: Optional[dict] = None
    _fields: Optional[dict] = field(default=None, repr=False)
    _splines: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        kn = self.R_knots
        if kn.size < 2 or np.any(np.diff(kn) <= 0):
            raise ValueError("R_knots must be ascending with at least 2 entries")
        cond = self.condensed.astype(bool)
        if cond.any():
            sel = np.where(cond)[0]
            if not np.array_equal(sel, np.arange(sel[0], kn.size)):
                raise ValueError("condensed knots must form the upper range")
            Rc = kn[cond]
            self._splines["mu"] = CubicHermiteSpline(Rc, self.mu[cond],
                                                     self.mu_prime[cond])
            for name in ("mu_prime", "norm_F0prime_sq", "norm_s0_sq",
                         "W_L1_norm", "decay_alpha"):
                self._splines[name] = PchipInterpolator(Rc, getattr(self, name)[cond])

    @property
    def R_min(self) -> float:
        return float(self.R_knots[0])

    @property
    def R_max(self) -> float:
        return float(self.R_knots[-1])

    def _check(self, R: float) -> None:
        if not (self.R_min - 1e-12 <= R <= self.R_max + 1e-12):
            raise ValueError(
                f"profile table exhausted: R = {R:g} outside "
                f"[{self.R_min:g}, {self.R_max:g}]")

    def _is_bare(self, R: float) -> bool:
        if not self.condensed.any():
            return True
        if self.condensed.all():
            return False
        return R <= self.R_star  # lower branch exactly at R_star

    def column(self, name: str, R: float) -> float:
        self._check(R)
        if self._is_bare(R):
            return float(self.bare_values[name])
        val = float(self._splines[name](R))
        if name == "norm_s0_sq":
            # the condensed amplitude vanishes linearly at R_star; keep the
            # interpolant from undershooting zero in the refinement gap
            val = max(val, 0.0)
        return val

    def eval_field(self, name: str, z, R, dz: int = 0, dR: int = 0):
        """Bicubic profile field on the (x, R) grid; z clipped to [-L, L]."""
        if self._fields is None:
            raise ValueError("table was built without store_profiles")
        zc = np.clip(z, -self.grid.L, self.grid.L)
        Rv = np.clip(np.asarray(R, dtype=float), self.R_min, self.R_max)
        out = self._fields[name].ev(zc, Rv, dx=dz, dy=dR)
        return out


def build_profile_table(spec: PotentialSpec, R_min: float, R_max: float,
                        n_knots: int = 25,
                        grid: Optional[ProfileGrid] = None,
                        store_profiles: bool = False) -> ProfileTable:
    """Solve profiles on a knot grid (descending warm-start sweep) and
    assemble the interpolated table. If the window straddles the branch
    switch, R_star is refined by bisection to 1e-3."""
    if grid is None:
        grid = default_grid(spec)
    if not (0 < R_min < R_max):
        raise ValueError("need 0 < R_min < R_max")
    knots = np.linspace(R_min, R_max, n_knots)
    sols = sweep_profiles(spec, knots[::-1], grid=grid)[::-1]

    cond = np.array([s.condensed for s in sols])
    R_star = None
    if cond.any() and not cond.all():
        k = int(np.argmax(cond))  # first condensed knot
        if not cond[k:].all():
            raise ValueError("branch flag is not monotone across the window")
        R_star = find_quench_radius(spec, knots[k - 1], knots[k], grid=grid).R_star
        # densify the condensed side of the refinement gap so the splines
        # capture the linear vanishing of the amplitude at R_star
        extra = [R_star + frac * (knots[k] - R_star) for frac in (0.15, 0.45, 0.75)]
        add_R, add_sol = [], []
        for R in extra:
            s = solve_profile(spec, R, grid=grid)
            if s.condensed:
                add_R.append(R)
                add_sol.append(s)
        if add_R:
            knots = np.concatenate([knots[:k], add_R, knots[k:]])
            sols = sols[:k] + add_sol + sols[k:]
            cond = np.array([s.condensed for s in sols])

    w = trapezoid_weights(grid.n_points, grid.h)

    def w_l1(sol: ProfileSolution) -> float:
        return float(w @ eval_W(spec, FieldPoint(sol.f, sol.s), sol.R))

    bare_values = None
    if not cond.all():
        j = int(np.argmin(cond))  # any bare knot
        b = sols[j]
        bare_values = {
            "mu": b.mu, "mu_prime": 0.0,
            "norm_F0prime_sq": b.norm_F0prime_sq, "norm_s0_sq": 0.0,
            "W_L1_norm": w_l1(b), "decay_alpha": b.decay_alpha,
        }

    fields = None
    if store_profiles:
        if not cond.all():
            raise ValueError("store_profiles requires a fully condensed window")
        from .linop import solve_F1
        x = grid.x
        stacks = {"f": [], "s": [], "f1": [], "s1": []}
        for s in sols:
            corr = solve_F1(spec, s, v=0.0)
            stacks["f"].append(s.f)
            stacks["s"].append(s.s)
            stacks["f1"].append(corr.f1)
            stacks["s1"].append(corr.s1)
        fields = {
            name: RectBivariateSpline(x, knots, np.array(cols).T, kx=3, ky=3)
            for name, cols in stacks.items()
        }

    return ProfileTable(
        spec=spec, grid=grid, R_knots=knots,
        mu=np.array([s.mu for s in sols]),
        mu_prime=np.array([s.mu_prime for s in sols]),
        norm_F0prime_sq=np.array([s.norm_F0prime_sq for s in sols]),
        norm_s0_sq=np.array([s.norm_s0_sq for s in sols]),
        W_L1_norm=np.array([w_l1(s) for s in sols]),
        decay_alpha=np.array([s.decay_alpha for s in sols]),
        condensed=cond, R_star=R_star, bare_values=bare_values,
        _fields=fields)


def bracket_values(spec: PotentialSpec, table: ProfileTable, R: float):
    """Both forms of the effective bracket at radius R.

    norm form:  (d^2/R^2) ||s0||^2 / ||F0'||^2 - 1
    W form:     (1/2)(d^2/R^2) ||s0||^2 / int W - 1

    They agree by equipartition; rhs_Rpp asserts it at 1e-5.
    """
    ns = table.column("norm_s0_sq", R)
    nf = table.column("norm_F0prime_sq", R)
    wl = table.column("W_L1_norm", R)
    ratio = spec.d**2 / R**2 * ns
    return ratio / nf - 1.0, 0.5 * ratio / wl - 1.0


def rhs_Rpp(spec: PotentialSpec, table: ProfileTable, R: float, Rp: float) -> float:
    """Right-hand side R'' = bracket(R) (1 - R'^2) / R."""
    if abs(Rp) >= 1:
        raise ValueError("|R'| must be below 1")
    b_norm, b_w = bracket_values(spec, table, R)
    if abs(b_norm - b_w) > 1e-5:
        raise AssertionError(
            f"bracket forms disagree at R={R:g}: {b_norm:.8f} vs {b_w:.8f}")
    return b_norm * (1.0 - Rp * Rp) / R


@dataclass
class InterfaceTrajectory:
    """Sampled solution of the radius equation.

    Rpp is the ODE right-hand side at the samples, never a second
    difference. quench_time is the first crossing of the table's branch
    radius (nan if it never crosses); exit_reason is one of "horizon"
    (|R'| reached 0.99), "below_r0" (left the table window), "time_limit".
    """

    times: np.ndarray
    R: np.ndarray
    Rp: np.ndarray
    Rpp: np.ndarray
    bracket: np.ndarray
    quench_time: float
    exit_reason: str

    def __post_init__(self):
        if np.abs(self.Rp).max() >= 1.0:
            raise ValueError("|R'| reached 1")
        if self.R.min() <= 0.0:
            raise ValueError("R reached 0")
        self._spline_R = CubicHermiteSpline(self.times, self.R, self.Rp)
        self._spline_Rp = CubicHermiteSpline(self.times, self.Rp, self.Rpp)
        self._spline_Rpp = CubicSpline(self.times, self.Rpp)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def eval_R(self, t):
        return self._spline_R(t)

    def eval_Rp(self, t):
        return self._spline_Rp(t)

    def eval_Rpp(self, t):
        return self._spline_Rpp(t)

    def eval_Rppp(self, t):
        return self._spline_Rpp(t, 1)

    @property
    def quenched(self) -> np.ndarray:
        if np.isnan(self.quench_time):
            return np.zeros_like(self.times, dtype=bool)
        return self.times >= self.quench_time


def _rk4_step(fun, t, y, dt):
    k1 = fun(t, y)
    k2 = fun(t + dt / 2, y + dt / 2 * k1)
    k3 = fun(t + dt / 2, y + dt / 2 * k2)
    k4 = fun(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_R(spec: PotentialSpec, table: ProfileTable, R0: float,
                Rp0: float = 0.0, T_max: float = 10.0, dt: float = 1e-2,
                tol: float = 1e-9) -> InterfaceTrajectory:
    """Integrate the radius equation with fixed-step RK4.

    Each step is checked by step doubling; if the defect exceeds `tol` the
    step is halved (permanently, keeping the grid deterministic) and the
    step retried. Stops at the horizon speed, the lower table edge, or
    T_max, whichever comes first.
    """
    table._check(R0)
    if abs(Rp0) >= 1:
        raise ValueError("|R'(0)| must be below 1")

    def fun(t, y):
        return np.array([y[1], rhs_Rpp(spec, table, y[0], y[1])])

    t, y = 0.0, np.array([float(R0), float(Rp0)])
    ts, Rs, Rps = [t], [y[0]], [y[1]]
    exit_reason = "time_limit"
    while t < T_max - 1e-14:
        step = min(dt, T_max - t)
        try:
            while True:
                full = _rk4_step(fun, t, y, step)
                half = _rk4_step(fun, t + step / 2,
                                 _rk4_step(fun, t, y, step / 2), step / 2)
                if np.abs(full - half).max() <= tol or step <= 1e-8:
                    break
                dt = dt / 2
                step = min(dt, T_max - t)
        except ValueError as err:
            # a substep probed past the table edge or the horizon; stop at
            # the last accepted sample
            exit_reason = ("below_r0" if "table" in str(err) else "horizon")
            break
        if half[0] <= table.R_min:
            # keep the trajectory inside the table window
            exit_reason = "below_r0"
            break
        y = half
        t = t + step
        ts.append(t)
        Rs.append(y[0])
        Rps.append(y[1])
        if abs(y[1]) >= HORIZON_SPEED:
            exit_reason = "horizon"
            break

    times = np.array(ts)
    R = np.array(Rs)
    Rp = np.array(Rps)
    Rpp = np.array([rhs_Rpp(spec, table, r, rp) for r, rp in zip(R, Rp)])
    brk = np.array([bracket_values(spec, table, r)[0] for r in R])

    quench_time = float("nan")
    if table.R_star is not None:
        below = R <= table.R_star
        if below.any():
            k = int(np.argmax(below))
            if k == 0:
                quench_time = 0.0
            else:
                # linear crossing between samples k-1 and k
                r0, r1 = R[k - 1], R[k]
                t0, t1 = times[k - 1], times[k]
                quench_time = float(t0 + (table.R_star - r0) / (r1 - r0) * (t1 - t0))

    return InterfaceTrajectory(times=times, R=R, Rp=Rp, Rpp=Rpp, bracket=brk,
                               quench_time=quench_time, exit_reason=exit_reason)


@dataclass(frozen=True)
class BoundReport:
    """Comparison-envelope audit for a quench trajectory."""

    R_star: float
    delta: float
    c_hi: float
    c_lo: float
    hypothesis_ok: bool
    max_violation: float
    n_samples: int
    notes: str

    @property
    def passed(self) -> bool:
        return self.hypothesis_ok and self.max_violation <= 1e-6


def _log_cosh(x):
    # overflow-safe log(cosh(x))
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def check_quench_envelopes(spec: PotentialSpec, table: ProfileTable,
                           delta: float, n_samples: int = 400,
                           traj: Optional[InterfaceTrajectory] = None) -> BoundReport:
    """Check the tanh / log-cosh comparison envelopes below the quench.

    Scans the bracket hypothesis b(R) in [-1, -1/2] on [R_*/2, R_* + delta]
    sample by sample; on failure the report carries "hypothesis fails" and
    skips the envelope comparison. Otherwise integrates from rest at
    R_* + delta (or uses the supplied trajectory) and records the maximum
    pointwise envelope violation while R >= R_*/2.
    """
    if table.R_star is None:
        raise ValueError("table has no branch switch; envelopes need R_star")
    R_star = table.R_star
    if delta <= 0:
        raise ValueError("delta must be positive")
    lo, hi = 0.5 * R_star, R_star + delta
    table._check(lo)
    table._check(hi)

    R_scan = np.linspace(lo, hi, n_samples)
    b_scan = np.array([bracket_values(spec, table, R)[0] for R in R_scan])
    ok = (b_scan >= -1.0 - 1e-9) & (b_scan <= -0.5 + 1e-9)
    if not ok.all():
        bad = R_scan[~ok]
        return BoundReport(
            R_star=R_star, delta=delta, c_hi=2.0 / R_star,
            c_lo=1.0 / (2.0 * (R_star + delta)), hypothesis_ok=False,
            max_violation=float("nan"), n_samples=n_samples,
            notes=f"hypothesis fails: bracket leaves [-1, -1/2] at "
                  f"R = {bad[0]:g} (value {b_scan[~ok][0]:.6f})")

    if traj is None:
        traj = integrate_R(spec, table, R0=hi, Rp0=0.0, T_max=10.0)
    sel = traj.R >= lo - 1e-12
    t = traj.times[sel]
    R = traj.R[sel]
    Rp = traj.Rp[sel]

    c_hi = 2.0 / R_star
    c_lo = 1.0 / (2.0 * (R_star + delta))
    Rp_lower = -np.tanh(c_hi * t)
    Rp_upper = -np.tanh(c_lo * t)
    R_lower = hi - _log_cosh(c_hi * t) / c_hi
    R_upper = hi - _log_cosh(c_lo * t) / c_lo

    viol = np.max([
        np.max(Rp_lower - Rp, initial=0.0),
        np.max(Rp - Rp_upper, initial=0.0),
        np.max(R_lower - R, initial=0.0),
        np.max(R - R_upper, initial=0.0),
    ])
    return BoundReport(
        R_star=R_star, delta=delta, c_hi=c_hi, c_lo=c_lo, hypothesis_ok=True,
        max_violation=float(max(viol, 0.0)), n_samples=int(sel.sum()),
        notes="velocity pinched between -tanh(c_hi y0) and -tanh(c_lo y0) "
              "with distinct rates c_hi = 2/R_star, c_lo = 1/(2(R_star+delta))")


def write_trajectory_csv(traj: InterfaceTrajectory, path) -> Path:
    return write_csv(
        path,
        {
            "y0": traj.times,
            "R": traj.R,
            "Rp": traj.Rp,
            "Rpp": traj.Rpp,
            "bracket": traj.bracket,
            "quenched": traj.quenched.astype(float),
        },
        header_comments={
            "quench_time": traj.quench_time,
            "exit_reason": traj.exit_reason,
        },
    )
