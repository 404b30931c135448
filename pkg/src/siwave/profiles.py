"""Interface profiles by constrained energy minimization.

For fixed radius R the profile pair F0 = (f, s) minimizes

    E_R[f, s] = int  1/2 (f'^2 + s'^2) + W((f, s), R)  dx

over the class A = { f(0) = 0, f(+-inf) = +-1, s even }. The minimizer has
f odd and increasing, |f| <= 1, and 0 <= s <= 1; mu(R) = E_R[F0] is the
reduced interface energy. Differentiating along the minimizer gives the
envelope identity

    mu'(R) = -(d^2 / R^3) int s^2 dx,

which is exact for the discrete minimizer as well because the discrete
Euler-Lagrange system solved here is the exact gradient of the discrete
energy (see _fd). Below the quench radius the minimizer has s == 0 and f is
the bare kink tanh(sqrt(lambda_phi/2) x), independent of R.

`quench_energy_test` evaluates the condensation certificate: for the
matched-width trial pair (tanh(Bz), c sech(Bz)) with B = sqrt(lambda_sigma/2)
the s-channel energy difference at unit amplitude is exactly

    (1/B) ( beta/3 + d^2/R^2 - lambda_sigma/2 ),

negative iff switching on the second component pays at radius R.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._fd import derivative_matrix_4, trapezoid_weights
from .ioutil import fmt
from .potential import FieldPoint, PotentialSpec, eval_W, grad_W, hess_W

__all__ = [
    "ProfileGrid",
    "ProfileSolution",
    "ProfileSolveError",
    "QuenchRadiusResult",
    "DecayFit",
    "default_grid",
    "solve_profile",
    "sweep_profiles",
    "mu_of_R",
    "mu_prime_of_R",
    "quench_energy_test",
    "find_quench_radius",
    "fit_decay",
    "write_profile_csv",
]

S_BRANCH_THRESHOLD = 1e-4  # ||s||_inf above this counts as a condensed branch


@dataclass(frozen=True)
class ProfileGrid:
    """Uniform symmetric grid on [-L, L] with an odd number of nodes."""

    L: float
    n_points: int = 2049

    def __post_init__(self) -> None:
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.n_points < 9 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and at least 9")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n_points)


def default_grid(spec: PotentialSpec) -> ProfileGrid:
    """Half-width 12 / sqrt(lambda_star) rounded up, 2049 nodes."""
    lam = spec.lambda_star
    if lam <= 0:
        raise ValueError(
            f"degenerate vacuum (lambda_star = {lam:g}); no decaying profile exists")
    return ProfileGrid(L=float(np.ceil(12.0 / np.sqrt(lam))), n_points=2049)


class _Disc:
    """Cached discrete operators for one grid."""

    def __init__(self, grid: ProfileGrid):
        n, h = grid.n_points, grid.h
        self.x = grid.x
        self.w = trapezoid_weights(n, h)
        self.G = derivative_matrix_4(n, h)
        self.K = (self.G.T @ sp.diags(self.w) @ self.G).tocsr()
        self.free = np.ones(n, dtype=bool)
        self.free[0] = self.free[-1] = False
        # tridiagonal smoother for gradient-flow seeding (second order is fine
        # for seeding; Newton on the fourth-order system does the real work)
        A2 = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)) / h**2
        self._flow_lu = None
        self._flow_tau = None
        self._A2 = A2

    def flow_solver(self, tau: float):
        if self._flow_lu is None or self._flow_tau != tau:
            self._flow_lu = spla.splu((sp.eye(self.x.size) + tau * self._A2).tocsc())
            self._flow_tau = tau
        return self._flow_lu


@lru_cache(maxsize=16)
def _disc_for(L: float, n_points: int) -> _Disc:
    return _Disc(ProfileGrid(L, n_points))


class ProfileSolveError(RuntimeError):
    """Newton failed to converge; carries the last iterate for inspection."""

    def __init__(self, message: str, last_f: np.ndarray, last_s: np.ndarray,
                 residual: float):
        super().__init__(message)
        self.last_f = last_f
        self.last_s = last_s
        self.residual = residual


@dataclass(frozen=True)
class ProfileSolution:
    """Converged profile pair at radius R with its derived scalars.

    norm_F0prime_sq = int |F0'|^2, norm_s0_sq = int s^2, both in the discrete
    trapezoid measure; mu_prime is the envelope value -(d^2/R^3) norm_s0_sq.
    """

    grid: ProfileGrid
    R: float
    f: np.ndarray
    s: np.ndarray
    mu: float
    mu_prime: float
    norm_F0prime_sq: float
    norm_s0_sq: float
    decay_alpha: float
    el_residual: float

    def __post_init__(self) -> None:
        f, s = self.f, self.s
        if np.abs(f + f[::-1]).max() > 1e-8:
            raise ValueError("f is not odd")
        if np.abs(s - s[::-1]).max() > 1e-8:
            raise ValueError("s is not even")
        if np.abs(f).max() > 1.0 + 1e-10:
            raise ValueError("|f| exceeds 1")
        if s.min() < -1e-10 or s.max() > 1.0 + 1e-10:
            raise ValueError("s leaves [0, 1]")

    @property
    def condensed(self) -> bool:
        return float(np.abs(self.s).max()) > S_BRANCH_THRESHOLD


def _energy(disc: _Disc, spec: PotentialSpec, R: float,
            f: np.ndarray, s: np.ndarray) -> float:
    gf = disc.G @ f
    gs = disc.G @ s
    dens = 0.5 * (gf**2 + gs**2) + eval_W(spec, FieldPoint(f, s), R)
    return float(disc.w @ dens)


def _grad_energy(disc: _Disc, spec: PotentialSpec, R: float,
                 f: np.ndarray, s: np.ndarray):
    gw = grad_W(spec, FieldPoint(f, s), R)
    return disc.K @ f + disc.w * gw[:, 0], disc.K @ s + disc.w * gw[:, 1]


def _symmetrize(f: np.ndarray, s: np.ndarray):
    return 0.5 * (f - f[::-1]), 0.5 * (s + s[::-1])


def _el_residual(disc: _Disc, spec: PotentialSpec, R: float,
                 f: np.ndarray, s: np.ndarray) -> float:
    """Sup norm of the Euler-Lagrange defect -u'' + w(u) on interior nodes."""
    rf, rs = _grad_energy(disc, spec, R, f, s)
    m = disc.free
    return float(max(np.abs(rf[m] / disc.w[m]).max(),
                     np.abs(rs[m] / disc.w[m]).max()))


def _newton(disc: _Disc, spec: PotentialSpec, R: float,
            f: np.ndarray, s: np.ndarray,
            tol: float = 1e-11, max_iter: int = 60):
    n = f.size
    m = disc.free
    idx = np.concatenate([np.where(m)[0], n + np.where(m)[0]])
    res = np.inf
    for _ in range(max_iter):
        res = _el_residual(disc, spec, R, f, s)
        if res < tol:
            return f, s, res
        H = hess_W(spec, FieldPoint(f, s), R)
        J = sp.bmat([
            [disc.K + sp.diags(disc.w * H[:, 0, 0]), sp.diags(disc.w * H[:, 0, 1])],
            [sp.diags(disc.w * H[:, 0, 1]), disc.K + sp.diags(disc.w * H[:, 1, 1])],
        ]).tocsr()[idx][:, idx].tocsc()
        rf, rs = _grad_energy(disc, spec, R, f, s)
        du = spla.spsolve(J, -np.concatenate([rf[m], rs[m]]))
        k = int(m.sum())
        # damped step: halve until the defect decreases
        step = 1.0
        for _ in range(12):
            f_try = f.copy()
            s_try = s.copy()
            f_try[m] += step * du[:k]
            s_try[m] += step * du[k:]
            f_try, s_try = _symmetrize(f_try, s_try)
            if _el_residual(disc, spec, R, f_try, s_try) < res:
                break
            step *= 0.5
        f, s = f_try, s_try
    res = _el_residual(disc, spec, R, f, s)
    if res >= tol:
        raise ProfileSolveError(
            f"profile Newton stalled at residual {res:.3e} (tol {tol:.1e})",
            last_f=f, last_s=s, residual=res)
    return f, s, res


def _flow(disc: _Disc, spec: PotentialSpec, R: float,
          f: np.ndarray, s: np.ndarray, iters: int):
    lam_cap = 3.0 * max(spec.lambda_phi,
                        spec.lambda_sigma + spec.beta + spec.d**2 / R**2)
    tau = min(0.2, 1.0 / lam_cap)
    lu = disc.flow_solver(tau)
    for _ in range(iters):
        gw = grad_W(spec, FieldPoint(f, s), R)
        f = lu.solve(f - tau * gw[:, 0])
        s = lu.solve(s - tau * gw[:, 1])
        f[0], f[-1] = -1.0, 1.0
        s[0] = s[-1] = 0.0
        f, s = _symmetrize(f, s)
    return f, s


@lru_cache(maxsize=8)
def _bare_kink(lambda_phi: float, L: float, n_points: int):
    """Bare-branch profile (s == 0): R-independent discrete kink."""
    disc = _disc_for(L, n_points)
    spec = PotentialSpec(lambda_phi, 1.0, 2.0, d=0.0)  # couplings beyond
    # lambda_phi are inert on the s == 0 subspace
    f = np.tanh(np.sqrt(lambda_phi / 2.0) * disc.x)
    s = np.zeros_like(f)
    f, s = _flow(disc, spec, 1.0, f, s, iters=50)
    f, s, res = _newton(disc, spec, 1.0, f, s)
    mu = _energy(disc, spec, 1.0, f, s)
    return f, s, mu, res


def _finalize(disc: _Disc, grid: ProfileGrid, spec: PotentialSpec, R: float,
              f: np.ndarray, s: np.ndarray, res: float) -> ProfileSolution:
    # roundoff-scale overshoots only; re-measure the defect on what we return
    f = np.clip(f, -1.0, 1.0)
    s = np.clip(s, 0.0, 1.0)
    res = _el_residual(disc, spec, R, f, s)
    gf = disc.G @ f
    gs = disc.G @ s
    norm_F0p = float(disc.w @ (gf**2 + gs**2))
    norm_s0 = float(disc.w @ s**2)
    mu = _energy(disc, spec, R, f, s)
    mu_p = -(spec.d**2 / R**3) * norm_s0
    if np.abs(s).max() > S_BRANCH_THRESHOLD:
        fit = fit_decay(disc.x, s, vacuum=0.0)
    else:
        fit = fit_decay(disc.x, f, vacuum=1.0)
    return ProfileSolution(
        grid=grid, R=R, f=f, s=s, mu=mu, mu_prime=mu_p,
        norm_F0prime_sq=norm_F0p, norm_s0_sq=norm_s0,
        decay_alpha=fit.alpha, el_residual=res)


def solve_profile(spec: PotentialSpec, R: float,
                  grid: Optional[ProfileGrid] = None,
                  seed: Optional[tuple] = None,
                  flow_iters: int = 200,
                  max_newton: int = 60) -> ProfileSolution:
    """Minimize the profile energy at radius R.

    With no explicit seed both branches are solved (a condensed seed and the
    cached bare kink) and the lower-energy one is returned; ties go to the
    bare branch. An explicit seed = (f, s) is symmetrized, clamped to the
    boundary data, and followed without branch comparison. Postconditions:
    interior Euler-Lagrange defect below 1e-8 and energy no larger than the
    seed energy. On Newton failure a ProfileSolveError carries the last
    iterate.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if grid is None:
        grid = default_grid(spec)
    disc = _disc_for(grid.L, grid.n_points)
    x = disc.x

    def prep(f, s):
        f = np.asarray(f, dtype=float).copy()
        s = np.asarray(s, dtype=float).copy()
        f[0], f[-1] = -1.0, 1.0
        s[0] = s[-1] = 0.0
        return _symmetrize(f, np.abs(s))

    if seed is not None:
        f0, s0 = prep(*seed)
        seed_energy = _energy(disc, spec, R, f0, s0)
        f0, s0 = _flow(disc, spec, R, f0, s0, flow_iters)
        f, s, res = _newton(disc, spec, R, f0, s0, max_iter=max_newton)
        sol = _finalize(disc, grid, spec, R, f, s, res)
        if sol.mu > seed_energy + 1e-10:
            raise ProfileSolveError(
                f"energy increased above the seed value ({sol.mu:.12g} > "
                f"{seed_energy:.12g})", last_f=f, last_s=s, residual=res)
        return sol

    # condensed branch
    f0, s0 = prep(np.tanh(np.sqrt(spec.lambda_phi / 2.0) * x),
                  0.5 / np.cosh(0.7 * x))
    seed_energy = _energy(disc, spec, R, f0, s0)
    f0, s0 = _flow(disc, spec, R, f0, s0, flow_iters)
    f, s, res = _newton(disc, spec, R, f0, s0, max_iter=max_newton)
    cond = _finalize(disc, grid, spec, R, f, s, res)

    # bare branch from the cache; its energy does not depend on R
    fb, sb, mu_bare, res_b = _bare_kink(spec.lambda_phi, grid.L, grid.n_points)
    if cond.mu <= mu_bare - 1e-12 and cond.condensed:
        sol = cond
    else:
        sol = _finalize(disc, grid, spec, R, fb.copy(), sb.copy(), res_b)
    if sol.mu > seed_energy + 1e-10:
        raise ProfileSolveError(
            f"energy increased above the seed value ({sol.mu:.12g} > "
            f"{seed_energy:.12g})", last_f=sol.f, last_s=sol.s, residual=res)
    return sol


def sweep_profiles(spec: PotentialSpec, R_values: Sequence[float],
                   grid: Optional[ProfileGrid] = None) -> list:
    """Solve a radius sweep with warm starts along the sweep direction."""
    sols = []
    prev = None
    for R in R_values:
        if prev is not None and prev.condensed:
            sol = solve_profile(spec, R, grid=grid, seed=(prev.f, prev.s))
            # a warm start cannot see the bare branch; accept it only if it
            # still beats the bare energy, otherwise fall back to cold solve
            if not sol.condensed or sol.mu > mu_of_R_bare(spec, sol.grid):
                sol = solve_profile(spec, R, grid=grid)
        else:
            sol = solve_profile(spec, R, grid=grid)
        sols.append(sol)
        prev = sol
    return sols


def mu_of_R_bare(spec: PotentialSpec, grid: Optional[ProfileGrid] = None) -> float:
    """Energy of the bare (s == 0) branch; independent of R."""
    if grid is None:
        grid = default_grid(spec)
    return _bare_kink(spec.lambda_phi, grid.L, grid.n_points)[2]


def mu_of_R(spec: PotentialSpec, R: float,
            grid: Optional[ProfileGrid] = None) -> float:
    return solve_profile(spec, R, grid=grid).mu


def mu_prime_of_R(spec: PotentialSpec, R: float,
                  grid: Optional[ProfileGrid] = None) -> float:
    """Envelope value mu'(R) = -(d^2/R^3) ||s0||^2 on the minimizer."""
    return solve_profile(spec, R, grid=grid).mu_prime


def quench_energy_test(spec: PotentialSpec, R: float) -> float:
    """Condensation certificate at radius R.

    Energy difference E[(tanh_B, sech_B)] - E[(tanh_B, 0)] for the
    matched-width trial pair at B = sqrt(lambda_sigma/2); the f terms cancel
    exactly in the difference, leaving

        (1/B) ( beta/3 + d^2/R^2 - lambda_sigma/2 ).

    Negative values certify that the s channel pays at this radius; the sign
    flips at d^2/R^2 = lambda_sigma/2 - beta/3 independently of B.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    B = np.sqrt(spec.lambda_sigma / 2.0)
    return float((spec.beta / 3.0 + spec.d**2 / R**2 - spec.lambda_sigma / 2.0) / B)


@dataclass(frozen=True)
class QuenchRadiusResult:
    """Bisection outcome for the branch-switch radius."""

    R_star: float
    iterations: int
    history: tuple  # (R, ||s||_inf) pairs in probe order
    monotone: bool  # ||s||_inf nondecreasing in R across all probes

    @property
    def diagnostics(self) -> str:
        if self.monotone:
            return "s-amplitude monotone across probes"
        return "warning: s-amplitude not monotone across probes; multiple transitions possible"


def find_quench_radius(spec: PotentialSpec, R_lo: float, R_hi: float,
                       tol: float = 1e-3,
                       grid: Optional[ProfileGrid] = None) -> QuenchRadiusResult:
    """Bisect for the radius where the minimizer switches branch.

    The indicator is ||s||_inf > 1e-4 on the solved minimizer. Requires the
    branch to differ at the bracket ends; otherwise raises ValueError
    ("no sign change"). Non-monotone s-amplitude across the probed radii is
    reported as a diagnostic, not an error.
    """
    if not (0 < R_lo < R_hi):
        raise ValueError("need 0 < R_lo < R_hi")
    history = []

    def condensed_at(R):
        sol = solve_profile(spec, R, grid=grid)
        amp = float(np.abs(sol.s).max())
        history.append((R, amp))
        return amp > S_BRANCH_THRESHOLD

    lo_cond = condensed_at(R_lo)
    hi_cond = condensed_at(R_hi)
    if lo_cond == hi_cond:
        raise ValueError(
            f"no sign change: branch is {'condensed' if lo_cond else 'bare'} "
            f"at both R={R_lo:g} and R={R_hi:g}")
    iters = 0
    while R_hi - R_lo > tol:
        mid = 0.5 * (R_lo + R_hi)
        if condensed_at(mid) == hi_cond:
            R_hi = mid
        else:
            R_lo = mid
        iters += 1
    by_R = sorted(history)
    amps = [a for _, a in by_R]
    monotone = all(b >= a - 1e-12 for a, b in zip(amps, amps[1:]))
    return QuenchRadiusResult(
        R_star=0.5 * (R_lo + R_hi), iterations=iters,
        history=tuple(history), monotone=monotone)


@dataclass(frozen=True)
class DecayFit:
    """Log-linear tail fit u - vacuum ~ C exp(-alpha x)."""

    alpha: float
    x_lo: float
    x_hi: float
    e_foldings: float
    used_prefix: bool


def fit_decay(x: np.ndarray, values: np.ndarray, vacuum: float,
              floor: float = 1e-12) -> DecayFit:
    """Fit the tail decay rate on the outer quarter of the grid.

    Fits ln|u - vacuum| against x, starting from the window x >= L/2. Values
    at or below `floor` are dropped (they sit at the solver noise floor),
    keeping the prefix of the window above it; if the surviving window spans
    fewer than 5 e-foldings it is widened inward until it does. A second
    pass excludes the last 2.5/alpha before the boundary, where the
    Dirichlet pinning distorts the exponential by its image term.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(values, dtype=float) - vacuum)
    L = x[-1]

    def window_fit(x_cap):
        x_lo = L / 2.0
        while True:
            sel = (x >= x_lo) & (x <= x_cap)
            xs, ys = x[sel], y[sel]
            keep = ys > floor
            used_prefix = bool(keep.any() and not keep.all())
            if used_prefix:
                cut = int(np.argmin(keep))  # first node at the noise floor
                xs, ys = xs[:cut], ys[:cut]
            ok = ys > floor
            xs, ys = xs[ok], ys[ok]
            if xs.size >= 4:
                span = float(np.log(ys.max() / ys.min()))
                if span >= 5.0 or x_lo <= 0.0:
                    return xs, ys, used_prefix
            x_lo -= L / 8.0
            if x_lo < -1e-12:
                raise ValueError("tail does not decay enough to fit a rate")

    xs, ys, used_prefix = window_fit(x_cap=L)
    slope, _ = np.polyfit(xs, np.log(ys), 1)
    alpha = -slope
    if alpha > 0 and xs[-1] > L - 2.5 / alpha:
        xs, ys, used_prefix = window_fit(x_cap=L - 2.5 / alpha)
        slope, _ = np.polyfit(xs, np.log(ys), 1)
        alpha = -slope
    if alpha <= 0:
        raise ValueError("tail does not decay: fitted rate is nonpositive")
    return DecayFit(alpha=float(alpha), x_lo=float(xs[0]), x_hi=float(xs[-1]),
                    e_foldings=float(np.log(ys.max() / ys.min())),
                    used_prefix=used_prefix)


def write_profile_csv(sol: ProfileSolution, directory) -> Path:
    """Write x, f, s columns with the solution scalars in header comments.

    File name is profile_R<value>.csv inside `directory`.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"profile_R{sol.R:g}.csv"
    lines = [
        f"# R = {fmt(sol.R)}",
        f"# mu = {fmt(sol.mu)}",
        f"# mu_prime = {fmt(sol.mu_prime)}",
        f"# norm_F0prime_sq = {fmt(sol.norm_F0prime_sq)}",
        f"# norm_s0_sq = {fmt(sol.norm_s0_sq)}",
        f"# decay_alpha = {fmt(sol.decay_alpha)}",
        "x,f,s",
    ]
    xs = sol.grid.x
    for j in range(xs.size):
        lines.append(f"{fmt(xs[j])},{fmt(sol.f[j])},{fmt(sol.s[j])}")
    path.write_text("\n".join(lines) + "\n")
    return path
