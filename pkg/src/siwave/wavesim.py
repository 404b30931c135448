"""Explicit solver for the stiff two-component wave system on a radial slab.

The evolution is

    Phi_tt = Phi_rr + Phi_r / r - (1/eps^2) [grad V(Phi) + diag(0, d^2/r^2) Phi]

for Phi = (phi, sigma), discretized with the conservative flux form of the
radial Laplacian

    (L u)_j = [ r_{j+1/2} (u_{j+1} - u_j) - r_{j-1/2} (u_j - u_{j-1}) ]
              / (r_j dr^2),

which expands to the central second difference plus the centered first
difference over r and sums by parts against the midpoint gradient energy.
Time stepping is velocity Verlet at dt = cfl * min(dr, eps/sqrt(Lambda)),
Lambda the largest vacuum Hessian eigenvalue of W on the grid: the stiff
reaction term, not transport alone, limits the step.

Both ends are Dirichlet vacuum pins. The inner boundary sits at
r_min = max(1e-3, R(0)/100), far from the band; by finite propagation
speed the pins are invisible until the influence cone of the band reaches
them, and run() caps its default duration accordingly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .effective import InterfaceTrajectory, ProfileTable
from .ioutil import write_csv
from .potential import FieldPoint, PotentialSpec, eval_W, grad_W

__all__ = [
    "BlowUpError",
    "RadialGrid",
    "FieldState",
    "WaveRun",
    "default_grid",
    "discrete_energy",
    "build_initial_data",
    "step",
    "run",
    "energy_drift",
    "write_run",
]

VACUUM_TOL = 1e-6  # a node counts as disturbed beyond this


class BlowUpError(RuntimeError):
    """Raised when the fields stop being finite; carries the last state."""

    def __init__(self, message: str, last_state: "FieldState"):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial slab [r_min, r_max] resolving an eps-wide layer."""

    r_min: float
    r_max: float
    n_r: int
    epsilon: float

    def __post_init__(self):
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")
        if self.r_max <= self.r_min:
            raise ValueError("r_max must exceed r_min")
        if self.n_r < 16:
            raise ValueError("n_r must be at least 16")
        if self.dr > self.epsilon / 10 * (1 + 1e-12):
            raise ValueError("dr must resolve the interface layer: "
                             "dr <= epsilon/10")

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / (self.n_r - 1)

    @property
    def r(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r)


def default_grid(spec: PotentialSpec, R0: float,
                 r_max: Optional[float] = None) -> RadialGrid:
    r_min = max(1e-3, R0 / 100.0)
    r_max = 3.0 * R0 if r_max is None else float(r_max)
    n_r = int(np.ceil((r_max - r_min) / (spec.epsilon / 10.0))) + 1
    return RadialGrid(r_min, r_max, n_r, spec.epsilon)


@dataclass(frozen=True)
class FieldState:
    """Instantaneous fields and velocities on the grid."""

    t: float
    phi: np.ndarray
    sigma: np.ndarray
    phi_t: np.ndarray
    sigma_t: np.ndarray
    discrete_energy: float

    def __post_init__(self):
        for arr in (self.phi, self.sigma, self.phi_t, self.sigma_t):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite field state")


def discrete_energy(spec: PotentialSpec, grid: RadialGrid, phi, sigma,
                    phi_t, sigma_t) -> float:
    """Energy conserved by the semi-discrete flux scheme.

    Node terms (kinetic and potential) carry trapezoid r-weights; the
    gradient term lives on cell midpoints with the midpoint radius, the
    exact summation-by-parts partner of the flux Laplacian.
    """
    r = grid.r
    dr = grid.dr
    w = np.full(grid.n_r, dr)
    w[0] = w[-1] = dr / 2.0
    dens = 0.5 * (phi_t**2 + sigma_t**2)
    dens += eval_W(spec, FieldPoint(phi, sigma), r) / spec.epsilon**2
    e_nodes = float(np.sum(w * r * dens))
    r_mid = 0.5 * (r[1:] + r[:-1])
    grad = ((np.diff(phi) / dr) ** 2 + (np.diff(sigma) / dr) ** 2)
    e_mid = float(np.sum(dr * r_mid * 0.5 * grad))
    return e_nodes + e_mid


def _accel(spec: PotentialSpec, r: np.ndarray, dr: float, phi, sigma):
    """Flux Laplacian minus stiff forcing; zero on the pinned ends."""
    gw = grad_W(spec, FieldPoint(phi, sigma), r)
    a_phi = np.zeros_like(phi)
    a_sig = np.zeros_like(sigma)
    r_hi = 0.5 * (r[1:-1] + r[2:])
    r_lo = 0.5 * (r[:-2] + r[1:-1])
    for u, a, g in ((phi, a_phi, gw[..., 0]), (sigma, a_sig, gw[..., 1])):
        flux = (r_hi * (u[2:] - u[1:-1]) - r_lo * (u[1:-1] - u[:-2]))
        a[1:-1] = flux / (r[1:-1] * dr * dr) - g[1:-1] / spec.epsilon**2
    return a_phi, a_sig


def step(spec: PotentialSpec, grid: RadialGrid, state: FieldState,
         dt: float) -> FieldState:
    """One velocity-Verlet update with Dirichlet vacuum ends."""
    r = grid.r
    a_phi, a_sig = _accel(spec, r, grid.dr, state.phi, state.sigma)
    v_phi = state.phi_t + 0.5 * dt * a_phi
    v_sig = state.sigma_t + 0.5 * dt * a_sig
    phi = state.phi + dt * v_phi
    sigma = state.sigma + dt * v_sig
    phi[0], phi[-1] = state.phi[0], state.phi[-1]
    sigma[0], sigma[-1] = state.sigma[0], state.sigma[-1]
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(sigma))):
        raise BlowUpError("blow-up detected", state)
    a_phi, a_sig = _accel(spec, r, grid.dr, phi, sigma)
    v_phi += 0.5 * dt * a_phi
    v_sig += 0.5 * dt * a_sig
    v_phi[0] = v_phi[-1] = 0.0
    v_sig[0] = v_sig[-1] = 0.0
    if not (np.all(np.isfinite(v_phi)) and np.all(np.isfinite(v_sig))):
        raise BlowUpError("blow-up detected", state)
    return FieldState(state.t + dt, phi, sigma, v_phi, v_sig,
                      discrete_energy(spec, grid, phi, sigma, v_phi, v_sig))


def _smoothstep(u):
    # C^2 quintic ramp: 0 below 0, 1 above 1
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def build_initial_data(spec: PotentialSpec, table: ProfileTable,
                       traj: InterfaceTrajectory, frame, grid: RadialGrid,
                       delta: float) -> FieldState:
    """Interface data F0 + eps F1 in the band, exact vacuum outside.

    The ansatz fills (b1, b2) = (R(0)-delta, R(0)+delta) through the
    normal chart, which at t = 0 from rest degenerates to y1 = r - R(0);
    a C^2 seam of width 2 eps blends it into the vacua, so the data
    deviates from the pure ansatz by at most the profile tail
    exp(-alpha delta / eps) at the seams.

    Velocities vanish identically: every t-derivative of the ansatz
    carries a factor R'(0) = 0 (transport and Lorentz terms) or
    d(d_M)/dt|_0 = 0 (profile argument), so the chain rule through
    (s_M, d_M) gives exactly zero at rest.
    """
    R0 = float(traj.R[0])
    if abs(float(traj.Rp[0])) > 1e-12:
        raise ValueError("initial data requires a trajectory starting "
                         "from rest")
    eps = spec.epsilon
    alpha = table.column("decay_alpha", R0)
    if delta < 2.5 * eps or alpha * delta < 2.0 * eps:
        raise ValueError("band too narrow for the decay budget")
    b1, b2 = R0 - delta, R0 + delta
    if b1 <= grid.r_min or b2 >= grid.r_max:
        raise ValueError("band outside the grid interior")
    if frame is not None and frame.y1_max + 1e-12 < delta:
        raise ValueError("chart strip does not cover the band")

    r = grid.r
    vac_phi = np.where(r < R0, -1.0, 1.0)
    z = (r - R0) / eps
    phi_a = table.eval_field("f", z, R0) + eps * table.eval_field("f1", z, R0)
    sig_a = table.eval_field("s", z, R0) + eps * table.eval_field("s1", z, R0)
    chi = (_smoothstep((r - b1) / (2.0 * eps))
           * _smoothstep((b2 - r) / (2.0 * eps)))
    phi = vac_phi + chi * (phi_a - vac_phi)
    sigma = chi * sig_a
    zeros = np.zeros_like(r)
    return FieldState(0.0, phi, sigma, zeros.copy(), zeros.copy(),
                      discrete_energy(spec, grid, phi, sigma, zeros, zeros))


@dataclass
class WaveRun:
    """Snapshots, energy series and provenance of one direct run."""

    spec: PotentialSpec
    grid: RadialGrid
    dt: float
    delta: float
    b1: float
    b2: float
    snapshots: list
    energy_times: np.ndarray
    energies: np.ndarray
    stopped_reason: str
    causal_horizon: float

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def drift(self) -> float:
        return energy_drift(self.energies)


def stable_dt(spec: PotentialSpec, grid: RadialGrid, cfl: float = 0.5) -> float:
    # largest vacuum Hessian eigenvalue of W on the grid: 2 lambda_phi
    # for phi, beta - lambda_sigma + d^2/r^2 (worst at r_min) for sigma
    lam = max(2.0 * spec.lambda_phi,
              spec.beta - spec.lambda_sigma + spec.d**2 / grid.r_min**2)
    return cfl * min(grid.dr, spec.epsilon / np.sqrt(lam))


def _exhausted(spec: PotentialSpec, grid: RadialGrid,
               state: FieldState) -> bool:
    """True once the run can no longer be trusted near a boundary.

    Outer: any disturbance at r_max reflects straight back into the band,
    and is curable by enlarging r_max, so the first touched node stops the
    run. Inner: the seam ripple reaching the axis pin is benign (sigma is
    walled off by the centrifugal term and the pin matches the interior
    vacuum), so only the interface itself closing in on r_min stops it.
    """
    dev = np.minimum(np.abs(state.phi + 1.0), np.abs(state.phi - 1.0))
    dev = np.maximum(dev, np.abs(state.sigma))
    dev = np.maximum(dev, np.abs(state.phi_t))
    dev = np.maximum(dev, np.abs(state.sigma_t))
    hot = np.nonzero(dev > VACUUM_TOL)[0]
    if hot.size and grid.r[hot[-1]] >= grid.r_max - 2 * grid.dr:
        return True
    crossings = np.nonzero(np.diff(np.sign(state.phi)))[0]
    if crossings.size:
        margin = 2.0 * spec.epsilon + 5.0 * grid.dr
        if grid.r[crossings[0]] <= grid.r_min + margin:
            return True
    return False


def run(spec: PotentialSpec, table: ProfileTable, traj: InterfaceTrajectory,
        frame=None, grid: Optional[RadialGrid] = None, delta: float = 0.5,
        T_max: Optional[float] = None, n_snapshots: int = 11,
        cfl: float = 0.5, r_max: Optional[float] = None) -> WaveRun:
    """Evolve interface data, snapshotting at a fixed stride.

    The default duration is the causal horizon min(b1 - r_min,
    r_max - b2) past which the Dirichlet pins are no longer shielded;
    callers may exceed it explicitly (recorded for audit). The run also
    stops early if the disturbed band reaches within two cells of either
    boundary, on blow-up, or where the guiding trajectory ended because
    the interface speed approached 1.
    """
    R0 = float(traj.R[0])
    if grid is None:
        grid = default_grid(spec, R0, r_max=r_max)
    state = build_initial_data(spec, table, traj, frame, grid, delta)
    b1, b2 = R0 - delta, R0 + delta
    horizon = min(b1 - grid.r_min, grid.r_max - b2)
    T_target = horizon if T_max is None else float(T_max)
    if traj.exit_reason == "horizon":
        T_target = min(T_target, traj.T)
    dt = stable_dt(spec, grid, cfl)
    n_steps = max(1, int(np.ceil(T_target / dt)))
    stride = max(1, n_steps // max(1, n_snapshots - 1))

    snapshots = [state]
    e_times = [0.0]
    energies = [state.discrete_energy]
    reason = "time_limit"
    for k in range(1, n_steps + 1):
        state = step(spec, grid, state, dt)
        e_times.append(state.t)
        energies.append(state.discrete_energy)
        if k % stride == 0 or k == n_steps:
            snapshots.append(state)
            if _exhausted(spec, grid, state):
                reason = "domain_exhausted"
                break
    return WaveRun(spec, grid, dt, delta, b1, b2, snapshots,
                   np.array(e_times), np.array(energies), reason, horizon)


def energy_drift(energies, frac: float = 0.1) -> float:
    """Secular drift: relative shift between first- and last-window medians.

    The instantaneous Verlet energy oscillates at O((dt w)^2) about the
    conserved shadow energy; medians over windows spanning many periods
    isolate the secular component.
    """
    e = np.asarray(energies, dtype=float)
    w = max(1, int(frac * e.size))
    first = float(np.median(e[:w]))
    last = float(np.median(e[-w:]))
    return abs(last - first) / abs(first)


def write_run(wave_run: WaveRun, outdir) -> Path:
    """Snapshot CSVs plus a manifest tying the run together."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, snap in enumerate(wave_run.snapshots):
        name = f"snapshot_{k:03d}.csv"
        write_csv(outdir / name,
                  {"r": wave_run.grid.r, "phi": snap.phi,
                   "sigma": snap.sigma, "phi_t": snap.phi_t,
                   "sigma_t": snap.sigma_t},
                  header_comments={"t": snap.t,
                                   "discrete_energy": snap.discrete_energy})
        files.append(name)
    write_csv(outdir / "energy.csv",
              {"t": wave_run.energy_times, "E": wave_run.energies})
    manifest = {
        "spec": {
            "lambda_phi": wave_run.spec.lambda_phi,
            "lambda_sigma": wave_run.spec.lambda_sigma,
            "beta": wave_run.spec.beta,
            "d": wave_run.spec.d,
            "epsilon": wave_run.spec.epsilon,
        },
        "grid": {
            "r_min": wave_run.grid.r_min,
            "r_max": wave_run.grid.r_max,
            "n_r": wave_run.grid.n_r,
            "dr": wave_run.grid.dr,
        },
        "dt": wave_run.dt,
        "delta": wave_run.delta,
        "band": [wave_run.b1, wave_run.b2],
        "causal_horizon": wave_run.causal_horizon,
        "stopped_reason": wave_run.stopped_reason,
        "snapshot_times": [s.t for s in wave_run.snapshots],
        "snapshot_files": files,
        "energy_file": "energy.csv",
        "energy_drift": wave_run.drift,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
