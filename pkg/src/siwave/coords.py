"""Normal coordinates about a moving interface worldline.

The interface traces the curve Gamma = {(y0, R(y0))} in the (t, r)
half-plane with the flat wave metric diag(-1, 1). Points near Gamma are
labelled by the curve parameter y0 and the signed Minkowski distance y1
along the normal ray

    nu(y0) = m (R', 1),      m = (1 - R'^2)^{-1/2},

so (t, r) = (y0 + y1 m R', R(y0) + y1 m). The chart is valid while the
ray bundle stays disjoint, i.e. while n = 1 + y1 m^3 R'' > 0; the frame
shrinks its half-width until that holds on the whole trajectory and keeps
clear of the symmetry axis r = 0.

R'' is always the dynamics right-hand side carried by the trajectory, not
a second difference of the interpolant, so the transport coefficients
B0, B1 inherit the smoothness of the radius equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .effective import InterfaceTrajectory, mean_curvature
from .ioutil import write_csv

__all__ = [
    "ChartError",
    "NormalFrame",
    "dump_chart_csv",
]

_REST_TOL = 1e-12


class ChartError(ValueError):
    """Point cannot be represented in the normal chart."""


@dataclass
class NormalFrame:
    """Normal-coordinate chart of half-width y1_max about a trajectory.

    When the trajectory starts from rest it extends evenly to negative
    times (R even, R' odd), doubling the chart; otherwise y0 is confined
    to the integrated range. Passing y1_max only caps the half-width: it
    still shrinks to half the focal distance and away from the axis, and
    y1_cap_source records which constraint bound it.
    """

    traj: InterfaceTrajectory
    y1_max: float | None = None
    y0_max: float | None = None
    mirror: bool | None = None
    y1_cap_source: str = field(init=False, default="requested")

    def __post_init__(self):
        traj = self.traj
        if self.mirror is None:
            self.mirror = (abs(traj.Rp[0]) < _REST_TOL
                           and abs(traj.times[0]) < _REST_TOL)
        if self.y0_max is None:
            self.y0_max = traj.T
        if not 0.0 < self.y0_max <= traj.T + 1e-12:
            raise ValueError("y0_max must lie inside the trajectory range")

        # strip half-width: half the focal distance (n = 0) and a margin
        # from the axis r = 0, whichever is tighter
        s = np.linspace(0.0 if self.mirror else traj.times[0],
                        self.y0_max, 512)
        m = 1.0 / np.sqrt(1.0 - self.Rp(s) ** 2)
        curv = np.abs(m**3 * self.Rpp(s))
        focal = 0.5 / curv.max() if curv.max() > 0 else np.inf
        axis = 0.95 * (self.R(s) / m).min()
        cap = np.inf if self.y1_max is None else float(self.y1_max)
        width, source = min(
            (cap, "requested"), (focal, "focal"), (axis, "axis"))
        if not np.isfinite(width) or width <= 0:
            raise ValueError("cannot build a chart of positive width")
        self.y1_max = float(width)
        self.y1_cap_source = source

    @property
    def y0_min(self) -> float:
        return -self.y0_max if self.mirror else float(self.traj.times[0])

    # trajectory evaluation with the even extension to y0 < 0

    def _split(self, y0):
        y0 = np.asarray(y0, dtype=float)
        if self.mirror:
            return np.abs(y0), np.sign(y0) + (y0 == 0.0)
        return y0, np.ones_like(y0)

    def R(self, y0):
        a, _ = self._split(y0)
        return self.traj.eval_R(a)

    def Rp(self, y0):
        a, sgn = self._split(y0)
        return sgn * self.traj.eval_Rp(a)

    def Rpp(self, y0):
        a, _ = self._split(y0)
        return self.traj.eval_Rpp(a)

    def Rppp(self, y0):
        a, sgn = self._split(y0)
        return sgn * self.traj.eval_Rppp(a)

    def _check_strip(self, y0, y1) -> None:
        y0 = np.asarray(y0, dtype=float)
        y1 = np.asarray(y1, dtype=float)
        if np.any(y0 < self.y0_min - 1e-12) or np.any(y0 > self.y0_max + 1e-12):
            raise ChartError("outside coordinate chart: y0 beyond trajectory")
        if np.any(np.abs(y1) > self.y1_max + 1e-12):
            raise ChartError("outside coordinate chart: |y1| beyond strip")

    def in_strip(self, y0, y1) -> bool:
        try:
            self._check_strip(y0, y1)
        except ChartError:
            return False
        return True

    def forward(self, y0, y1):
        """Map chart coordinates to (t, r)."""
        self._check_strip(y0, y1)
        Rp = self.Rp(y0)
        m = 1.0 / np.sqrt(1.0 - Rp**2)
        return y0 + y1 * m * Rp, self.R(y0) + y1 * m

    def metric_factors(self, y0, y1):
        """(m, n) with m = (1-R'^2)^{-1/2}, n = 1 + y1 m^3 R''."""
        self._check_strip(y0, y1)
        Rp = self.Rp(y0)
        m = 1.0 / np.sqrt(1.0 - Rp**2)
        n = 1.0 + np.asarray(y1) * m**3 * self.Rpp(y0)
        if np.any(n <= 0.0):
            raise ChartError("focal point: n <= 0 inside requested strip")
        return m, n

    def B_coeffs(self, y0, y1):
        """Transport coefficients of the pulled-back wave operator.

        B0 = (m/n) d_{y0}(m/n) + m^2 R' / (n r),
        B1 = -m^3 R'' / n - m / r,          r = R + y1 m.

        On the curve (y1 = 0) B1 reduces to minus the mean curvature of
        the moving interface.
        """
        m, n = self.metric_factors(y0, y1)
        Rp, Rpp, Rppp = self.Rp(y0), self.Rpp(y0), self.Rppp(y0)
        r = self.R(y0) + np.asarray(y1) * m
        if np.any(r <= 0.0):
            raise ValueError("axis crossed: r <= 0")
        y1 = np.asarray(y1, dtype=float)
        d_mn = (m**3 * Rp * Rpp * (n - 3.0 * y1 * m**3 * Rpp)
                - y1 * m**4 * Rppp) / n**2
        B0 = (m / n) * d_mn + m**2 * Rp / (n * r)
        B1 = -(m**3) * Rpp / n - m / r
        return B0, B1

    def inverse(self, t: float, r: float):
        """Project (t, r) to (s_M, d_M).

        s_M solves the Minkowski orthogonality equation
        -(t - s) + (r - R(s)) R'(s) = 0 by bracketed root-finding; d_M is
        the signed distance (r - R(s_M)) / m(s_M). One root inside the
        strip wins; no root raises "outside coordinate chart", several
        candidate projections raise "chart overlap".
        """
        lo, hi = self.y0_min, self.y0_max

        def g(s):
            return -(t - s) + (r - self.R(s)) * self.Rp(s)

        s_grid = np.linspace(lo, hi, max(257, 2 * self.traj.times.size))
        vals = g(s_grid)
        roots = [float(s) for s in s_grid[vals == 0.0]]
        sign_flip = np.nonzero(vals[:-1] * vals[1:] < 0.0)[0]
        for k in sign_flip:
            roots.append(brentq(g, s_grid[k], s_grid[k + 1],
                                xtol=1e-13, rtol=8.9e-16))
        roots = sorted(roots)
        merged = [s for i, s in enumerate(roots)
                  if i == 0 or s - roots[i - 1] > 1e-9]
        if not merged:
            raise ChartError("outside coordinate chart: no normal ray hits")

        def distance(s):
            return (r - self.R(s)) * np.sqrt(1.0 - self.Rp(s) ** 2)

        inside = [s for s in merged
                  if abs(distance(s)) <= self.y1_max + 1e-12]
        if len(inside) == 1:
            s_M = inside[0]
            return s_M, float(distance(s_M))
        if len(merged) > 1:
            raise ChartError("chart overlap: multiple normal projections")
        raise ChartError("outside coordinate chart: |y1| beyond strip")


def dump_chart_csv(frame: NormalFrame, path, n_y0: int = 41,
                   n_y1: int = 21) -> Path:
    """Tabulate the chart on a (y0, y1) grid for inspection."""
    y0 = np.linspace(frame.y0_min, frame.y0_max, n_y0)
    y1 = np.linspace(-frame.y1_max, frame.y1_max, n_y1)
    Y0, Y1 = np.meshgrid(y0, y1, indexing="ij")
    Y0, Y1 = Y0.ravel(), Y1.ravel()
    t, r = frame.forward(Y0, Y1)
    m, n = frame.metric_factors(Y0, Y1)
    B0, B1 = frame.B_coeffs(Y0, Y1)
    return write_csv(
        path,
        {"y0": Y0, "y1": Y1, "t": t, "r": r, "m": m,
         "n": n, "B0": B0, "B1": B1},
        header_comments={
            "y1_max": frame.y1_max,
            "y0_max": frame.y0_max,
            "mirror": frame.mirror,
            "y1_cap_source": frame.y1_cap_source,
        },
    )
