"""Interface dynamics in a two-component radial wave system.

Layers, bottom to top:

- potential: the pair potential, its radius-shifted variant, derivatives.
- profiles: one-dimensional interface profiles by constrained minimization,
  the reduced energy mu(R), and the quench diagnostics.
- linop: the linearization around a profile, its spectrum, and the first
  order corrector F1.
- effective: the interface radius ODE, profile tables, curvature, and the
  quench comparison envelopes.
- coords: normal tubular coordinates around a moving interface.
- wavesim: the radial two-component wave solver.
- validation: modulation extraction and the epsilon-convergence study.
- cli: experiment runner producing deterministic artifact trees.
"""

from .potential import (
    PotentialSpec,
    FieldPoint,
    CustomPotential,
    AssumptionsReport,
    eval_V,
    eval_W,
    grad_W,
    hess_W,
    partial_R_w,
    check_assumptions,
)

__version__ = "0.1.0"
