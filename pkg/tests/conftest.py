"""Session fixtures for the modulation study: one profile table, one
reference trajectory, and one full convergence report shared by the
validation and acceptance tests."""

import numpy as np
import pytest

from siwave.coords import NormalFrame
from siwave.effective import build_profile_table, integrate_R
from siwave.potential import PotentialSpec
from siwave.profiles import ProfileGrid
from siwave.validation import convergence_study

STUDY_R0 = 3.0
STUDY_T_BAR = 1.0
STUDY_Y_STAR = 0.88
STUDY_EPS = (0.1, 0.05, 0.025)


@pytest.fixture(scope="session")
def study_spec():
    return PotentialSpec(2.0, 1.0, 1.4, 0.5, epsilon=0.1)


@pytest.fixture(scope="session")
def study_table(study_spec):
    return build_profile_table(study_spec, 2.55, 3.15, n_knots=13,
                               grid=ProfileGrid(28.0, 5741),
                               store_profiles=True)


@pytest.fixture(scope="session")
def study_frame(study_spec, study_table):
    traj = integrate_R(study_spec, study_table, STUDY_R0, T_max=2.0)
    return traj, NormalFrame(traj)


@pytest.fixture(scope="session")
def study_report(study_spec, study_table):
    return convergence_study(study_spec, STUDY_EPS, STUDY_T_BAR,
                             table=study_table, R0=STUDY_R0,
                             y_star=STUDY_Y_STAR, threads=3)
