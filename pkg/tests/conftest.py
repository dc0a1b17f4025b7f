"""
Shared fixtures
"""

import numpy as np
import pytest

from fg_transport.core_types import Pose2
from fg_transport.graph_solver import LMParams
from fg_transport.kinematics import Formation
from fg_transport.planner import PlanProblem, make_initial_path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def formation4() -> Formation:
    return Formation.symmetric(4)


@pytest.fixture
def corridor(formation4: Formation) -> PlanProblem:
    """Obstacle-free corridor from (-2, 0) to (7, 0), 90 steps of 0.1 s"""
    reference = make_initial_path(Pose2(-2.0, 0.0, 0.0), (7.0, 0.0), 90, 0.1)
    return PlanProblem(reference, formation4)


@pytest.fixture
def short_path(formation4: Formation) -> PlanProblem:
    """Obstacle-free 1 m path in 10 steps"""
    reference = make_initial_path(Pose2(0.0, 0.0, 0.0), (1.0, 0.0), 10, 0.1)
    return PlanProblem(reference, formation4)


@pytest.fixture
def tight_lm() -> LMParams:
    """LM run to convergence, for comparisons with exact oracles"""
    return LMParams(rel_tol=1e-12, abs_tol=1e-14, err_tol=1e-14, max_iters=200)
