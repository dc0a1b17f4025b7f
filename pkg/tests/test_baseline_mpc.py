import dataclasses
import math

import numpy as np
import pytest

from fg_transport.baseline_mpc import (
    MpcParams,
    mpc_c_objective,
    mpc_c_step,
    mpc_p_graph,
    mpc_p_objective,
    mpc_p_step,
    numeric_gradient,
    solve_mpc_c,
    solve_mpc_p,
)
from fg_transport.core_types import Pose2
from fg_transport.factors import FactorKind
from fg_transport.graph_solver import ConvergedBy, total_error
from fg_transport.kinematics import Phase
from fg_transport.planner import Obstacle

TIGHT = dict(rel_tol=1e-15, abs_tol=1e-12, err_tol=1e-15, max_inner_iters=1000)


def test_numeric_gradient():
    grad = numeric_gradient(lambda x: x[0] ** 2 + 3.0 * x[1], [1.0, 2.0])
    assert np.allclose(grad, [2.0, 3.0], atol=1e-8)
    grad = numeric_gradient(lambda x: (float(np.sum(x ** 2)), None), np.array([0.5, -1.0, 2.0]))
    assert np.allclose(grad, [1.0, -2.0, 4.0], atol=1e-8)
    with pytest.raises(ValueError):
        numeric_gradient(lambda x: 0.0, [0.0], 0.0)


def test_params():
    assert MpcParams.penalty() == MpcParams()
    constrained = MpcParams.constrained()
    assert (constrained.w_terminal, constrained.w_control, constrained.w_motion, constrained.w_obstacle) == (1e3, 1e-3, 0.0, 0.0)
    assert constrained.constraint_tol == 1e-4
    with pytest.raises(ValueError):
        MpcParams(horizon=0)
    with pytest.raises(ValueError):
        MpcParams(w_state=-1.0)


def test_penalty_graph(short_path):
    p = dataclasses.replace(short_path, obstacles=(Obstacle((0.5, 0.6), 1),))
    graph, init = mpc_p_graph(p, 0, p.reference.poses[0])
    assert graph.count_by_kind() == {
        FactorKind.ANCHOR: 1,
        FactorKind.POSE_PRIOR: 2,
        FactorKind.CONTROL_PRIOR: 2,
        FactorKind.MOTION: 2,
        FactorKind.OBSTACLE: 2,
    }
    assert len(init) == 5


def test_penalty_graph_drops_zero_weights(short_path):
    graph, _ = mpc_p_graph(short_path, 0, short_path.reference.poses[0], MpcParams.constrained())
    assert FactorKind.MOTION not in graph.count_by_kind()
    with pytest.raises(ValueError):
        mpc_p_objective(short_path, 0, short_path.reference.poses[0], MpcParams(w_control=0.0, w_motion=0.0))


def test_window_clipped_at_end(short_path):
    decision, _ = solve_mpc_p(short_path, short_path.n - 1, short_path.reference.poses[-2])
    assert len(decision.controls) == 1
    assert len(decision.states) == 1


def test_mpc_p_objective_is_graph_error(short_path, rng):
    current = Pose2(0.02, 0.05, 0.1)
    objective, z0 = mpc_p_objective(short_path, 2, current)
    graph, init = mpc_p_graph(short_path, 2, current)
    value, grad = objective(z0)
    assert value == pytest.approx(total_error(graph, init), rel=1e-12)
    z = z0 + rng.normal(0.0, 0.05, z0.shape)
    value, grad = objective(z)
    assert np.allclose(numeric_gradient(objective, z), grad, rtol=1e-5, atol=1e-5)


def test_mpc_p_on_reference(corridor):
    result = mpc_p_step(corridor, 0, corridor.reference.poses[0])
    assert result.phase == Phase.translate()
    assert result.control.v == pytest.approx(corridor.reference.controls[0].v)
    assert result.stats.converged_by is ConvergedBy.ERR
    assert result.stats.iterations == 0


def test_mpc_p_one_step_least_squares(short_path):
    params = MpcParams(horizon=1, w_state=1.0, w_terminal=2.0, w_control=0.5, w_motion=0.1, **TIGHT)
    current = Pose2(0.0, 0.1, 0.1)
    decision, _ = solve_mpc_p(short_path, 0, current, params)

    ts = short_path.ts
    c, s = math.cos(current.theta), math.sin(current.theta)
    b = np.array([[ts * c, 0.0], [ts * s, 0.0], [0.0, ts]])
    ref_x = short_path.reference.poses[1].vector()
    ref_u = short_path.reference.controls[0].vector()
    # unknowns (x1, u0)
    a = np.zeros((8, 5))
    rhs = np.zeros(8)
    a[0:3, 0:3] = math.sqrt(2.0) * np.eye(3)
    rhs[0:3] = math.sqrt(2.0) * ref_x
    a[3:5, 3:5] = math.sqrt(0.5) * np.eye(2)
    rhs[3:5] = math.sqrt(0.5) * ref_u
    a[5:8, 0:3] = -math.sqrt(0.1) * np.eye(3)
    a[5:8, 3:5] = math.sqrt(0.1) * b
    rhs[5:8] = -math.sqrt(0.1) * current.vector()
    expected, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    assert np.allclose(decision.states[0].vector(), expected[0:3], atol=1e-6)
    assert np.allclose(decision.controls[0].vector(), expected[3:5], atol=1e-6)


def test_mpc_c_objective_gradient(short_path, rng):
    p = dataclasses.replace(short_path, obstacles=(Obstacle((0.25, 0.2), 1), Obstacle((0.1, -0.3), 2)))
    lam = np.array([0.5, 0.0, 1.0, 0.2])
    objective, z0 = mpc_c_objective(p, 0, Pose2(0.0, 0.0, 0.1), lam=lam, rho=10.0)
    z = z0 + rng.normal(0.0, 0.1, z0.shape)
    _, grad = objective(z)
    assert np.allclose(numeric_gradient(objective, z), grad, rtol=1e-5, atol=1e-5)


def test_mpc_c_objective_without_obstacles(short_path):
    objective, z0 = mpc_c_objective(short_path, 0, short_path.reference.poses[0])
    value, grad = objective(z0)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(grad, 0.0)


def test_mpc_c_inactive_constraints_change_nothing(short_path):
    current = Pose2(0.0, 0.1, 0.05)
    far = dataclasses.replace(short_path, obstacles=(Obstacle((0.0, 5.0), 1),))
    free, _ = solve_mpc_c(short_path, 0, current)
    constrained, _ = solve_mpc_c(far, 0, current)
    for a, b in zip(free.controls, constrained.controls):
        assert np.allclose(a.vector(), b.vector(), atol=1e-9)
    assert constrained.max_violation == 0.0


def test_mpc_c_enforces_clearance(corridor):
    center = (-1.35, 0.1)
    p = dataclasses.replace(corridor, obstacles=(Obstacle(center, 1),))
    decision, stats = solve_mpc_c(p, 0, p.reference.poses[0])
    assert decision.max_violation <= 1e-4
    assert min(x.distance_to(center) for x in decision.states) >= p.radius - 1e-3
    assert stats.iterations > 0


def test_mpc_c_on_reference(corridor):
    result = mpc_c_step(corridor, 0, corridor.reference.poses[0])
    assert result.phase == Phase.translate()
    assert result.control.v == pytest.approx(corridor.reference.controls[0].v)
    assert result.event is None
