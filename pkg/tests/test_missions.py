"""
Full missions on the shipped scenarios
"""

from pathlib import Path

import pytest

from fg_transport.metrics_bench import compute_metrics, min_obstacle_clearance, run_all, run_scenario
from fg_transport.scenario import ScenarioConfig, Solver, experiment1, gazebo_surrogate, hardware_trial
from fg_transport.sim_world import EventKind, Fail, NoiseOn, ScriptedEvent

SCENARIOS = Path(__file__).resolve().parent.parent / 'scenarios'

pytestmark = pytest.mark.slow


def load(name: str) -> ScenarioConfig:
    return ScenarioConfig.load(SCENARIOS / f'{name}.json')


def test_corridor_with_obstacles():
    config = experiment1()
    log, m = run_scenario(config)
    assert m.dist_to_goal <= 0.06
    assert m.path_length <= 10.0
    assert min_obstacle_clearance(log, config.obstacles) >= 0.8 * config.radius
    assert (log.events[-1][1]) is EventKind.GOAL_REACHED


def test_corridor_penalty_mpc():
    _, m = run_scenario(experiment1(), Solver.MPC_P)
    assert m.dist_to_goal <= 0.062


def test_reference_is_fixed_point():
    config = load('obstacle_free')
    log, m = run_scenario(config)
    reference = config.problem().reference
    for centroid, index in zip(log.executed_centroid, log.reference_index):
        assert centroid.distance_to(reference.poses[index]) <= 1e-6
    assert m.avg_deviation <= 1e-6
    assert m.max_inter_robot_error <= 1e-3


def test_disturbance_recovery():
    config = load('disturbance')
    log, m = run_scenario(config)
    assert m.dist_to_goal <= 0.05
    assert m.avg_deviation <= 0.05
    assert (40, EventKind.DISTURB) in log.events


def test_robot_failure_compensated():
    config = load('robot_failure')
    log, m = run_scenario(config)
    assert m.dist_to_goal <= 0.06
    assert (30, EventKind.FAIL) in log.events
    assert all(1 not in active for active in log.active[30:])


def test_diagonal_without_obstacles():
    _, m = run_scenario(gazebo_surrogate())
    assert m.avg_deviation <= 0.02
    assert 5.80 <= m.path_length <= 5.90
    assert m.max_inter_robot_error <= 1e-3
    assert m.dist_to_goal <= 0.05


def test_centroid_trajectory_independent_of_robot_count():
    base, _ = run_scenario(experiment1())
    for count in (8, 32, 128):
        log, _ = run_scenario(experiment1(robots=count))
        assert len(log) == len(base)
        for a, b in zip(base.executed_centroid, log.executed_centroid):
            assert a.distance_to(b) <= 1e-6


def test_missions_are_deterministic():
    config = experiment1(events=(ScriptedEvent(20, NoiseOn()),), seed=11)
    first, m1 = run_scenario(config)
    second, m2 = run_scenario(config)
    assert first.executed_centroid == second.executed_centroid
    assert first.executed_robots == second.executed_robots
    assert (m1.avg_deviation, m1.path_length, m1.dist_to_goal) == (m2.avg_deviation, m2.path_length, m2.dist_to_goal)


def test_failed_mission_does_not_stop_batch():
    doomed = experiment1(name='doomed', robots=2, events=(ScriptedEvent(5, Fail(0)), ScriptedEvent(6, Fail(1))))
    rows = run_all([doomed, experiment1()], [Solver.OURS])
    assert rows[0].metrics is None
    assert rows[1].metrics is not None
    assert rows[1].metrics.dist_to_goal <= 0.06


def test_metrics_are_solver_agnostic():
    config = experiment1()
    log, m = run_scenario(config, Solver.MPC_C)
    problem = config.problem()
    assert compute_metrics(log, problem.reference, problem.formation, config.goal) == m


def test_lab_course_disturbance():
    config = load('hardware_disturbance')
    log, m = run_scenario(config)
    assert m.dist_to_goal <= config.goal_tol
    assert (300, EventKind.DISTURB) in log.events
    assert log.events[-1][1] is EventKind.GOAL_REACHED


def test_lab_course_obstacles():
    config = load('hardware_obstacles')
    log, m = run_scenario(config)
    assert m.dist_to_goal <= config.goal_tol
    assert min_obstacle_clearance(log, config.obstacles) >= 0.8 * config.radius
    assert m.max_inter_robot_error <= 1e-3


def test_lab_course_failure_between_obstacles():
    config = load('hardware_failure')
    log, m = run_scenario(config)
    assert m.dist_to_goal <= config.goal_tol
    assert (120, EventKind.FAIL) in log.events
    assert all(2 not in active for active in log.active[120:])
    assert min_obstacle_clearance(log, config.obstacles) >= 0.8 * config.radius


@pytest.mark.parametrize('case', ['disturbance', 'obstacles', 'failure'])
def test_lab_course_from_exact_start(case):
    _, m = run_scenario(hardware_trial(case))
    assert m.dist_to_goal <= 0.01
