import dataclasses
import json
import math
from pathlib import Path

import pytest

from fg_transport import scenario
from fg_transport.baseline_mpc import MpcParams
from fg_transport.planner import Obstacle
from fg_transport.scenario import (
    EXPERIMENT1_OBSTACLES,
    SEVEN_OBSTACLES,
    NoiseConfig,
    ScenarioConfig,
    Solver,
    experiment1,
    HARDWARE_OBSTACLES,
    gazebo_surrogate,
    hardware_trial,
    obstacles_from_points,
)
from fg_transport.sim_world import Disturb, Fail, NoiseOn, ScriptedEvent

SCENARIOS = Path(__file__).resolve().parent.parent / 'scenarios'


@pytest.mark.parametrize('path', sorted(SCENARIOS.glob('*.json')), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    config = ScenarioConfig.load(path)
    assert config.name == path.stem
    p = config.problem()
    assert p.n == config.n
    assert len(config.world().robot_poses) == config.robots


def test_experiment1_file_matches_preset():
    assert ScenarioConfig.load(SCENARIOS / 'experiment1.json').config_hash() == experiment1().config_hash()


def test_gazebo_file_matches_preset():
    loaded = ScenarioConfig.load(SCENARIOS / 'gazebo_surrogate.json')
    preset = gazebo_surrogate()
    assert loaded.start[2] == pytest.approx(math.atan2(3.0, 5.0))
    assert (loaded.goal, loaded.n) == (preset.goal, preset.n)


def test_robot_failure_event_by_time():
    config = ScenarioConfig.load(SCENARIOS / 'robot_failure.json')
    assert config.events == (ScriptedEvent(30, Fail(1)),)


@pytest.mark.parametrize('case', ['disturbance', 'obstacles', 'failure'])
def test_hardware_files_match_presets(case):
    loaded = ScenarioConfig.load(SCENARIOS / f'hardware_{case}.json')
    preset = hardware_trial(case)
    assert loaded.name == preset.name
    assert math.hypot(loaded.start[0], loaded.start[1]) <= 0.1
    assert loaded.with_overrides(start=preset.start).config_hash() == preset.config_hash()


def test_hardware_presets():
    pushed = hardware_trial('disturbance')
    assert pushed.goal == (3.0, 0.0)
    assert pushed.goal_tol == 0.01
    assert pushed.n * pushed.ts == pytest.approx(40.0)
    assert pushed.events == (ScriptedEvent(300, Disturb(dy=0.4)),)
    assert pushed.obstacles == ()
    assert [o.center for o in hardware_trial('obstacles').obstacles] == list(HARDWARE_OBSTACLES)
    failure = hardware_trial('failure')
    assert failure.events == (ScriptedEvent(120, Fail(2)),)
    assert len(failure.obstacles) == 2
    assert hardware_trial('obstacles', seed=3).seed == 3


def test_unknown_hardware_case():
    with pytest.raises(scenario.Error) as ex:
        hardware_trial('collision')
    assert ex.value.code is scenario.Error.Code.INVALID_CONFIG


def test_reverse_driving_is_opt_in(tmp_path):
    assert ScenarioConfig().problem().reverse_driving is False
    config = experiment1(reverse_driving=True)
    assert config.problem().reverse_driving is True
    assert config.config_hash() != experiment1().config_hash()
    path = tmp_path / 'reverse.json'
    config.save(path)
    assert ScenarioConfig.load(path).reverse_driving is True


def test_presets():
    config = experiment1()
    assert [o.center for o in config.obstacles] == list(EXPERIMENT1_OBSTACLES)
    assert [o.id for o in config.obstacles] == [1, 2, 3, 4, 5]
    assert config.solver is Solver.OURS
    assert experiment1(n=120).n == 120
    assert SEVEN_OBSTACLES[:5] == EXPERIMENT1_OBSTACLES
    assert len(SEVEN_OBSTACLES) == 7


def test_problem_carries_settings():
    config = experiment1(radius=0.4, lookahead=2, noise=NoiseConfig(obstacle=0.04))
    p = config.problem()
    assert p.radius == 0.4
    assert p.lookahead == 2
    assert p.noise.obstacle.sigmas_sq == (0.04,)
    assert p.goal == (7.0, 0.0)
    assert p.reference.controls[0].v == pytest.approx(1.0)


def test_explicit_slots():
    config = ScenarioConfig(slots=((0.3, 0.0), (0.3, math.pi)))
    assert len(config.formation()) == 2


def test_round_trip(tmp_path):
    config = experiment1(
        name='custom',
        seed=4,
        solver=Solver.MPC_C,
        events=(ScriptedEvent(3, Disturb(dy=0.2)), ScriptedEvent(9, NoiseOn()), ScriptedEvent(12, Fail(2))),
        mpc_p=MpcParams(horizon=3),
    )
    path = tmp_path / 'custom.json'
    config.save(path)
    assert ScenarioConfig.load(path) == config


def test_hash_ignores_name_and_seed():
    base = experiment1()
    assert base.with_overrides(name='other', seed=9).config_hash() == base.config_hash()


@pytest.mark.parametrize('changes', [
    {'n': 91},
    {'radius': 0.45},
    {'robots': 8},
    {'solver': Solver.MPC_P},
    {'obstacles': obstacles_from_points(EXPERIMENT1_OBSTACLES[:4])},
    {'noise': NoiseConfig(obstacle=0.02)},
    {'events': (ScriptedEvent(40, Disturb(dy=0.4)),)},
])
def test_hash_changes_with_config(changes):
    assert experiment1(**changes).config_hash() != experiment1().config_hash()


@pytest.mark.parametrize('data, code', [
    ({'colour': 'red'}, scenario.Error.Code.UNKNOWN_KEY),
    ({'noise': {'sensor': 1.0}}, scenario.Error.Code.UNKNOWN_KEY),
    ({'lm': {'tolerance': 1.0}}, scenario.Error.Code.UNKNOWN_KEY),
    ({'obstacles': [{'x': 1.0, 'y': 0.0, 'id': 1, 'r': 2.0}]}, scenario.Error.Code.UNKNOWN_KEY),
    ({'events': [{'step': 3, 'explode': {}}]}, scenario.Error.Code.UNKNOWN_KEY),
    ({'events': [{'step': 3}]}, scenario.Error.Code.INVALID_CONFIG),
    ({'events': [{'step': 3, 'time': 0.3, 'fail': {'robot': 0}}]}, scenario.Error.Code.INVALID_CONFIG),
    ({'events': [{'step': 0, 'fail': {'robot': 0}}]}, scenario.Error.Code.INVALID_CONFIG),
    ({'solver': 'gtsam'}, scenario.Error.Code.INVALID_CONFIG),
    ({'n': 0}, scenario.Error.Code.INVALID_CONFIG),
    ({'lm': {'rel_tol': -1.0}}, scenario.Error.Code.INVALID_CONFIG),
    ({'mpc_c': {'horizon': 0}}, scenario.Error.Code.INVALID_CONFIG),
    ({'noise': {'control': [0.1, 0.0]}}, scenario.Error.Code.INVALID_CONFIG),
    ({'seed': -1}, scenario.Error.Code.INVALID_CONFIG),
])
def test_invalid_documents(data, code):
    with pytest.raises(scenario.Error) as ex:
        ScenarioConfig.from_dict(data)
    assert ex.value.code is code


def test_duplicate_obstacle_ids():
    with pytest.raises(scenario.Error):
        ScenarioConfig(obstacles=(Obstacle((1.0, 0.0), 1), Obstacle((2.0, 0.0), 1)))


def test_mpc_sections_start_from_best_parameters():
    config = ScenarioConfig.from_dict({'mpc_c': {'horizon': 3}})
    assert config.mpc_c == dataclasses.replace(MpcParams.constrained(), horizon=3)
    assert config.mpc_p == MpcParams.penalty()


def test_load_errors(tmp_path):
    with pytest.raises(scenario.Error) as ex:
        ScenarioConfig.load(tmp_path / 'missing.json')
    assert ex.value.code is scenario.Error.Code.IO
    broken = tmp_path / 'broken.json'
    broken.write_text('{"n": ', encoding='utf-8')
    with pytest.raises(scenario.Error) as ex:
        ScenarioConfig.load(broken)
    assert ex.value.code is scenario.Error.Code.IO
    listing = tmp_path / 'list.json'
    listing.write_text(json.dumps([1, 2]), encoding='utf-8')
    with pytest.raises(scenario.Error) as ex:
        ScenarioConfig.load(listing)
    assert ex.value.code is scenario.Error.Code.INVALID_CONFIG
