import dataclasses
import math

import numpy as np
import pytest

from fg_transport import kinematics, sim_world
from fg_transport.core_types import Control2, Pose2, wrap_angle
from fg_transport.kinematics import Phase, distribute_controls, required_robot_heading
from fg_transport.sim_world import (
    Disturb,
    EventKind,
    EventScript,
    Fail,
    NoiseOn,
    ScriptedEvent,
    Simulator,
    WorldState,
    observe,
    world_step,
)


def translate_inputs(formation, centroid, v=1.0):
    phase = Phase.translate()
    controls = distribute_controls(Control2(v, 0.0), formation, phase)
    headings = [required_robot_heading(centroid.theta, slot, phase) for slot in formation.slots]
    return controls, headings


def test_action_kinds():
    assert Disturb(dy=0.4).kind is EventKind.DISTURB
    assert Fail(1).kind is EventKind.FAIL
    assert NoiseOn().kind is EventKind.NOISE_ON
    assert NoiseOn().sigma_pos == 1e-3


def test_invalid_script():
    with pytest.raises(sim_world.Error) as ex:
        ScriptedEvent(0, Fail(0))
    assert ex.value.code is sim_world.Error.Code.INVALID_SCRIPT
    with pytest.raises(sim_world.Error):
        EventScript((ScriptedEvent(5, Fail(0)), ScriptedEvent(5, Fail(1))))
    with pytest.raises(sim_world.Error):
        Fail(-1)
    with pytest.raises(sim_world.Error):
        NoiseOn(sigma_pos=-1.0)


def test_event_at_time():
    assert ScriptedEvent.at_time(3.0, 0.1, Fail(1)).step == 30
    assert ScriptedEvent.at_time(0.26, 0.1, Fail(1)).step == 3


def test_fail_of_unknown_robot(formation4):
    script = EventScript((ScriptedEvent(2, Fail(7)),))
    with pytest.raises(sim_world.Error):
        WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0), script=script)


def test_initial_state(formation4):
    s = WorldState.initial(formation4, Pose2(1.0, 2.0, 0.5), seed=3)
    assert len(s.robot_poses) == 4
    assert s.active == [0, 1, 2, 3]
    assert (s.step, s.time, s.rng_seed) == (0, 0.0, 3)
    assert all(p.theta == pytest.approx(0.5) for p in s.robot_poses)


def test_translation_step(formation4):
    centroid = Pose2(0.0, 0.0, 0.0)
    s = WorldState.initial(formation4, centroid)
    controls, headings = translate_inputs(formation4, centroid)
    after = world_step(s, controls, headings, 0.1)
    assert after.step == 1
    assert after.time == pytest.approx(0.1)
    for before, moved in zip(s.robot_poses, after.robot_poses):
        assert moved.x == pytest.approx(before.x + 0.1)
        assert moved.y == pytest.approx(before.y)
    assert after.last_events == ()


def test_world_step_is_pure(formation4):
    centroid = Pose2(0.0, 0.0, 0.0)
    s = WorldState.initial(formation4, centroid)
    controls, headings = translate_inputs(formation4, centroid)
    assert world_step(s, controls, headings, 0.1) == world_step(s, controls, headings, 0.1)
    assert s.step == 0


def test_mismatched_inputs(formation4):
    s = WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        world_step(s, [Control2(0.0, 0.0)], [0.0], 0.1)


def test_zero_control_keeps_heading(formation4):
    s = WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0))
    after = world_step(s, [Control2(0.0, 0.0)] * 4, [1.0] * 4, 0.1)
    assert after.robot_poses == s.robot_poses


def test_robots_pivot_to_required_heading(formation4):
    centroid = Pose2(0.0, 0.0, 0.0)
    s = WorldState.initial(formation4, centroid)
    phase = Phase.rotate(1)
    controls = distribute_controls(Control2(0.0, 1.0), formation4, phase)
    headings = [required_robot_heading(centroid.theta, slot, phase) for slot in formation4.slots]
    after = world_step(s, controls, headings, 0.1)
    for heading, pose in zip(headings, after.robot_poses):
        assert pose.theta == pytest.approx(wrap_angle(heading + 0.1))
    fitted = kinematics.centroid_from_robots(after.robot_poses, formation4)
    assert fitted.distance_to(centroid) <= 1e-3
    assert fitted.theta == pytest.approx(0.1, abs=1e-3)


def test_disturbance_after_motion(formation4):
    centroid = Pose2(0.0, 0.0, 0.0)
    s = WorldState.initial(formation4, centroid, script=EventScript((ScriptedEvent(1, Disturb(dy=0.4)),)))
    controls, headings = translate_inputs(formation4, centroid)
    after = world_step(s, controls, headings, 0.1)
    assert [a.kind for a in after.last_events] == [EventKind.DISTURB]
    fitted = kinematics.centroid_from_robots(after.robot_poses, formation4)
    assert fitted.x == pytest.approx(0.1)
    assert fitted.y == pytest.approx(0.4)


def test_rotational_disturbance(formation4):
    centroid = Pose2(1.0, 1.0, 0.0)
    s = WorldState.initial(formation4, centroid, script=EventScript((ScriptedEvent(1, Disturb(dtheta=0.3)),)))
    after = world_step(s, [Control2(0.0, 0.0)] * 4, [0.0] * 4, 0.1)
    fitted = kinematics.centroid_from_robots(after.robot_poses, formation4)
    assert fitted.distance_to(centroid) <= 1e-12
    assert fitted.theta == pytest.approx(0.3)


def test_failed_robot_freezes(formation4):
    centroid = Pose2(0.0, 0.0, 0.0)
    s = WorldState.initial(formation4, centroid, script=EventScript((ScriptedEvent(1, Fail(2)),)))
    controls, headings = translate_inputs(formation4, centroid)
    after = world_step(s, controls, headings, 0.1)
    assert after.failed == frozenset({2})
    assert after.active == [0, 1, 3]
    frozen = after.robot_poses[2]
    later = world_step(after, controls, headings, 0.1)
    assert later.robot_poses[2] == frozen
    assert later.robot_poses[0].x == pytest.approx(after.robot_poses[0].x + 0.1)
    assert [i for i, _ in observe(later)] == [0, 1, 3]


def test_noise_is_seeded(formation4):
    script = EventScript((ScriptedEvent(1, NoiseOn(0.01, 0.01)),))
    s = WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0), seed=7, script=script)
    assert observe(s) == [(i, p) for i, p in enumerate(s.robot_poses)]
    after = world_step(s, [Control2(0.0, 0.0)] * 4, [0.0] * 4, 0.1)
    first = observe(after)
    assert first == observe(after)
    errors = [p.distance_to(after.robot_poses[i]) for i, p in first]
    assert 0.0 < max(errors) < 0.1
    other = world_step(WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0), seed=8, script=script), [Control2(0.0, 0.0)] * 4, [0.0] * 4, 0.1)
    assert observe(other) != first


def test_noise_has_configured_spread(formation4):
    s = WorldState.initial(formation4, Pose2(1.0, -2.0, 0.5), seed=3)
    s = dataclasses.replace(s, noise=NoiseOn())
    errors = []
    for step in range(2500):
        observed = observe(dataclasses.replace(s, step=step))
        errors.extend(p.vector() - s.robot_poses[i].vector() for i, p in observed)
    errors = np.array(errors)
    assert len(errors) == 10000
    assert np.all(np.abs(np.std(errors, axis=0) - 1e-3) <= 1e-4)
    assert np.all(np.abs(np.mean(errors, axis=0)) <= 1e-4)


def test_simulator_handle(formation4):
    world = Simulator.create(formation4, Pose2(0.5, 0.0, math.pi / 2), 0.1)
    assert world.ts == 0.1
    assert world.formation is formation4
    assert world.measure_centroid().distance_to((0.5, 0.0)) <= 1e-12
    centroid = world.measure_centroid()
    controls, headings = translate_inputs(formation4, centroid, 0.5)
    world.step(controls, headings)
    assert world.state.step == 1
    assert world.measure_centroid().y == pytest.approx(0.05)
    assert world.failed == frozenset()


def test_simulator_validates(formation4):
    with pytest.raises(ValueError):
        Simulator(kinematics.Formation.symmetric(3), WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0)), 0.1)
    with pytest.raises(ValueError):
        Simulator(formation4, WorldState.initial(formation4, Pose2(0.0, 0.0, 0.0)), 0.0)


def test_measure_without_robots(formation4):
    script = EventScript(tuple(ScriptedEvent(i + 1, Fail(i)) for i in range(4)))
    world = Simulator.create(formation4, Pose2(0.0, 0.0, 0.0), 0.1, script=script)
    for _ in range(4):
        world.step([Control2(0.0, 0.0)] * 4, [0.0] * 4)
    with pytest.raises(kinematics.Error) as ex:
        world.measure_centroid()
    assert ex.value.code is kinematics.Error.Code.MISSION
    assert observe(world.state) == []
