"""
Deterministic kinematic world of the robot team, with scripted
disturbances, robot failures and optional measurement noise.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum, unique
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from fg_transport import error, kinematics
from fg_transport.core_types import Control2, Pose2, wrap_angles
from fg_transport.kinematics import Formation, Phase

_log = logging.getLogger(__name__)


class Error(error.Error):
    """
    Raised on invalid world configuration.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of sim_world
        """
        INVALID_SCRIPT = -1

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


@unique
class EventKind(IntEnum):
    """
    Events recorded in a mission log
    """
    DISTURB = 0
    FAIL = 1
    NOISE_ON = 2
    SOLVER_DIVERGED = 3
    ROTATION_BUDGET = 4
    FINAL_APPROACH = 5
    GOAL_REACHED = 6


@dataclass(frozen=True)
class Disturb:
    """
    Rigid displacement of the active robots. dtheta rotates them about
    their mean position.
    """
    dx: float = field(default=0.0)
    dy: float = field(default=0.0)
    dtheta: float = field(default=0.0)

    @property
    def kind(self) -> EventKind:
        """Log kind"""
        return EventKind.DISTURB


@dataclass(frozen=True)
class Fail:
    """
    Robot failure: the robot freezes and stops being observed.
    """
    robot: int

    def __post_init__(self) -> None:
        if self.robot < 0:
            raise Error(f'invalid robot index {self.robot}', Error.Code.INVALID_SCRIPT, 'Fail')

    @property
    def kind(self) -> EventKind:
        """Log kind"""
        return EventKind.FAIL


@dataclass(frozen=True)
class NoiseOn:
    """
    Gaussian measurement noise on observed poses, 1 mm by default.
    """
    sigma_pos: float = field(default=1e-3)
    sigma_theta: float = field(default=1e-3)

    def __post_init__(self) -> None:
        if self.sigma_pos < 0.0 or self.sigma_theta < 0.0:
            raise Error('noise sigmas must be >= 0', Error.Code.INVALID_SCRIPT, 'NoiseOn')

    @property
    def kind(self) -> EventKind:
        """Log kind"""
        return EventKind.NOISE_ON


Action = Union[Disturb, Fail, NoiseOn]


@dataclass(frozen=True)
class ScriptedEvent:
    """
    Action applied right after the motion of world step @p step.
    """
    step: int
    action: Action

    def __post_init__(self) -> None:
        if self.step < 1:
            raise Error(f'trigger step must be >= 1, got {self.step}', Error.Code.INVALID_SCRIPT, 'ScriptedEvent')

    @classmethod
    def at_time(cls, time: float, ts: float, action: Action) -> 'ScriptedEvent':
        """Trigger at the step closest to @p time"""
        if not ts > 0.0:
            raise Error(f'time step must be > 0, got {ts}', Error.Code.INVALID_SCRIPT, 'ScriptedEvent.at_time')
        return cls(int(round(time / ts)), action)


@dataclass(frozen=True)
class EventScript:
    """
    Scripted events with strictly increasing triggers.
    """
    events: Tuple[ScriptedEvent, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, 'events', tuple(self.events))
        steps = [e.step for e in self.events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise Error(f'triggers must be strictly increasing, got {steps}', Error.Code.INVALID_SCRIPT, 'EventScript')

    def at_step(self, step: int) -> Tuple[Action, ...]:
        """Actions triggered by @p step"""
        return tuple(e.action for e in self.events if e.step == step)


@dataclass(frozen=True)
class WorldState:
    """
    Robot poses and world bookkeeping after a step.
    """
    robot_poses: Tuple[Pose2, ...]
    failed: FrozenSet[int] = field(default=frozenset())
    time: float = field(default=0.0)
    step: int = field(default=0)
    rng_seed: int = field(default=0)
    noise: Optional[NoiseOn] = field(default=None)
    script: EventScript = field(default=EventScript())
    last_events: Tuple[Action, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, 'robot_poses', tuple(self.robot_poses))
        object.__setattr__(self, 'failed', frozenset(self.failed))
        if self.rng_seed < 0:
            raise Error(f'seed must be >= 0, got {self.rng_seed}', Error.Code.INVALID_SCRIPT, 'WorldState')
        for e in self.script.events:
            if isinstance(e.action, Fail) and e.action.robot >= len(self.robot_poses):
                raise Error(f'robot {e.action.robot} does not exist', Error.Code.INVALID_SCRIPT, 'WorldState')

    @classmethod
    def initial(cls, formation: Formation, centroid: Pose2, seed: int = 0, script: Optional[EventScript] = None) -> 'WorldState':
        """Robots in their slots around @p centroid, ready to translate"""
        robots = kinematics.robots_from_centroid(centroid, formation, Phase.translate())
        return cls(tuple(robots), rng_seed=seed, script=script if script is not None else EventScript())

    @property
    def active(self) -> List[int]:
        """Indices of robots not failed"""
        return [i for i in range(len(self.robot_poses)) if i not in self.failed]


def _as_array(poses: Sequence[Pose2]) -> np.ndarray:
    return np.array([[p.x, p.y, p.theta] for p in poses], dtype=float).reshape(-1, 3)


def _disturb(poses: np.ndarray, active: np.ndarray, d: Disturb) -> np.ndarray:
    out = poses.copy()
    if not np.any(active):
        return out
    if d.dtheta != 0.0:
        pivot = poses[active, :2].mean(axis=0)
        c, s = math.cos(d.dtheta), math.sin(d.dtheta)
        rel = poses[active, :2] - pivot
        out[active, 0] = pivot[0] + c * rel[:, 0] - s * rel[:, 1]
        out[active, 1] = pivot[1] + s * rel[:, 0] + c * rel[:, 1]
        out[active, 2] = wrap_angles(poses[active, 2] + d.dtheta)
    out[active, 0] += d.dx
    out[active, 1] += d.dy
    return out


def world_step(s: WorldState, controls: Sequence[Control2], required_headings: Sequence[float], ts: float) -> WorldState:
    """
    Advance the world by one step.

    Active robots with a non-zero control pivot to their required heading
    and then follow the robot motion model; failed robots do not move.
    Events triggered by the new step are applied after the motion.
    """
    count = len(s.robot_poses)
    if len(controls) != count or len(required_headings) != count:
        raise ValueError(f'expected {count} controls and headings.')
    poses = _as_array(s.robot_poses)
    u = np.array([[c.v, c.omega] for c in controls], dtype=float).reshape(-1, 2)
    active = np.ones(count, dtype=bool)
    active[list(s.failed)] = False
    moving = active & np.any(u != 0.0, axis=1)
    pivoted = poses.copy()
    pivoted[moving, 2] = wrap_angles(np.asarray(required_headings, dtype=float)[moving])
    propagated = kinematics.propagate_robots(pivoted, u, ts)
    poses = np.where(moving[:, None], propagated, poses)
    step = s.step + 1
    failed = set(s.failed)
    noise = s.noise
    applied = s.script.at_step(step)
    for action in applied:
        if isinstance(action, Disturb):
            poses = _disturb(poses, active, action)
        elif isinstance(action, Fail):
            failed.add(action.robot)
            active[action.robot] = False
        else:
            noise = action
        _log.info('step %d: %s', step, action)
    return replace(
        s,
        robot_poses=tuple(Pose2(float(p[0]), float(p[1]), float(p[2])) for p in poses),
        failed=frozenset(failed),
        time=step * ts,
        step=step,
        noise=noise,
        last_events=applied,
    )


def observe(s: WorldState) -> List[Tuple[int, Pose2]]:
    """
    Poses of the active robots, noisy once NoiseOn was applied.

    The noise depends only on the seed and the step.
    """
    active = s.active
    if s.noise is None or not active:
        return [(i, s.robot_poses[i]) for i in active]
    rng = np.random.default_rng((s.rng_seed, s.step))
    draws = rng.standard_normal((len(active), 3))
    scale = np.array([s.noise.sigma_pos, s.noise.sigma_pos, s.noise.sigma_theta])
    noisy = _as_array([s.robot_poses[i] for i in active]) + draws * scale
    return [(i, Pose2(float(p[0]), float(p[1]), float(p[2]))) for i, p in zip(active, noisy)]


class Simulator:
    """
    Mutable handle on a WorldState, driven by the mission loop.
    """

    def __init__(self, formation: Formation, state: WorldState, ts: float) -> None:
        if len(formation) != len(state.robot_poses):
            raise ValueError('formation and world robot count differ.')
        if not ts > 0.0:
            raise ValueError('Time step must be > 0.')
        self.__formation = formation
        self.__state = state
        self.__ts = ts

    @classmethod
    def create(cls, formation: Formation, centroid: Pose2, ts: float, seed: int = 0, script: Optional[EventScript] = None) -> 'Simulator':
        """World with robots in their slots around @p centroid"""
        return cls(formation, WorldState.initial(formation, centroid, seed, script), ts)

    @property
    def state(self) -> WorldState:
        """Current world state"""
        return self.__state

    @property
    def formation(self) -> Formation:
        """Robot formation"""
        return self.__formation

    @property
    def ts(self) -> float:
        """Time step"""
        return self.__ts

    @property
    def robot_poses(self) -> Tuple[Pose2, ...]:
        """True robot poses, failed robots included"""
        return self.__state.robot_poses

    @property
    def failed(self) -> FrozenSet[int]:
        """Failed robot indices"""
        return self.__state.failed

    @property
    def last_events(self) -> Tuple[Action, ...]:
        """Actions applied by the latest step"""
        return self.__state.last_events

    def step(self, controls: Sequence[Control2], required_headings: Sequence[float]) -> WorldState:
        """Advance by one time step"""
        self.__state = world_step(self.__state, controls, required_headings, self.__ts)
        return self.__state

    def observe(self) -> List[Tuple[int, Pose2]]:
        """Observed poses of the active robots"""
        return observe(self.__state)

    def measure_centroid(self) -> Pose2:
        """
        Centroid fitted to the observed robots.

        Raises kinematics.Error with code MISSION if no robot is active.
        """
        observed = self.observe()
        return kinematics.centroid_from_robots([p for _, p in observed], self.__formation, [i for i, _ in observed])
