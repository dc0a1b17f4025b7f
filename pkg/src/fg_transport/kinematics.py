"""
Motion models of robots and payload centroid, translation/rotation phases
and distribution of centroid controls to the robots of a rigid formation.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import math
from dataclasses import dataclass, field
from enum import IntEnum, unique
from typing import AbstractSet, List, Optional, Sequence, Tuple

import numpy as np

from fg_transport import error, _utils
from fg_transport.core_types import CentroidVel, Control2, Pose2, wrap_angle, wrap_angles


class Error(error.Error):
    """
    Raised on invalid kinematic inputs.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of kinematics
        """
        DOMAIN = -1
        CONTRACT = -2
        MISSION = -3

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


@unique
class PhaseKind(IntEnum):
    """
    Centroid motion stage
    """
    TRANSLATE = 0
    ROTATE = 1


@dataclass(frozen=True)
class Phase:
    """
    Translation or rotation stage of the centroid.

    rotation_dir is +1 for counter-clockwise and -1 for clockwise, and is
    meaningful only for ROTATE.
    """
    kind: PhaseKind
    rotation_dir: int = field(default=1)

    def __post_init__(self) -> None:
        if self.rotation_dir not in (1, -1):
            raise Error(f'rotation_dir must be +1 or -1, got {self.rotation_dir}', Error.Code.DOMAIN, 'Phase')

    @classmethod
    def translate(cls) -> 'Phase':
        """Translation phase"""
        return cls(PhaseKind.TRANSLATE)

    @classmethod
    def rotate(cls, rotation_dir: int) -> 'Phase':
        """Rotation phase in the given direction"""
        return cls(PhaseKind.ROTATE, rotation_dir)

    @property
    def is_rotate(self) -> bool:
        """True for rotation phases"""
        return self.kind is PhaseKind.ROTATE


@dataclass(frozen=True)
class FormationSlot:
    """
    Rigid placement of a robot under the payload.

    l is the lever arm from the centroid to the robot contact point, psi the
    angular placement of the slot in the centroid frame.
    """
    l: float
    psi: float

    def __post_init__(self) -> None:
        if not _utils.is_finite(self.l) or self.l < 0.0:
            raise Error(f'lever arm must be >= 0, got {self.l}', Error.Code.DOMAIN, 'FormationSlot')
        object.__setattr__(self, 'psi', wrap_angle(self.psi))


@dataclass(frozen=True)
class Formation:
    """
    Fixed formation, one slot per robot.
    """
    slots: Tuple[FormationSlot, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, 'slots', tuple(self.slots))
        if len(self.slots) == 0:
            raise Error('formation needs at least one slot', Error.Code.DOMAIN, 'Formation')

    @classmethod
    def symmetric(cls, count: int, lever_arm: float = 0.35) -> 'Formation':
        """
        Slots evenly spaced on a circle, psi_i = 2*pi*i/count.
        """
        if count < 1:
            raise Error(f'robot count must be >= 1, got {count}', Error.Code.DOMAIN, 'Formation.symmetric')
        return cls(tuple(FormationSlot(lever_arm, 2.0 * math.pi * i / count) for i in range(count)))

    def __len__(self) -> int:
        return len(self.slots)

    def offsets(self) -> np.ndarray:
        """Slot offsets in the centroid frame, shape (I, 2)"""
        l = np.array([s.l for s in self.slots])
        psi = np.array([s.psi for s in self.slots])
        return np.column_stack((l * np.cos(psi), l * np.sin(psi)))


def _check_ts(ts: float, func: str) -> None:
    if not ts > 0.0:
        raise Error(f'time step must be > 0, got {ts}', Error.Code.DOMAIN, func)


def propagate_robot(x: Pose2, u: Control2, ts: float) -> Pose2:
    """
    Robot unicycle step with the second-order midpoint heading.
    """
    _check_ts(ts, 'propagate_robot')
    heading = x.theta + u.omega * ts / 2.0
    return Pose2(
        x.x + ts * u.v * math.cos(heading),
        x.y + ts * u.v * math.sin(heading),
        x.theta + ts * u.omega,
    )


def propagate_robots(poses: np.ndarray, controls: np.ndarray, ts: float) -> np.ndarray:
    """
    Vectorized propagate_robot() over (I, 3) poses and (I, 2) controls.
    """
    _check_ts(ts, 'propagate_robots')
    v = controls[:, 0]
    omega = controls[:, 1]
    heading = poses[:, 2] + omega * ts / 2.0
    out = np.empty_like(poses, dtype=float)
    out[:, 0] = poses[:, 0] + ts * v * np.cos(heading)
    out[:, 1] = poses[:, 1] + ts * v * np.sin(heading)
    out[:, 2] = wrap_angles(poses[:, 2] + ts * omega)
    return out


def propagate_centroid(x: Pose2, u: Control2, ts: float) -> Pose2:
    """
    Centroid step, no midpoint term.

    Exact for pure translation and pure rotation.
    """
    _check_ts(ts, 'propagate_centroid')
    return Pose2(
        x.x + ts * u.v * math.cos(x.theta),
        x.y + ts * u.v * math.sin(x.theta),
        x.theta + ts * u.omega,
    )


def propagate_centroid_vel(x: Pose2, v: CentroidVel, ts: float) -> Pose2:
    """
    Centroid step driven by a world-frame velocity.
    """
    _check_ts(ts, 'propagate_centroid_vel')
    return Pose2(x.x + ts * v.xdot, x.y + ts * v.ydot, x.theta + ts * v.thetadot)


def vel_to_control(x: Pose2, v: CentroidVel) -> Control2:
    """
    World-frame velocity to unicycle control.

    The speed is negative when the velocity points behind the heading.
    """
    speed = math.hypot(v.xdot, v.ydot)
    forward = v.xdot * math.cos(x.theta) + v.ydot * math.sin(x.theta)
    return Control2(speed * _utils.sign(forward), v.thetadot)


def required_robot_heading(centroid_theta: float, slot: FormationSlot, phase: Phase) -> float:
    """
    Heading a robot pivots to before applying its control.
    """
    if not phase.is_rotate:
        return wrap_angle(centroid_theta)
    return wrap_angle(centroid_theta + slot.psi + phase.rotation_dir * math.pi / 2.0)


def _check_phase_control(u_c: Control2, phase: Phase) -> None:
    if phase.is_rotate:
        if u_c.v != 0.0:
            raise Error(f'rotation phase with v={u_c.v}', Error.Code.CONTRACT, 'distribute_controls')
        if u_c.omega != 0.0 and _utils.sign(u_c.omega) != phase.rotation_dir:
            raise Error(f'omega={u_c.omega} against rotation_dir={phase.rotation_dir}', Error.Code.CONTRACT, 'distribute_controls')
    elif u_c.omega != 0.0:
        raise Error(f'translation phase with omega={u_c.omega}', Error.Code.CONTRACT, 'distribute_controls')


def distribute_controls(u_c: Control2, formation: Formation, phase: Phase, failed: AbstractSet[int] = frozenset()) -> List[Control2]:
    """
    Robot controls from a phase-consistent centroid control.

    In rotation each robot drives along the tangent of its circle, so the
    lever-arm term takes the rotation direction sign.
    """
    _check_phase_control(u_c, phase)
    controls = []
    for i, slot in enumerate(formation.slots):
        if i in failed:
            controls.append(Control2(0.0, 0.0))
            continue
        arm = slot.l * u_c.omega * (phase.rotation_dir if phase.is_rotate else 1)
        controls.append(Control2(u_c.v + arm, u_c.omega))
    return controls


def robots_from_centroid(centroid: Pose2, formation: Formation, phase: Phase) -> List[Pose2]:
    """
    Forward kinematics of the rigid formation.
    """
    poses = []
    for slot in formation.slots:
        angle = centroid.theta + slot.psi
        poses.append(Pose2(
            centroid.x + slot.l * math.cos(angle),
            centroid.y + slot.l * math.sin(angle),
            required_robot_heading(centroid.theta, slot, phase),
        ))
    return poses


# Below this spread the heading is not observable from positions
_MIN_SPREAD = 1e-12


def centroid_from_robots(robot_poses: Sequence[Pose2], formation: Formation, indices: Optional[Sequence[int]] = None) -> Pose2:
    """
    Least-squares rigid fit of the centroid to the robot positions.

    @p indices selects the formation slots of @p robot_poses; by default
    robot i sits in slot i.
    """
    if indices is None:
        indices = range(len(robot_poses))
    indices = list(indices)
    if len(robot_poses) == 0:
        raise Error('no active robot', Error.Code.MISSION, 'centroid_from_robots')
    if len(indices) != len(robot_poses):
        raise ValueError('indices and robot_poses size mismatch.')
    points = np.array([[p.x, p.y] for p in robot_poses])
    offsets = formation.offsets()[indices]
    p_mean = points.mean(axis=0)
    o_mean = offsets.mean(axis=0)
    p_c = points - p_mean
    o_c = offsets - o_mean
    if np.sum(o_c * o_c) <= _MIN_SPREAD:
        headings = np.array([p.theta for p in robot_poses])
        theta = math.atan2(np.sin(headings).mean(), np.cos(headings).mean())
    else:
        dot = np.sum(o_c * p_c)
        cross = np.sum(o_c[:, 0] * p_c[:, 1] - o_c[:, 1] * p_c[:, 0])
        theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    x = p_mean[0] - (c * o_mean[0] - s * o_mean[1])
    y = p_mean[1] - (s * o_mean[0] + c * o_mean[1])
    return Pose2(float(x), float(y), theta)
