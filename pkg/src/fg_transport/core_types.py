"""
Geometric and probabilistic primitives: poses, controls, angle arithmetic
and diagonal noise models.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import math
from dataclasses import dataclass
from enum import IntEnum, unique
from typing import Sequence, Tuple, Union

import numpy as np

from fg_transport import error, _utils

_TWO_PI = 2.0 * math.pi


class Error(error.Error):
    """
    Raised on invalid primitive values.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of core_types
        """
        DOMAIN = -1
        INVALID_NOISE = -2

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


def wrap_angle(a: float) -> float:
    """
    Wrap an angle into (-pi, pi].
    """
    if not math.isfinite(a):
        raise Error(f'non-finite angle {a}', Error.Code.DOMAIN, 'wrap_angle')
    w = a - _TWO_PI * math.floor((a + math.pi) / _TWO_PI)
    # floor leaves [-pi, pi): move the open end to -pi
    if w <= -math.pi:
        w += _TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """
    Vectorized wrap_angle().
    """
    a = np.asarray(a, dtype=float)
    w = a - _TWO_PI * np.floor((a + math.pi) / _TWO_PI)
    return np.where(w <= -math.pi, w + _TWO_PI, w)


@dataclass(frozen=True)
class Pose2:
    """
    SE(2) pose of the payload centroid or of a robot.

    The heading is wrapped into (-pi, pi] at construction.
    """
    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not _utils.is_finite(self.x, self.y):
            raise Error(f'non-finite position ({self.x}, {self.y})', Error.Code.DOMAIN, 'Pose2')
        object.__setattr__(self, 'theta', wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        """Position as a 2-vector"""
        return np.array([self.x, self.y])

    def vector(self) -> np.ndarray:
        """(x, y, theta) as a 3-vector"""
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> 'Pose2':
        """Build from a 3-vector"""
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def distance_to(self, point: Union['Pose2', Sequence[float]]) -> float:
        """Euclidean distance between positions"""
        if isinstance(point, Pose2):
            return math.hypot(self.x - point.x, self.y - point.y)
        return math.hypot(self.x - point[0], self.y - point[1])


@dataclass(frozen=True)
class Control2:
    """
    Unicycle control: linear speed v and angular rate omega.
    """
    v: float
    omega: float

    def vector(self) -> np.ndarray:
        """(v, omega) as a 2-vector"""
        return np.array([self.v, self.omega])

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> 'Control2':
        """Build from a 2-vector"""
        return cls(float(v[0]), float(v[1]))


@dataclass(frozen=True)
class CentroidVel:
    """
    World-frame centroid velocity.
    """
    xdot: float
    ydot: float
    thetadot: float

    def vector(self) -> np.ndarray:
        """(xdot, ydot, thetadot) as a 3-vector"""
        return np.array([self.xdot, self.ydot, self.thetadot])


def pose_boxminus(a: Pose2, b: Pose2) -> np.ndarray:
    """
    Local difference a - b with the angle wrapped.
    """
    return np.array([a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)])


def pose_boxplus(a: Pose2, d: Sequence[float]) -> Pose2:
    """
    Retraction: componentwise increment with the angle wrapped.
    """
    return Pose2(a.x + float(d[0]), a.y + float(d[1]), a.theta + float(d[2]))


@dataclass(frozen=True)
class DiagNoise:
    """
    Diagonal Gaussian noise model, given as per-dimension variances.

    Whitening divides each residual row by the standard deviation, so that
    the squared norm of a whitened residual is its Mahalanobis distance.
    """
    sigmas_sq: Tuple[float, ...]

    def __post_init__(self) -> None:
        variances = tuple(float(v) for v in self.sigmas_sq)
        if len(variances) == 0:
            raise Error('empty noise model', Error.Code.INVALID_NOISE, 'DiagNoise')
        for v in variances:
            if not math.isfinite(v) or v <= 0.0:
                raise Error(f'variance must be finite and > 0, got {v}', Error.Code.INVALID_NOISE, 'DiagNoise')
        object.__setattr__(self, 'sigmas_sq', variances)

    @classmethod
    def from_variances(cls, *variances: float) -> 'DiagNoise':
        """Build from variances given as arguments"""
        return cls(tuple(variances))

    @classmethod
    def isotropic(cls, dim: int, variance: float) -> 'DiagNoise':
        """Same variance on every dimension"""
        return cls((variance,) * dim)

    @property
    def dim(self) -> int:
        """Residual dimension"""
        return len(self.sigmas_sq)

    @property
    def sigmas(self) -> np.ndarray:
        """Standard deviations"""
        return np.sqrt(np.array(self.sigmas_sq))

    @property
    def information(self) -> np.ndarray:
        """Diagonal of the information matrix"""
        return 1.0 / np.array(self.sigmas_sq)

    def whiten(self, value: np.ndarray) -> np.ndarray:
        """
        Whiten a residual vector, or the rows of a Jacobian block.
        """
        value = np.asarray(value, dtype=float)
        if value.ndim == 1:
            return value / self.sigmas
        return value / self.sigmas[:, None]
