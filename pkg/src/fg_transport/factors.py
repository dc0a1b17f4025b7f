"""
Factors of the centroid planning graph.

Each factor kind has one vectorized kernel returning raw residuals and
Jacobian blocks for a batch of factors; the single-factor eval_*
functions and the graph linearization share these kernels.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import math
from dataclasses import dataclass, field
from enum import IntEnum, unique
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from fg_transport import error
from fg_transport.core_types import Control2, DiagNoise, Pose2, wrap_angles


class Error(error.Error):
    """
    Raised on malformed factors.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of factors
        """
        ARITY = -1
        DOMAIN = -2

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


class Key(NamedTuple):
    """
    Variable identifier: symbol 'x' for poses, 'u' for controls.
    """
    symbol: str
    index: int

    def __str__(self) -> str:
        return f'{self.symbol}{self.index}'


POSE = 'x'
CONTROL = 'u'

# Tangent dimension per symbol
DIMS: Dict[str, int] = {POSE: 3, CONTROL: 2}


def X(n: int) -> Key:
    """Key of centroid pose n"""
    return Key(POSE, n)


def U(n: int) -> Key:
    """Key of centroid control n"""
    return Key(CONTROL, n)


@unique
class FactorKind(IntEnum):
    """
    Factor types of the planning graph
    """
    POSE_PRIOR = 0
    CONTROL_PRIOR = 1
    MOTION = 2
    OBSTACLE = 3
    ANCHOR = 4


# Variable symbols connected by each kind, in order
_SIGNATURE: Dict[FactorKind, Tuple[str, ...]] = {
    FactorKind.POSE_PRIOR:      (POSE,),
    FactorKind.CONTROL_PRIOR:   (CONTROL,),
    FactorKind.MOTION:          (POSE, CONTROL, POSE),
    FactorKind.OBSTACLE:        (POSE,),
    FactorKind.ANCHOR:          (POSE,),
}

_RESIDUAL_DIM: Dict[FactorKind, int] = {
    FactorKind.POSE_PRIOR:      3,
    FactorKind.CONTROL_PRIOR:   2,
    FactorKind.MOTION:          3,
    FactorKind.OBSTACLE:        1,
    FactorKind.ANCHOR:          3,
}

ANCHOR_VARIANCE = 1e-12

_ANCHOR_NOISE = DiagNoise.isotropic(3, ANCHOR_VARIANCE)


@dataclass(frozen=True)
class Factor:
    """
    A cost term over one or three variables.

    The payload fields used depend on the kind: @p reference for pose
    priors and anchors, @p control_reference for control priors, @p ts for
    motion factors, @p center, @p radius and @p obstacle_id for obstacles.
    """
    kind: FactorKind
    keys: Tuple[Key, ...]
    noise: DiagNoise
    reference: Optional[Pose2] = field(default=None)
    control_reference: Optional[Control2] = field(default=None)
    ts: float = field(default=0.0)
    center: Tuple[float, float] = field(default=(0.0, 0.0))
    radius: float = field(default=0.0)
    obstacle_id: int = field(default=-1)

    def __post_init__(self) -> None:
        signature = _SIGNATURE[self.kind]
        if tuple(k.symbol for k in self.keys) != signature:
            raise Error(f'{self.kind.name} expects {signature}, got {[str(k) for k in self.keys]}', Error.Code.ARITY, 'Factor')
        if self.noise.dim != _RESIDUAL_DIM[self.kind]:
            raise Error(f'{self.kind.name} expects noise of dim {_RESIDUAL_DIM[self.kind]}', Error.Code.ARITY, 'Factor')
        if self.kind in (FactorKind.POSE_PRIOR, FactorKind.ANCHOR) and self.reference is None:
            raise Error('missing reference pose', Error.Code.ARITY, 'Factor')
        if self.kind is FactorKind.CONTROL_PRIOR and self.control_reference is None:
            raise Error('missing reference control', Error.Code.ARITY, 'Factor')
        if self.kind is FactorKind.MOTION and not self.ts > 0.0:
            raise Error(f'time step must be > 0, got {self.ts}', Error.Code.DOMAIN, 'Factor')
        if self.kind is FactorKind.OBSTACLE and not self.radius > 0.0:
            raise Error(f'safety radius must be > 0, got {self.radius}', Error.Code.DOMAIN, 'Factor')

    @property
    def dim(self) -> int:
        """Residual dimension"""
        return _RESIDUAL_DIM[self.kind]


def pose_prior(key: Key, reference: Pose2, noise: DiagNoise) -> Factor:
    """Unary pose factor pulling towards the reference path"""
    return Factor(FactorKind.POSE_PRIOR, (key,), noise, reference=reference)


def control_prior(key: Key, reference: Control2, noise: DiagNoise) -> Factor:
    """Unary control factor pulling towards the nominal speed"""
    return Factor(FactorKind.CONTROL_PRIOR, (key,), noise, control_reference=reference)


def motion(x_key: Key, u_key: Key, x_next_key: Key, ts: float, noise: DiagNoise) -> Factor:
    """Ternary centroid motion factor"""
    return Factor(FactorKind.MOTION, (x_key, u_key, x_next_key), noise, ts=ts)


def obstacle(key: Key, center: Sequence[float], radius: float, noise: DiagNoise, obstacle_id: int = -1) -> Factor:
    """Safety-bubble hinge around a point obstacle"""
    return Factor(FactorKind.OBSTACLE, (key,), noise, center=(float(center[0]), float(center[1])), radius=radius, obstacle_id=obstacle_id)


def anchor(key: Key, pose: Pose2) -> Factor:
    """Near-hard prior pinning the current centroid"""
    return Factor(FactorKind.ANCHOR, (key,), _ANCHOR_NOISE, reference=pose)


@dataclass(frozen=True)
class Residual:
    """
    Whitened residual and one Jacobian block per connected variable.
    """
    value: np.ndarray
    jacobians: Tuple[np.ndarray, ...]


# Kernels: variables as (B, d) arrays, parameters as arrays with leading
# batch dimension; return raw residual (B, m) and blocks (B, m, d).

KernelResult = Tuple[np.ndarray, List[np.ndarray]]


def _pose_prior_kernel(variables: Sequence[np.ndarray], reference: np.ndarray) -> KernelResult:
    x, = variables
    raw = x - reference
    raw[:, 2] = wrap_angles(raw[:, 2])
    jac = np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
    return raw, [jac]


def _control_prior_kernel(variables: Sequence[np.ndarray], reference: np.ndarray) -> KernelResult:
    u, = variables
    jac = np.broadcast_to(np.eye(2), (len(u), 2, 2)).copy()
    return u - reference, [jac]


def _motion_kernel(variables: Sequence[np.ndarray], ts: np.ndarray) -> KernelResult:
    x, u, x_next = variables
    n = len(x)
    c = np.cos(x[:, 2])
    s = np.sin(x[:, 2])
    v = u[:, 0]
    raw = np.empty((n, 3))
    raw[:, 0] = x[:, 0] + ts * v * c - x_next[:, 0]
    raw[:, 1] = x[:, 1] + ts * v * s - x_next[:, 1]
    raw[:, 2] = wrap_angles(x[:, 2] + ts * u[:, 1] - x_next[:, 2])
    j_x = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    j_x[:, 0, 2] = -ts * v * s
    j_x[:, 1, 2] = ts * v * c
    j_u = np.zeros((n, 3, 2))
    j_u[:, 0, 0] = ts * c
    j_u[:, 1, 0] = ts * s
    j_u[:, 2, 1] = ts
    j_next = np.broadcast_to(-np.eye(3), (n, 3, 3)).copy()
    return raw, [j_x, j_u, j_next]


def _obstacle_kernel(variables: Sequence[np.ndarray], center: np.ndarray, radius: np.ndarray) -> KernelResult:
    x, = variables
    n = len(x)
    delta = x[:, :2] - center
    d = np.hypot(delta[:, 0], delta[:, 1])
    inside = d < radius
    raw = np.where(inside, 1.0 - d / radius, 0.0)[:, None]
    jac = np.zeros((n, 1, 3))
    # zero jacobian at d == 0 and on the hinge
    moving = inside & (d > 0.0)
    safe_d = np.where(moving, d, 1.0)
    jac[:, 0, :2] = np.where(moving[:, None], -delta / (radius * safe_d)[:, None], 0.0)
    return raw, [jac]


KERNELS: Dict[FactorKind, Callable[..., KernelResult]] = {
    FactorKind.POSE_PRIOR:      _pose_prior_kernel,
    FactorKind.CONTROL_PRIOR:   _control_prior_kernel,
    FactorKind.MOTION:          _motion_kernel,
    FactorKind.OBSTACLE:        _obstacle_kernel,
    FactorKind.ANCHOR:          _pose_prior_kernel,
}


def kernel_params(kind: FactorKind, factors: Sequence[Factor]) -> Tuple[np.ndarray, ...]:
    """
    Stack the payloads of same-kind factors into kernel parameters.
    """
    if kind in (FactorKind.POSE_PRIOR, FactorKind.ANCHOR):
        return (np.array([[f.reference.x, f.reference.y, f.reference.theta] for f in factors]),)  # type: ignore
    if kind is FactorKind.CONTROL_PRIOR:
        return (np.array([[f.control_reference.v, f.control_reference.omega] for f in factors]),)  # type: ignore
    if kind is FactorKind.MOTION:
        return (np.array([f.ts for f in factors]),)
    return (np.array([f.center for f in factors]), np.array([f.radius for f in factors]))


def _evaluate_one(f: Factor, kind: FactorKind, *variables: Union[Pose2, Control2]) -> Residual:
    if f.kind is not kind:
        raise Error(f'expected {kind.name}, got {f.kind.name}', Error.Code.ARITY, f'eval_{kind.name.lower()}')
    arrays = [v.vector()[None, :] for v in variables]
    raw, jacs = KERNELS[kind](arrays, *kernel_params(kind, [f]))
    sigmas = f.noise.sigmas
    return Residual(raw[0] / sigmas, tuple(j[0] / sigmas[:, None] for j in jacs))


def eval_pose_prior(f: Factor, x: Pose2) -> Residual:
    """
    Deviation from the reference pose.
    """
    return _evaluate_one(f, FactorKind.POSE_PRIOR, x)


def eval_control_prior(f: Factor, u: Control2) -> Residual:
    """
    Deviation from the reference control.
    """
    return _evaluate_one(f, FactorKind.CONTROL_PRIOR, u)


def eval_motion(f: Factor, x_n: Pose2, u_n: Control2, x_next: Pose2) -> Residual:
    """
    Centroid model prediction minus the next pose.
    """
    return _evaluate_one(f, FactorKind.MOTION, x_n, u_n, x_next)


def eval_obstacle(f: Factor, x: Pose2) -> Residual:
    """
    Hinge 1 - d/R inside the safety bubble, zero outside.

    At d == 0 the value is 1 and the Jacobian is zero.
    """
    return _evaluate_one(f, FactorKind.OBSTACLE, x)


def eval_anchor(f: Factor, x: Pose2) -> Residual:
    """
    Deviation from the measured pose, near-zero variance.
    """
    return _evaluate_one(f, FactorKind.ANCHOR, x)


_EVAL: Dict[FactorKind, Callable[..., Residual]] = {
    FactorKind.POSE_PRIOR:      eval_pose_prior,
    FactorKind.CONTROL_PRIOR:   eval_control_prior,
    FactorKind.MOTION:          eval_motion,
    FactorKind.OBSTACLE:        eval_obstacle,
    FactorKind.ANCHOR:          eval_anchor,
}


def evaluate(f: Factor, values: Mapping[Key, Union[Pose2, Control2]]) -> Residual:
    """
    Evaluate a factor of any kind on the given variables.
    """
    return _EVAL[f.kind](f, *(values[k] for k in f.keys))


def obstacle_clearance(x: Pose2, center: Sequence[float]) -> float:
    """Distance from a centroid position to an obstacle point"""
    return math.hypot(x.x - center[0], x.y - center[1])
