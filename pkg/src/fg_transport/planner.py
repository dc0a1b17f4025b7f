"""
Receding-horizon planning and control of the payload centroid.

Each step builds a factor graph from the current step to the terminal
state, solves it with Levenberg-Marquardt, and turns the first planned
control into a pure translation or pure rotation of the centroid.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum, unique
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from fg_transport import error, factors, kinematics, _utils
from fg_transport.core_types import Control2, DiagNoise, Pose2, wrap_angle
from fg_transport.factors import FactorKind, U, X
from fg_transport.graph_solver import (
    FactorGraph,
    LMParams,
    Ordering,
    PackedGraph,
    SolverDivergedError,
    SolveStats,
    Values,
    lm_optimize_vector,
    pack_batch,
)
from fg_transport.kinematics import Formation, Phase
from fg_transport.sim_world import EventKind, Simulator

_log = logging.getLogger(__name__)


class Error(error.Error):
    """
    Raised on invalid planning problems and aborted missions.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of planner
        """
        INFEASIBLE_SCHEDULE = -1
        INVALID_PROBLEM = -2
        MISSION_ABORTED = -3

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


@dataclass(frozen=True)
class NoiseModels:
    """
    Noise model of each factor kind.

    The terminal model is used on the pose prior of the last state.
    """
    state: DiagNoise = field(default=DiagNoise((0.1, 0.1, 0.02)))
    terminal: DiagNoise = field(default=DiagNoise((0.1, 0.1, 0.02)))
    control: DiagNoise = field(default=DiagNoise((0.1, 0.1)))
    motion: DiagNoise = field(default=DiagNoise((1e-4, 1e-4, 2e-5)))
    obstacle: DiagNoise = field(default=DiagNoise((0.01,)))


@dataclass(frozen=True)
class Obstacle:
    """
    Point obstacle.
    """
    center: Tuple[float, float]
    id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, 'center', (float(self.center[0]), float(self.center[1])))
        if not _utils.is_finite(*self.center):
            raise Error(f'non-finite obstacle center {self.center}', Error.Code.INVALID_PROBLEM, 'Obstacle')


@dataclass(frozen=True)
class ReferencePath:
    """
    Reference centroid poses x_0..x_N and controls u_0..u_{N-1}.
    """
    poses: Tuple[Pose2, ...]
    controls: Tuple[Control2, ...]
    ts: float

    def __post_init__(self) -> None:
        object.__setattr__(self, 'poses', tuple(self.poses))
        object.__setattr__(self, 'controls', tuple(self.controls))
        if len(self.controls) < 1 or len(self.poses) != len(self.controls) + 1:
            raise Error(f'{len(self.poses)} poses and {len(self.controls)} controls', Error.Code.INVALID_PROBLEM, 'ReferencePath')
        if not self.ts > 0.0:
            raise Error(f'time step must be > 0, got {self.ts}', Error.Code.INVALID_PROBLEM, 'ReferencePath')

    @property
    def n(self) -> int:
        """Number of steps N"""
        return len(self.controls)


@dataclass(frozen=True)
class PlanProblem:
    """
    Everything the planner needs for one mission.

    lookahead is the index of the predicted pose used as phase target,
    and the number of last steps that aim at the goal instead.
    rotation_budget_factor times N bounds the rotation steps, 0 disables
    the bound. final_approach_attempts bounds the re-plans towards the goal
    once the reference is exhausted. With reverse_driving a target behind
    the centroid is reached backwards instead of turning around.
    """
    reference: ReferencePath
    formation: Formation
    obstacles: Tuple[Obstacle, ...] = field(default=())
    radius: float = field(default=0.5)
    noise: NoiseModels = field(default_factory=NoiseModels)
    lm: LMParams = field(default_factory=LMParams)
    v_max: float = field(default=1.5)
    omega_max: float = field(default=2.0)
    goal_tol: float = field(default=0.05)
    heading_tol: float = field(default=0.05)
    lookahead: int = field(default=3)
    rotation_budget_factor: int = field(default=3)
    final_approach_attempts: int = field(default=2)
    reverse_driving: bool = field(default=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'obstacles', tuple(self.obstacles))
        if not self.radius > 0.0:
            raise Error(f'safety radius must be > 0, got {self.radius}', Error.Code.INVALID_PROBLEM, 'PlanProblem')
        if not self.goal_tol > 0.0 or not self.heading_tol > 0.0:
            raise Error('tolerances must be > 0', Error.Code.INVALID_PROBLEM, 'PlanProblem')
        if not self.v_max > 0.0 or not self.omega_max > 0.0:
            raise Error('actuator limits must be > 0', Error.Code.INVALID_PROBLEM, 'PlanProblem')
        if self.lookahead < 1 or self.rotation_budget_factor < 0 or self.final_approach_attempts < 0:
            raise Error('invalid loop settings', Error.Code.INVALID_PROBLEM, 'PlanProblem')
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise Error(f'duplicate obstacle ids {ids}', Error.Code.INVALID_PROBLEM, 'PlanProblem')

    @property
    def n(self) -> int:
        """Number of steps N of the reference"""
        return self.reference.n

    @property
    def ts(self) -> float:
        """Time step"""
        return self.reference.ts

    @property
    def goal(self) -> Tuple[float, float]:
        """Goal position"""
        last = self.reference.poses[-1]
        return (last.x, last.y)

    @functools.cached_property
    def horizon(self) -> 'Horizon':
        """Packed step-0 graph, sliced by plan_step()"""
        return Horizon(self)


def make_initial_path(start: Pose2, goal: Sequence[float], n: int, ts: float, v_max: float = math.inf) -> ReferencePath:
    """
    Straight line from start to goal, uniformly spaced, at constant speed.
    """
    if n < 1 or not ts > 0.0:
        raise Error(f'need N >= 1 and Ts > 0, got N={n}, Ts={ts}', Error.Code.INVALID_PROBLEM, 'make_initial_path')
    dx = float(goal[0]) - start.x
    dy = float(goal[1]) - start.y
    length = math.hypot(dx, dy)
    speed = length / (n * ts)
    if speed > v_max:
        raise Error(f'speed {speed:.3f} m/s exceeds v_max={v_max} with N={n}', Error.Code.INFEASIBLE_SCHEDULE, 'make_initial_path')
    heading = math.atan2(dy, dx) if length > 0.0 else start.theta
    poses = tuple(Pose2(start.x + dx * i / n, start.y + dy * i / n, heading) for i in range(n + 1))
    return ReferencePath(poses, (Control2(speed, 0.0),) * n, ts)


def _check_step(p: PlanProblem, k: int, func: str) -> None:
    if not 0 <= k < p.n:
        raise Error(f'step {k} outside [0, {p.n})', Error.Code.INVALID_PROBLEM, func)


def build_step_graph(p: PlanProblem, k: int, current: Pose2) -> Tuple[FactorGraph, Values]:
    """
    Graph from step k to the terminal state N, anchored on @p current.

    Variables are registered as x_k, u_k, x_{k+1}, ..., which keeps the
    Hessian banded. Initial values are the reference, with x_k replaced by
    @p current.
    """
    _check_step(p, k, 'build_step_graph')
    n = p.n
    ref = p.reference
    graph = FactorGraph()
    graph.add(factors.anchor(X(k), current))
    for i in range(k, n + 1):
        noise = p.noise.terminal if i == n else p.noise.state
        graph.add(factors.pose_prior(X(i), ref.poses[i], noise))
        if i < n:
            graph.add(factors.control_prior(U(i), ref.controls[i], p.noise.control))
            graph.add(factors.motion(X(i), U(i), X(i + 1), ref.ts, p.noise.motion))
    for i in range(k + 1, n + 1):
        for o in p.obstacles:
            graph.add(factors.obstacle(X(i), o.center, p.radius, p.noise.obstacle, o.id))
    init = Values()
    init.insert(X(k), current)
    for i in range(k + 1, n + 1):
        init.insert(X(i), ref.poses[i])
    for i in range(k, n):
        init.insert(U(i), ref.controls[i])
    return graph, init


# Tangent columns per step: x_i then u_i
_STRIDE = 5
# A motion factor spans x_i, u_i and x_{i+1}
_BANDWIDTH = 7


class Horizon:
    """
    The step-0 graph of a problem packed into arrays.

    The step-k graph is the tail of every batch moved back by k strides,
    plus an anchor on the measured centroid. Factors, ordering and
    initial values are the same as build_step_graph().
    """

    def __init__(self, p: PlanProblem) -> None:
        n = p.n
        dim = _STRIDE * n + 3
        x_cols = _STRIDE * np.arange(n + 1)[:, None] + np.arange(3)
        u_cols = _STRIDE * np.arange(n)[:, None] + 3 + np.arange(2)
        vector = np.empty(dim)
        vector[x_cols] = [[q.x, q.y, q.theta] for q in p.reference.poses]
        vector[u_cols] = [[c.v, c.omega] for c in p.reference.controls]
        pose_sigmas = np.tile(p.noise.state.sigmas, (n + 1, 1))
        pose_sigmas[-1] = p.noise.terminal.sigmas
        centers = np.array([o.center for o in p.obstacles], dtype=float).reshape(-1, 2)
        count = len(centers)
        batches = [
            pack_batch(FactorKind.POSE_PRIOR, [x_cols], (vector[x_cols],), pose_sigmas, dim, _BANDWIDTH),
            pack_batch(FactorKind.CONTROL_PRIOR, [u_cols], (vector[u_cols],), np.tile(p.noise.control.sigmas, (n, 1)), dim, _BANDWIDTH),
            pack_batch(FactorKind.MOTION, [x_cols[:-1], u_cols, x_cols[1:]], (np.full(n, p.ts),), np.tile(p.noise.motion.sigmas, (n, 1)), dim, _BANDWIDTH),
        ]
        if count:
            batches.append(pack_batch(
                FactorKind.OBSTACLE,
                [np.repeat(x_cols[1:], count, axis=0)],
                (np.tile(centers, (n, 1)), np.full(n * count, p.radius)),
                np.tile(p.noise.obstacle.sigmas, (n * count, 1)),
                dim,
                _BANDWIDTH,
            ))
        keys: List[factors.Key] = []
        for i in range(n):
            keys += [X(i), U(i)]
        keys.append(X(n))
        offsets = np.empty(2 * n + 1, dtype=int)
        offsets[0::2] = x_cols[:, 0]
        offsets[1::2] = u_cols[:, 0]
        angle = np.zeros(dim, dtype=bool)
        angle[x_cols[:, 2]] = True
        self.__dim = dim
        self.__vector = vector
        self.__batches = batches
        self.__obstacles = count
        self.__keys = tuple(keys)
        self.__offsets = offsets
        self.__angle = angle
        self.__anchor_sigmas = DiagNoise.isotropic(3, factors.ANCHOR_VARIANCE).sigmas[None, :]

    def window(self, k: int, current: Pose2) -> Tuple[PackedGraph, np.ndarray]:
        """
        Step-k graph and its initial vector.
        """
        shift = _STRIDE * k
        dim = self.__dim - shift
        starts: Dict[FactorKind, int] = {
            FactorKind.POSE_PRIOR: k,
            FactorKind.CONTROL_PRIOR: k,
            FactorKind.MOTION: k,
            FactorKind.OBSTACLE: k * self.__obstacles,
        }
        batches = []
        first = 0
        for b in self.__batches:
            part = b.shifted(starts[b.kind], shift, _BANDWIDTH, first)
            first += len(part.sigmas)
            batches.append(part)
        here = current.vector()
        batches.append(pack_batch(FactorKind.ANCHOR, [np.arange(3)[None, :]], (here[None, :],), self.__anchor_sigmas, dim, _BANDWIDTH, first))
        keys = self.__keys[2 * k:]
        ordering = Ordering(keys, dict(zip(keys, (self.__offsets[2 * k:] - shift).tolist())), dim, self.__angle[shift:])
        vec = self.__vector[shift:].copy()
        vec[:3] = here
        return PackedGraph(ordering, batches, _BANDWIDTH), vec

    @staticmethod
    def poses(vec: np.ndarray) -> List[Pose2]:
        """Poses x_k..x_N of a step-k vector"""
        return [Pose2(x, y, theta) for x, y, theta in np.append(vec, [0.0, 0.0]).reshape(-1, _STRIDE)[:, :3].tolist()]


# Chord below which the target heading is used
_MIN_CHORD = 1e-3


def heading_error(current: Pose2, target: Pose2, min_chord: float = _MIN_CHORD, reverse: bool = False) -> float:
    """
    Wrapped heading change needed to move from @p current towards
    @p target.

    Below @p min_chord the target heading is used. With @p reverse a
    target behind the centroid is reached driving backwards, so the error
    never exceeds pi/2 in magnitude.
    """
    dx = target.x - current.x
    dy = target.y - current.y
    if math.hypot(dx, dy) < min_chord:
        return wrap_angle(target.theta - current.theta)
    err = wrap_angle(math.atan2(dy, dx) - current.theta)
    if reverse and abs(err) > math.pi / 2.0:
        err = wrap_angle(err + math.pi)
    return err


def decide_phase(current: Pose2, target: Pose2, heading_tol: float, min_chord: float = _MIN_CHORD, reverse: bool = False) -> Phase:
    """
    Rotate towards the target if the heading error exceeds the tolerance,
    translate otherwise.
    """
    err = heading_error(current, target, min_chord, reverse)
    if abs(err) > heading_tol:
        return Phase.rotate(_utils.sign(err))
    return Phase.translate()


@dataclass(frozen=True)
class StepResult:
    """
    Phase-consistent centroid control of one step.

    predicted starts with the current pose.
    """
    control: Control2
    phase: Phase
    predicted: Tuple[Pose2, ...]
    stats: SolveStats
    event: Optional[EventKind] = field(default=None)


def finalize_step(
    p: PlanProblem,
    k: int,
    current: Pose2,
    solution: Control2,
    predicted: Sequence[Pose2],
    stats: SolveStats,
    event: Optional[EventKind] = None,
) -> StepResult:
    """
    Phase decision, projection and clamping shared by every solver.

    The phase target is the predicted pose lookahead steps ahead; in the
    last lookahead steps it is the goal, and the translation is capped so
    as not to pass the goal along the current heading.
    """
    end_game = p.n - k <= p.lookahead
    target = p.reference.poses[-1] if end_game else predicted[min(p.lookahead, len(predicted) - 1)]
    phase = decide_phase(current, target, p.heading_tol, reverse=p.reverse_driving)
    if phase.is_rotate:
        omega = _utils.clamp(heading_error(current, target, reverse=p.reverse_driving) / p.ts, p.omega_max)
        return StepResult(Control2(0.0, omega), phase, tuple(predicted), stats, event)
    v = _utils.clamp(solution.v, p.v_max)
    if end_game:
        ahead = (target.x - current.x) * math.cos(current.theta) + (target.y - current.y) * math.sin(current.theta)
        v = _utils.clamp(v, abs(ahead) / p.ts)
    return StepResult(Control2(v, 0.0), phase, tuple(predicted), stats, event)


def plan_step(p: PlanProblem, k: int, current: Pose2) -> StepResult:
    """
    Solve the step-k graph and extract the control to apply.

    The graph is the one of build_step_graph(), sliced from the problem's
    packed horizon. If the solver diverges the reference control is used
    and the step carries a SOLVER_DIVERGED event.
    """
    _check_step(p, k, 'plan_step')
    graph, init = p.horizon.window(k, current)
    event = None
    try:
        vec, stats = lm_optimize_vector(graph, init, p.lm)
    except SolverDivergedError as ex:
        _log.warning('solver diverged at step %d, applying reference control: %s', k, ex.message)
        vec, stats = init, ex.stats
        event = EventKind.SOLVER_DIVERGED
    predicted = Horizon.poses(vec)
    return finalize_step(p, k, current, Control2(float(vec[3]), float(vec[4])), predicted, stats, event)


StepFunction = Callable[[PlanProblem, int, Pose2], StepResult]


@dataclass
class MissionLog:
    """
    Append-only record of a mission.

    The per-step lists share one length; the initial state is stored
    apart. reference_index is the reference pose each executed centroid
    corresponds to.
    """
    initial_centroid: Pose2
    initial_robots: Tuple[Pose2, ...]
    executed_centroid: List[Pose2] = field(default_factory=list)
    executed_robots: List[Tuple[Pose2, ...]] = field(default_factory=list)
    centroid_controls: List[Control2] = field(default_factory=list)
    applied_controls: List[Tuple[Control2, ...]] = field(default_factory=list)
    solve_stats: List[SolveStats] = field(default_factory=list)
    phases: List[Phase] = field(default_factory=list)
    reference_index: List[int] = field(default_factory=list)
    active: List[FrozenSet[int]] = field(default_factory=list)
    step_times: List[float] = field(default_factory=list)
    events: List[Tuple[int, EventKind]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.executed_centroid)

    def record(
        self,
        centroid: Pose2,
        robots: Sequence[Pose2],
        centroid_control: Control2,
        controls: Sequence[Control2],
        stats: SolveStats,
        phase: Phase,
        reference_index: int,
        active: FrozenSet[int],
        step_time: float,
    ) -> None:
        """Append one executed step"""
        self.executed_centroid.append(centroid)
        self.executed_robots.append(tuple(robots))
        self.centroid_controls.append(centroid_control)
        self.applied_controls.append(tuple(controls))
        self.solve_stats.append(stats)
        self.phases.append(phase)
        self.reference_index.append(reference_index)
        self.active.append(active)
        self.step_times.append(step_time)

    def add_event(self, kind: EventKind) -> None:
        """Log an event at the current step"""
        self.events.append((len(self), kind))

    @property
    def final_centroid(self) -> Pose2:
        """Last executed centroid, or the initial one"""
        return self.executed_centroid[-1] if self.executed_centroid else self.initial_centroid


class MissionAbortedError(Error):
    """
    Raised when no robot is left. Carries the partial log.
    """

    log: MissionLog

    def __init__(self, message: str, log: MissionLog) -> None:
        self.log = log
        super().__init__(message, Error.Code.MISSION_ABORTED, 'run_mission')


def _approach_problem(p: PlanProblem, current: Pose2) -> PlanProblem:
    nominal = p.reference.controls[0].v
    if nominal <= 0.0:
        nominal = 0.5 * p.v_max
    distance = current.distance_to(p.goal)
    steps = max(1, math.ceil(distance / (nominal * p.ts)))
    return dataclasses.replace(p, reference=make_initial_path(current, p.goal, steps, p.ts, p.v_max))


def _measure(world: Simulator, log: MissionLog) -> Pose2:
    try:
        return world.measure_centroid()
    except kinematics.Error as ex:
        if ex.code is not kinematics.Error.Code.MISSION:
            raise
        raise MissionAbortedError('all robots failed', log) from ex


def run_mission(p: PlanProblem, world: Simulator, step_fn: StepFunction = plan_step) -> MissionLog:
    """
    Closed-loop mission from the world's current state to the goal.

    The reference index k advances on translation steps only. The loop
    ends at the goal, when the reference and the final approach attempts
    are exhausted, or when the rotation budget is spent.
    """
    current = world.measure_centroid()
    log = MissionLog(current, world.robot_poses)
    _log.info('mission start: %d steps, %d robots, %d obstacles', p.n, len(p.formation), len(p.obstacles))
    problem = p
    k = 0
    approach = 0
    rotations = 0
    budget = p.rotation_budget_factor * p.n
    while True:
        if current.distance_to(p.goal) <= p.goal_tol:
            log.add_event(EventKind.GOAL_REACHED)
            break
        if k >= problem.n:
            if approach >= p.final_approach_attempts:
                break
            approach += 1
            problem = _approach_problem(p, current)
            k = 0
            log.add_event(EventKind.FINAL_APPROACH)
            _log.info('final approach %d: %.3f m to goal, %d steps', approach, current.distance_to(p.goal), problem.n)
            continue
        if rotations >= budget and budget > 0:
            _log.warning('rotation budget of %d steps exhausted', budget)
            log.add_event(EventKind.ROTATION_BUDGET)
            break
        failed = world.failed
        with _utils.stopwatch() as watch:
            result = step_fn(problem, k, current)
            controls = kinematics.distribute_controls(result.control, p.formation, result.phase, failed)
            headings = [kinematics.required_robot_heading(current.theta, slot, result.phase) for slot in p.formation.slots]
        if result.event is not None:
            log.add_event(result.event)
        world.step(controls, headings)
        for action in world.last_events:
            log.events.append((len(log) + 1, action.kind))
        current = _measure(world, log)
        if result.phase.is_rotate:
            rotations += 1
        else:
            k += 1
        log.record(
            current,
            world.robot_poses,
            result.control,
            controls,
            result.stats,
            result.phase,
            k if approach == 0 else p.n,
            frozenset(range(len(p.formation))) - world.failed,
            watch.elapsed,
        )
    _log.info('mission end: %d steps, %.4f m to goal', len(log), log.final_centroid.distance_to(p.goal))
    return log
