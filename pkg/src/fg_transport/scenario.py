"""
Scenario configuration: JSON files, validation and experiment presets.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum, unique
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union

from fg_transport import error
from fg_transport.baseline_mpc import MpcParams
from fg_transport.core_types import DiagNoise, Pose2
from fg_transport.graph_solver import LMParams
from fg_transport.kinematics import Formation, FormationSlot
from fg_transport.planner import NoiseModels, Obstacle, PlanProblem, make_initial_path
from fg_transport.sim_world import Action, Disturb, EventScript, Fail, NoiseOn, ScriptedEvent, Simulator


class Error(error.Error):
    """
    Raised on invalid scenario files.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of scenario
        """
        INVALID_CONFIG = -1
        UNKNOWN_KEY = -2
        IO = -3

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


@unique
class Solver(Enum):
    """
    Step solver of a mission
    """
    OURS = 'ours'
    MPC_P = 'mpc_p'
    MPC_C = 'mpc_c'


@dataclass(frozen=True)
class NoiseConfig:
    """
    Factor variances, as in a scenario file.
    """
    state: Tuple[float, float, float] = field(default=(0.1, 0.1, 0.02))
    terminal: Tuple[float, float, float] = field(default=(0.1, 0.1, 0.02))
    control: Tuple[float, float] = field(default=(0.1, 0.1))
    motion: Tuple[float, float, float] = field(default=(1e-4, 1e-4, 2e-5))
    obstacle: float = field(default=0.01)

    def __post_init__(self) -> None:
        self.models()

    def models(self) -> NoiseModels:
        """Noise models of the planner"""
        return NoiseModels(
            DiagNoise(tuple(self.state)),
            DiagNoise(tuple(self.terminal)),
            DiagNoise(tuple(self.control)),
            DiagNoise(tuple(self.motion)),
            DiagNoise((self.obstacle,)),
        )


# Obstacle points of the corridor experiment
EXPERIMENT1_OBSTACLES: Tuple[Tuple[float, float], ...] = ((1.0, 0.4), (2.0, -0.4), (3.0, -0.6), (4.0, 0.7), (5.0, 0.4))

# Corridor obstacles used by the obstacle sweeps, first five as above
SEVEN_OBSTACLES: Tuple[Tuple[float, float], ...] = EXPERIMENT1_OBSTACLES + ((6.0, -0.4), (0.0, -0.45))


def obstacles_from_points(points: Tuple[Tuple[float, float], ...]) -> Tuple[Obstacle, ...]:
    """Obstacles numbered from 1"""
    return tuple(Obstacle(point, i + 1) for i, point in enumerate(points))


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Complete description of a mission.

    With an empty @p slots the formation is symmetric with @p robots slots
    at @p lever_arm.
    """
    name: str = field(default='scenario')
    start: Tuple[float, float, float] = field(default=(-2.0, 0.0, 0.0))
    goal: Tuple[float, float] = field(default=(7.0, 0.0))
    n: int = field(default=90)
    ts: float = field(default=0.1)
    robots: int = field(default=4)
    lever_arm: float = field(default=0.35)
    slots: Tuple[Tuple[float, float], ...] = field(default=())
    obstacles: Tuple[Obstacle, ...] = field(default=())
    radius: float = field(default=0.5)
    v_max: float = field(default=1.5)
    omega_max: float = field(default=2.0)
    goal_tol: float = field(default=0.05)
    heading_tol: float = field(default=0.05)
    lookahead: int = field(default=3)
    final_approach_attempts: int = field(default=2)
    reverse_driving: bool = field(default=False)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    lm: LMParams = field(default_factory=LMParams)
    mpc_p: MpcParams = field(default_factory=MpcParams.penalty)
    mpc_c: MpcParams = field(default_factory=MpcParams.constrained)
    solver: Solver = field(default=Solver.OURS)
    events: Tuple[ScriptedEvent, ...] = field(default=())
    seed: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'obstacles', tuple(self.obstacles))
        object.__setattr__(self, 'events', tuple(self.events))
        object.__setattr__(self, 'slots', tuple(tuple(s) for s in self.slots))
        if self.n < 1 or not self.ts > 0.0 or not self.radius > 0.0:
            raise Error(f'need N >= 1, Ts > 0 and R > 0 (N={self.n}, Ts={self.ts}, R={self.radius})', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
        if self.robots < 1 or self.lever_arm < 0.0:
            raise Error(f'invalid formation: {self.robots} robots, lever arm {self.lever_arm}', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise Error(f'duplicate obstacle ids {ids}', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
        if self.seed < 0:
            raise Error(f'seed must be >= 0, got {self.seed}', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
        EventScript(self.events)

    def formation(self) -> Formation:
        """Explicit slots, or the symmetric formation"""
        if self.slots:
            return Formation(tuple(FormationSlot(l, psi) for l, psi in self.slots))
        return Formation.symmetric(self.robots, self.lever_arm)

    def start_pose(self) -> Pose2:
        """Initial centroid pose"""
        return Pose2(*self.start)

    def problem(self) -> PlanProblem:
        """Planning problem with the straight-line reference"""
        reference = make_initial_path(self.start_pose(), self.goal, self.n, self.ts, self.v_max)
        return PlanProblem(
            reference,
            self.formation(),
            self.obstacles,
            self.radius,
            self.noise.models(),
            self.lm,
            self.v_max,
            self.omega_max,
            self.goal_tol,
            self.heading_tol,
            self.lookahead,
            final_approach_attempts=self.final_approach_attempts,
            reverse_driving=self.reverse_driving,
        )

    def world(self, seed: Optional[int] = None) -> Simulator:
        """Simulator at the start pose"""
        return Simulator.create(
            self.formation(),
            self.start_pose(),
            self.ts,
            self.seed if seed is None else seed,
            EventScript(self.events),
        )

    def with_overrides(self, **changes: Any) -> 'ScenarioConfig':
        """Copy with some fields replaced"""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible representation"""
        return {
            'name': self.name,
            'start': list(self.start),
            'goal': list(self.goal),
            'n': self.n,
            'ts': self.ts,
            'robots': self.robots,
            'lever_arm': self.lever_arm,
            'slots': [list(s) for s in self.slots],
            'obstacles': [{'x': o.center[0], 'y': o.center[1], 'id': o.id} for o in self.obstacles],
            'radius': self.radius,
            'v_max': self.v_max,
            'omega_max': self.omega_max,
            'goal_tol': self.goal_tol,
            'heading_tol': self.heading_tol,
            'lookahead': self.lookahead,
            'final_approach_attempts': self.final_approach_attempts,
            'reverse_driving': self.reverse_driving,
            'noise': _plain(dataclasses.asdict(self.noise)),
            'lm': dataclasses.asdict(self.lm),
            'mpc_p': dataclasses.asdict(self.mpc_p),
            'mpc_c': dataclasses.asdict(self.mpc_c),
            'solver': self.solver.value,
            'events': [_event_to_dict(e) for e in self.events],
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """
        Build from a JSON document, rejecting unknown keys at every level.
        """
        _check_keys(data, {f.name for f in dataclasses.fields(cls)}, 'scenario')
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key == 'noise':
                kwargs[key] = _build(NoiseConfig, value, 'noise')
            elif key == 'lm':
                kwargs[key] = _build(LMParams, value, 'lm')
            elif key in ('mpc_p', 'mpc_c'):
                base = MpcParams.penalty() if key == 'mpc_p' else MpcParams.constrained()
                _check_keys(value, {f.name for f in dataclasses.fields(MpcParams)}, key)
                kwargs[key] = _guard(lambda: dataclasses.replace(base, **value), key)
            elif key == 'obstacles':
                kwargs[key] = tuple(_obstacle(o, f'obstacles[{i}]') for i, o in enumerate(value))
            elif key == 'events':
                kwargs[key] = tuple(_event(e, f'events[{i}]', data.get('ts', 0.1)) for i, e in enumerate(value))
            elif key == 'solver':
                kwargs[key] = _guard(lambda: Solver(value), 'solver')
            elif key in ('start', 'goal'):
                kwargs[key] = tuple(float(v) for v in value)
            elif key == 'slots':
                kwargs[key] = tuple((float(s[0]), float(s[1])) for s in value)
            else:
                kwargs[key] = value
        return _guard(lambda: cls(**kwargs), 'scenario')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ScenarioConfig':
        """Read a JSON scenario file"""
        try:
            with open(path, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as ex:
            raise Error(f'cannot read {path}: {ex}', Error.Code.IO, 'ScenarioConfig.load') from ex
        if not isinstance(data, dict):
            raise Error(f'{path}: top level must be an object', Error.Code.INVALID_CONFIG, 'ScenarioConfig.load')
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> None:
        """Write as a JSON scenario file"""
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=2)
                f.write('\n')
        except OSError as ex:
            raise Error(f'cannot write {path}: {ex}', Error.Code.IO, 'ScenarioConfig.save') from ex

    def config_hash(self) -> str:
        """
        SHA-256 of every field but name and seed.
        """
        data = self.to_dict()
        del data['name']
        del data['seed']
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


_T = TypeVar('_T')


def _plain(data: Dict[str, Any]) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


def _check_keys(data: Any, allowed: set, where: str) -> None:
    if not isinstance(data, dict):
        raise Error(f'{where} must be an object', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise Error(f'unknown keys in {where}: {unknown}', Error.Code.UNKNOWN_KEY, 'ScenarioConfig')


def _guard(build, where: str):
    try:
        return build()
    except Error:
        raise
    except (error.Error, ValueError, TypeError, KeyError, IndexError) as ex:
        raise Error(f'invalid {where}: {ex}', Error.Code.INVALID_CONFIG, 'ScenarioConfig') from ex


def _build(cls: Type[_T], data: Any, where: str) -> _T:
    _check_keys(data, {f.name for f in dataclasses.fields(cls)}, where)  # type: ignore
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return _guard(lambda: cls(**values), where)


def _obstacle(data: Any, where: str) -> Obstacle:
    _check_keys(data, {'x', 'y', 'id'}, where)
    return _guard(lambda: Obstacle((float(data['x']), float(data['y'])), int(data['id'])), where)


_ACTIONS: Dict[str, Type[Any]] = {'disturb': Disturb, 'fail': Fail, 'noise_on': NoiseOn}


def _event(data: Any, where: str, ts: float) -> ScriptedEvent:
    _check_keys(data, {'step', 'time', *_ACTIONS}, where)
    kinds = [k for k in _ACTIONS if k in data]
    triggers = [k for k in ('step', 'time') if k in data]
    if len(kinds) != 1 or len(triggers) != 1:
        raise Error(f'{where} needs one trigger and one action', Error.Code.INVALID_CONFIG, 'ScenarioConfig')
    action: Action = _build(_ACTIONS[kinds[0]], data[kinds[0]], f'{where}.{kinds[0]}')
    if 'step' in data:
        return _guard(lambda: ScriptedEvent(int(data['step']), action), where)
    return _guard(lambda: ScriptedEvent.at_time(float(data['time']), ts, action), where)


def _event_to_dict(e: ScriptedEvent) -> Dict[str, Any]:
    name = next(k for k, v in _ACTIONS.items() if isinstance(e.action, v))
    return {'step': e.step, name: dataclasses.asdict(e.action)}


def experiment1(**changes: Any) -> ScenarioConfig:
    """
    Corridor from (-2, 0) to (7, 0) with five obstacles.
    """
    config = ScenarioConfig(name='experiment1', obstacles=obstacles_from_points(EXPERIMENT1_OBSTACLES))
    return config.with_overrides(**changes)


def gazebo_surrogate(**changes: Any) -> ScenarioConfig:
    """
    Obstacle-free diagonal from (0, 0) to (5, 3).
    """
    config = ScenarioConfig(
        name='gazebo_surrogate',
        start=(0.0, 0.0, math.atan2(3.0, 5.0)),
        goal=(5.0, 3.0),
        n=70,
    )
    return config.with_overrides(**changes)


# Obstacles of the short hardware course from near (0, 0) to (3, 0)
HARDWARE_OBSTACLES: Tuple[Tuple[float, float], ...] = ((1.0, 0.15), (2.0, -0.15))

_HARDWARE_CASES = ('disturbance', 'obstacles', 'failure')


def hardware_trial(case: str, **changes: Any) -> ScenarioConfig:
    """
    Slow 3 m mission at lab scale, 40 s long with a 1 cm goal tolerance.

    @p case is 'disturbance' (40 cm sideways push at 30 s), 'obstacles',
    or 'failure' (one robot lost while passing the first obstacle).
    """
    if case not in _HARDWARE_CASES:
        raise Error(f'unknown hardware case {case!r}, expected one of {_HARDWARE_CASES}', Error.Code.INVALID_CONFIG, 'hardware_trial')
    config = ScenarioConfig(
        name=f'hardware_{case}',
        start=(0.0, 0.0, 0.0),
        goal=(3.0, 0.0),
        n=400,
        ts=0.1,
        lever_arm=0.25,
        radius=0.3,
        v_max=0.26,
        omega_max=1.8,
        goal_tol=0.01,
    )
    if case == 'disturbance':
        config = config.with_overrides(events=(ScriptedEvent.at_time(30.0, config.ts, Disturb(dy=0.4)),))
    else:
        config = config.with_overrides(obstacles=obstacles_from_points(HARDWARE_OBSTACLES))
    if case == 'failure':
        config = config.with_overrides(events=(ScriptedEvent.at_time(12.0, config.ts, Fail(2)),))
    return config.with_overrides(**changes)
