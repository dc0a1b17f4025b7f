"""
Short-horizon MPC baselines.

MPC-P keeps states as decision variables and penalizes motion-model
defects and obstacle proximity. MPC-C eliminates the states by single
shooting and enforces obstacle clearance with an augmented Lagrangian.
Both use L-BFGS-B with analytic gradients as inner solver.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from fg_transport import factors, _utils
from fg_transport.core_types import Control2, DiagNoise, Pose2, wrap_angles
from fg_transport.factors import U, X
from fg_transport.graph_solver import ConvergedBy, FactorGraph, SolveStats, Values, cost_gradient
from fg_transport.planner import PlanProblem, StepResult, finalize_step
from fg_transport.sim_world import EventKind

_log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class MpcParams:
    """
    Weights, tolerances and iteration caps of the MPC baselines.

    A weight w scales a squared residual, like a variance of 1/w.
    """
    horizon: int = field(default=2)
    w_state: float = field(default=1.0)
    w_terminal: float = field(default=1.0)
    w_control: float = field(default=1.0)
    w_motion: float = field(default=0.1)
    w_obstacle: float = field(default=1.0)
    rel_tol: float = field(default=1e-2)
    abs_tol: float = field(default=1e-2)
    err_tol: float = field(default=1e-2)
    max_inner_iters: int = field(default=100)
    max_outer_iters: int = field(default=20)
    constraint_tol: float = field(default=1e-4)
    rho_init: float = field(default=1.0)
    rho_factor: float = field(default=10.0)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError('Horizon must be >= 1.')
        if min(self.w_state, self.w_terminal, self.w_control, self.w_motion, self.w_obstacle) < 0.0:
            raise ValueError('Weights must be >= 0.')
        if min(self.rel_tol, self.abs_tol, self.err_tol, self.constraint_tol, self.rho_init) <= 0.0:
            raise ValueError('Tolerances and rho_init must be > 0.')
        if self.rho_factor <= 1.0 or self.max_inner_iters < 1 or self.max_outer_iters < 1:
            raise ValueError('Invalid iteration settings.')

    @classmethod
    def penalty(cls) -> 'MpcParams':
        """Best parameters of MPC-P"""
        return cls()

    @classmethod
    def constrained(cls) -> 'MpcParams':
        """Best parameters of MPC-C"""
        return cls(
            w_terminal=1e3,
            w_control=1e-3,
            w_motion=0.0,
            w_obstacle=0.0,
            rel_tol=1e-4,
            abs_tol=1e-4,
            err_tol=1e-4,
        )


@dataclass(frozen=True)
class MpcDecision:
    """
    Controls u_k.. and states x_{k+1}.. of the window.

    converged is False after an inner solver failure or when the
    constraint violation max_violation stayed above tolerance.
    """
    controls: Tuple[Control2, ...]
    states: Tuple[Pose2, ...]
    converged: bool = field(default=True)
    max_violation: float = field(default=0.0)


def _window(p: PlanProblem, k: int, params: MpcParams) -> int:
    if not 0 <= k < p.n:
        raise ValueError(f'Step {k} outside [0, {p.n}).')
    return min(params.horizon, p.n - k)


def _weighted(dim: int, weight: float) -> DiagNoise:
    return DiagNoise.isotropic(dim, 1.0 / weight)


def mpc_p_graph(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> Tuple[FactorGraph, Values]:
    """
    Window of the penalty formulation as a factor graph.

    Zero weights drop the corresponding terms.
    """
    if params is None:
        params = MpcParams.penalty()
    h = _window(p, k, params)
    ref = p.reference
    graph = FactorGraph()
    graph.add(factors.anchor(X(k), current))
    for i in range(k + 1, k + h + 1):
        weight = params.w_terminal if i == k + h else params.w_state
        if weight > 0.0:
            graph.add(factors.pose_prior(X(i), ref.poses[i], _weighted(3, weight)))
    for i in range(k, k + h):
        if params.w_control > 0.0:
            graph.add(factors.control_prior(U(i), ref.controls[i], _weighted(2, params.w_control)))
        if params.w_motion > 0.0:
            graph.add(factors.motion(X(i), U(i), X(i + 1), ref.ts, _weighted(3, params.w_motion)))
    if params.w_obstacle > 0.0:
        for i in range(k + 1, k + h + 1):
            for o in p.obstacles:
                graph.add(factors.obstacle(X(i), o.center, p.radius, _weighted(1, params.w_obstacle), o.id))
    init = Values()
    init.insert(X(k), current)
    for i in range(k + 1, k + h + 1):
        init.insert(X(i), ref.poses[i])
    for i in range(k, k + h):
        init.insert(U(i), ref.controls[i])
    return graph, init


class _PenaltyWindow:
    """
    MPC-P objective over the free variables, x_k held at the current pose.
    """

    def __init__(self, graph: FactorGraph, init: Values, k: int) -> None:
        self.graph = graph
        self.ordering = graph.ordering()
        for key in init.keys():
            if key not in self.ordering.offsets:
                raise ValueError(f'Variable {key} has no factor.')
        self.base = init.to_vector(self.ordering)
        fixed = set(self.ordering.indices(X(k)).tolist())
        self.free = np.array([i for i in range(self.ordering.dim) if i not in fixed], dtype=int)

    def full(self, z: np.ndarray) -> np.ndarray:
        vec = self.base.copy()
        vec[self.free] = z
        return vec

    def __call__(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        err, grad = cost_gradient(self.graph, self.full(z))
        return err, grad[self.free]


def mpc_p_objective(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> Tuple[Objective, np.ndarray]:
    """
    MPC-P cost and gradient as a function of the stacked free variables,
    together with the initial point.
    """
    graph, init = mpc_p_graph(p, k, current, params)
    window = _PenaltyWindow(graph, init, k)
    return window, window.base[window.free]


def _minimize(objective: Objective, z0: np.ndarray, params: MpcParams) -> scipy.optimize.OptimizeResult:
    return scipy.optimize.minimize(
        objective,
        z0,
        jac=True,
        method='L-BFGS-B',
        options={'maxiter': params.max_inner_iters, 'ftol': params.rel_tol, 'gtol': params.abs_tol},
    )


def _converged_by(result: scipy.optimize.OptimizeResult) -> ConvergedBy:
    if result.status == 1:
        return ConvergedBy.MAX_ITERS
    message = str(result.message).upper()
    return ConvergedBy.ABS if 'PGTOL' in message or 'GRADIENT' in message else ConvergedBy.REL


def solve_mpc_p(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> Tuple[MpcDecision, SolveStats]:
    """
    Penalty MPC over the window starting at step k.
    """
    if params is None:
        params = MpcParams.penalty()
    graph, init = mpc_p_graph(p, k, current, params)
    window = _PenaltyWindow(graph, init, k)
    with _utils.stopwatch() as watch:
        z0 = window.base[window.free]
        f0, _ = window(z0)
        converged = True
        if f0 < params.err_tol:
            z, f, iterations, by = z0, f0, 0, ConvergedBy.ERR
        else:
            result = _minimize(window, z0, params)
            z, f, iterations, by = result.x, float(result.fun), int(result.nit), _converged_by(result)
            if not result.success:
                _log.warning('MPC-P inner solver at step %d: %s', k, result.message)
                converged = False
                if f > f0:
                    z, f = z0, f0
    values = Values.from_vector(window.ordering, window.full(z))
    h = _window(p, k, params)
    decision = MpcDecision(
        tuple(values.control(U(i)) for i in range(k, k + h)),
        tuple(values.pose(X(i)) for i in range(k + 1, k + h + 1)),
        converged,
    )
    return decision, SolveStats(iterations, f0, f, watch.elapsed, by)


class _ShootingWindow:
    """
    Single-shooting MPC-C window: decision vector (v_k, w_k, v_k+1, ...).
    """

    def __init__(self, p: PlanProblem, k: int, current: Pose2, params: MpcParams) -> None:
        self.h = _window(p, k, params)
        self.ts = p.ts
        self.start = current.vector()
        ref = p.reference
        self.ref_poses = np.array([ref.poses[i].vector() for i in range(k + 1, k + self.h + 1)])
        self.ref_controls = np.concatenate([ref.controls[i].vector() for i in range(k, k + self.h)])
        self.weights = np.full(self.h, params.w_state)
        self.weights[-1] = params.w_terminal
        self.w_control = params.w_control
        self.centers = np.array([o.center for o in p.obstacles], dtype=float).reshape(-1, 2)
        self.radius = p.radius

    @property
    def constraint_count(self) -> int:
        return self.h * len(self.centers)

    def rollout(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        States x_{k+1..k+h}, shape (h, 3), and their sensitivities to z,
        shape (h, 3, 2h).
        """
        n = 2 * self.h
        states = np.empty((self.h, 3))
        sens = np.empty((self.h, 3, n))
        x = self.start.copy()
        s = np.zeros((3, n))
        for i in range(self.h):
            v, omega = z[2 * i], z[2 * i + 1]
            c, si = math.cos(x[2]), math.sin(x[2])
            a = np.array([[1.0, 0.0, -self.ts * v * si], [0.0, 1.0, self.ts * v * c], [0.0, 0.0, 1.0]])
            s = a @ s
            s[0, 2 * i] += self.ts * c
            s[1, 2 * i] += self.ts * si
            s[2, 2 * i + 1] += self.ts
            x = x + self.ts * np.array([v * c, v * si, omega])
            states[i] = x
            sens[i] = s
        return states, sens

    def cost(self, z: np.ndarray, states: np.ndarray, sens: np.ndarray) -> Tuple[float, np.ndarray]:
        e = states - self.ref_poses
        e[:, 2] = wrap_angles(e[:, 2])
        du = z - self.ref_controls
        value = float(np.sum(self.weights[:, None] * e * e) + self.w_control * np.sum(du * du))
        grad = 2.0 * np.einsum('h,hd,hdn->n', self.weights, e, sens) + 2.0 * self.w_control * du
        return value, grad

    def constraints(self, states: np.ndarray, sens: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        g = R - d <= 0 per (state, obstacle), with gradient rows.
        """
        if len(self.centers) == 0:
            return np.zeros(0), np.zeros((0, 2 * self.h))
        delta = states[:, None, :2] - self.centers[None, :, :]
        d = np.hypot(delta[..., 0], delta[..., 1])
        g = self.radius - d
        safe = np.where(d > 0.0, d, 1.0)
        unit = np.where((d > 0.0)[..., None], delta / safe[..., None], 0.0)
        jac = -np.einsum('hjc,hcn->hjn', unit, sens[:, :2, :])
        return g.reshape(-1), jac.reshape(-1, 2 * self.h)

    def augmented(self, z: np.ndarray, lam: np.ndarray, rho: float) -> Tuple[float, np.ndarray]:
        """
        Powell-Hestenes-Rockafellar augmented Lagrangian.
        """
        states, sens = self.rollout(z)
        value, grad = self.cost(z, states, sens)
        if self.constraint_count:
            g, jac = self.constraints(states, sens)
            shifted = np.maximum(0.0, lam + rho * g)
            value += float(np.sum(shifted * shifted - lam * lam)) / (2.0 * rho)
            grad = grad + jac.T @ shifted
        return value, grad


def mpc_c_objective(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None, lam: Optional[np.ndarray] = None, rho: Optional[float] = None) -> Tuple[Objective, np.ndarray]:
    """
    MPC-C augmented Lagrangian and gradient as a function of the controls,
    together with the reference controls as initial point.

    Multipliers default to zero and rho to params.rho_init.
    """
    if params is None:
        params = MpcParams.constrained()
    window = _ShootingWindow(p, k, current, params)
    lam_ = np.zeros(window.constraint_count) if lam is None else np.asarray(lam, dtype=float)
    rho_ = params.rho_init if rho is None else rho

    def objective(z: np.ndarray) -> Tuple[float, np.ndarray]:
        return window.augmented(z, lam_, rho_)

    return objective, window.ref_controls.copy()


def _violation(window: _ShootingWindow, z: np.ndarray) -> float:
    if not window.constraint_count:
        return 0.0
    states, sens = window.rollout(z)
    g, _ = window.constraints(states, sens)
    return max(0.0, float(np.max(g)))


def solve_mpc_c(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> Tuple[MpcDecision, SolveStats]:
    """
    Constrained MPC over the window starting at step k.
    """
    if params is None:
        params = MpcParams.constrained()
    window = _ShootingWindow(p, k, current, params)
    with _utils.stopwatch() as watch:
        z = window.ref_controls.copy()
        lam = np.zeros(window.constraint_count)
        rho = params.rho_init
        states, sens = window.rollout(z)
        f0, _ = window.cost(z, states, sens)
        violation = _violation(window, z)
        iterations = 0
        by = ConvergedBy.ERR
        inner_ok = True
        if f0 >= params.err_tol or violation > params.constraint_tol:
            previous = math.inf
            for outer in range(params.max_outer_iters):
                result = _minimize(lambda x: window.augmented(x, lam, rho), z, params)
                z = result.x
                iterations += int(result.nit)
                by = _converged_by(result)
                inner_ok = bool(result.success)
                states, sens = window.rollout(z)
                g, _ = window.constraints(states, sens)
                violation = max(0.0, float(np.max(g))) if len(g) else 0.0
                _log.debug('MPC-C outer %d: violation %.3e, rho %.1e', outer, violation, rho)
                if violation <= params.constraint_tol:
                    break
                lam = np.maximum(0.0, lam + rho * g)
                if violation > 0.25 * previous:
                    rho *= params.rho_factor
                previous = violation
            else:
                _log.warning('MPC-C step %d: constraint violation %.3e after %d outer iterations', k, violation, params.max_outer_iters)
        states, sens = window.rollout(z)
        f, _ = window.cost(z, states, sens)
    decision = MpcDecision(
        tuple(Control2(float(z[2 * i]), float(z[2 * i + 1])) for i in range(window.h)),
        tuple(Pose2.from_vector(x) for x in states),
        inner_ok and violation <= params.constraint_tol,
        violation,
    )
    return decision, SolveStats(iterations, f0, f, watch.elapsed, by)


def _finalize(p: PlanProblem, k: int, current: Pose2, decision: MpcDecision, stats: SolveStats) -> StepResult:
    event = None if decision.converged else EventKind.SOLVER_DIVERGED
    predicted: List[Pose2] = [current, *decision.states]
    return finalize_step(p, k, current, decision.controls[0], predicted, stats, event)


def mpc_p_step(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> StepResult:
    """
    MPC-P control of step k, with the planner's phase projection.
    """
    decision, stats = solve_mpc_p(p, k, current, params)
    return _finalize(p, k, current, decision, stats)


def mpc_c_step(p: PlanProblem, k: int, current: Pose2, params: Optional[MpcParams] = None) -> StepResult:
    """
    MPC-C control of step k, with the planner's phase projection.
    """
    decision, stats = solve_mpc_c(p, k, current, params)
    return _finalize(p, k, current, decision, stats)


def numeric_gradient(objective: Callable[[np.ndarray], object], point: Sequence[float], h_fd: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient.

    @p objective may return a scalar or a (value, gradient) pair.
    """
    if not h_fd > 0.0:
        raise ValueError('Step must be > 0.')

    def value(x: np.ndarray) -> float:
        out = objective(x)
        return float(out[0] if isinstance(out, tuple) else out)  # type: ignore

    x0 = np.asarray(point, dtype=float)
    grad = np.empty_like(x0)
    for i in range(len(x0)):
        step = np.zeros_like(x0)
        step[i] = h_fd
        grad[i] = (value(x0 + step) - value(x0 - step)) / (2.0 * h_fd)
    return grad
