"""
Factor graph container, linearization and Levenberg-Marquardt solver.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import dataclasses
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum, unique
from typing import ClassVar, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from fg_transport import error, _utils
from fg_transport.core_types import Control2, Pose2, wrap_angles
from fg_transport.factors import DIMS, KERNELS, POSE, Factor, FactorKind, Key, kernel_params

_log = logging.getLogger(__name__)

Variable = Union[Pose2, Control2]


class Error(error.Error):
    """
    Raised by graph evaluation and optimization.
    """

    @unique
    class Code(IntEnum):
        """
        Error codes of graph_solver
        """
        MISSING_VARIABLE = -1
        NON_FINITE = -2
        INDEFINITE = -3
        DIVERGED = -4

    code: Code

    def __init__(self, message: str, code: Code, func: str) -> None:
        self.code = code
        super().__init__(message, code.name, func)


@unique
class ConvergedBy(Enum):
    """
    Stopping criterion that ended an optimization
    """
    REL = 'rel'
    ABS = 'abs'
    ERR = 'err'
    MAX_ITERS = 'max_iters'


@dataclass(frozen=True)
class SolveStats:
    """
    Statistics of one optimization.
    """
    iterations: int
    initial_error: float
    final_error: float
    wall_time: float
    converged_by: ConvergedBy


class SolverDivergedError(Error):
    """
    Raised when the damped system cannot be factorized even at maximum
    damping. Carries the best values found so far.
    """

    values: 'Values'
    stats: SolveStats

    def __init__(self, message: str, values: 'Values', stats: SolveStats) -> None:
        self.values = values
        self.stats = stats
        super().__init__(message, Error.Code.DIVERGED, 'lm_optimize')


@dataclass(frozen=True)
class LMParams:
    """
    Levenberg-Marquardt parameters.

    Tolerances default to the best parameters found for the planner.
    """
    rel_tol: float = field(default=1e-2)
    abs_tol: float = field(default=1e-2)
    err_tol: float = field(default=1e-2)
    lambda_init: float = field(default=1e-4)
    lambda_factor: float = field(default=10.0)
    lambda_max: float = field(default=1e10)
    max_iters: int = field(default=100)

    def __post_init__(self) -> None:
        if min(self.rel_tol, self.abs_tol, self.err_tol) <= 0.0:
            raise ValueError('Tolerances must be > 0.')
        if self.lambda_factor <= 1.0:
            raise ValueError('lambda_factor must be > 1.')
        if self.lambda_init <= 0.0 or self.max_iters < 1:
            raise ValueError('lambda_init must be > 0 and max_iters >= 1.')


@dataclass(frozen=True)
class Ordering:
    """
    Position of each variable in the stacked tangent vector.
    """
    keys: Tuple[Key, ...]
    offsets: Dict[Key, int]
    dim: int
    angle_mask: np.ndarray

    def indices(self, key: Key) -> np.ndarray:
        """Tangent-vector indices of a variable"""
        start = self.offsets[key]
        return np.arange(start, start + DIMS[key.symbol])


class Values:
    """
    Current estimate: a map from variable key to Pose2 or Control2.
    """

    def __init__(self, items: Optional[Mapping[Key, Variable]] = None) -> None:
        self.__items: Dict[Key, Variable] = dict(items) if items is not None else {}

    def insert(self, key: Key, value: Variable) -> None:
        """Insert or replace a variable"""
        expected = Pose2 if key.symbol == POSE else Control2
        if not isinstance(value, expected):
            raise TypeError(f'{key} expects {expected.__name__}.')
        self.__items[key] = value

    def __getitem__(self, key: Key) -> Variable:
        try:
            return self.__items[key]
        except KeyError:
            raise Error(f'no value for variable {key}', Error.Code.MISSING_VARIABLE, 'Values') from None

    def __contains__(self, key: object) -> bool:
        return key in self.__items

    def __len__(self) -> int:
        return len(self.__items)

    def __iter__(self) -> Iterator[Key]:
        return iter(self.__items)

    def keys(self) -> Iterable[Key]:
        """Variable keys in insertion order"""
        return self.__items.keys()

    def pose(self, key: Key) -> Pose2:
        """Typed access to a pose variable"""
        value = self[key]
        assert isinstance(value, Pose2)
        return value

    def control(self, key: Key) -> Control2:
        """Typed access to a control variable"""
        value = self[key]
        assert isinstance(value, Control2)
        return value

    def copy(self) -> 'Values':
        """Shallow copy, values are immutable"""
        return Values(self.__items)

    def to_vector(self, ordering: Ordering) -> np.ndarray:
        """Stack the variables of @p ordering"""
        vec = np.empty(ordering.dim)
        for key in ordering.keys:
            start = ordering.offsets[key]
            vec[start:start + DIMS[key.symbol]] = self[key].vector()
        return vec

    @classmethod
    def from_vector(cls, ordering: Ordering, vec: np.ndarray) -> 'Values':
        """Unstack a tangent vector"""
        values = cls()
        for key in ordering.keys:
            start = ordering.offsets[key]
            if key.symbol == POSE:
                values.insert(key, Pose2(float(vec[start]), float(vec[start + 1]), float(vec[start + 2])))
            else:
                values.insert(key, Control2(float(vec[start]), float(vec[start + 1])))
        return values

    def retract(self, ordering: Ordering, delta: np.ndarray) -> 'Values':
        """Apply boxplus to every variable"""
        return Values.from_vector(ordering, _retract(ordering, self.to_vector(ordering), delta))

    def __repr__(self) -> str:
        return f'{self.__class__.__name__}({len(self)} variables)'


def _retract(ordering: Ordering, vec: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = vec + delta
    out[ordering.angle_mask] = wrap_angles(out[ordering.angle_mask])
    return out


def band_or_dense(dim: int, bandwidth: int) -> Optional[int]:
    """
    Lower bandwidth to store the Hessian with, or None for a dense Hessian
    when the band is not much narrower than the system.
    """
    return bandwidth if 4 * (bandwidth + 1) <= dim else None


def _hessian_index(columns: np.ndarray, dim: int, bandwidth: Optional[int]) -> np.ndarray:
    rows = columns[:, :, None]
    cols = columns[:, None, :]
    if bandwidth is None:
        return rows * dim + cols
    # column-major lower band: entry (i, j), i >= j, at j * (bandwidth + 1) + i - j
    return np.minimum(rows, cols) * (bandwidth + 1) + np.abs(rows - cols)


@dataclass(frozen=True)
class Batch:
    """
    Same-kind factors packed for the vectorized kernels.
    """
    kind: FactorKind
    factor_indices: np.ndarray  # position in the graph, for error reports
    gathers: Tuple[np.ndarray, ...]  # (B, d) indices per connected variable
    columns: np.ndarray  # (B, sum d) concatenated gathers
    params: Tuple[np.ndarray, ...]
    sigmas: np.ndarray  # (B, m)
    hessian_index: np.ndarray  # (B, D, D) flat positions in the Hessian storage

    def shifted(self, start: int, shift: int, bandwidth: int, first_index: int) -> 'Batch':
        """
        Rows from @p start, every column moved back by @p shift.

        Only valid for a banded layout, whose storage index moves by a
        whole number of band columns.
        """
        return Batch(
            self.kind,
            first_index + np.arange(len(self.sigmas) - start),
            tuple(g[start:] - shift for g in self.gathers),
            self.columns[start:] - shift,
            tuple(q[start:] for q in self.params),
            self.sigmas[start:],
            self.hessian_index[start:] - shift * (bandwidth + 1),
        )


def pack_batch(
    kind: FactorKind,
    gathers: Sequence[np.ndarray],
    params: Tuple[np.ndarray, ...],
    sigmas: np.ndarray,
    dim: int,
    bandwidth: Optional[int],
    first_index: int = 0,
) -> Batch:
    """
    Pack same-kind factors given as index and parameter arrays.
    """
    gathers = tuple(np.asarray(g, dtype=np.intp) for g in gathers)
    columns = np.concatenate(gathers, axis=1)
    return Batch(kind, first_index + np.arange(len(columns)), gathers, columns, params, np.asarray(sigmas, dtype=float), _hessian_index(columns, dim, bandwidth))


class FactorGraph:
    """
    Ordered list of factors; variables are registered in order of first
    appearance.
    """

    # Static private members
    __cache_manager: ClassVar[_utils.CacheManager] = _utils.CacheManager()

    def __init__(self, factors: Iterable[Factor] = ()) -> None:
        self.__factors: List[Factor] = []
        self.__keys: Dict[Key, None] = {}
        for f in factors:
            self.add(f)

    @_utils.lru_cache_clear(cache_manager=__cache_manager)
    def add(self, f: Factor) -> None:
        """
        Append a factor.

        This will also clear class cache.
        """
        self.__factors.append(f)
        for key in f.keys:
            self.__keys.setdefault(key, None)

    @property
    def factors(self) -> Tuple[Factor, ...]:
        """Factors in insertion order"""
        return tuple(self.__factors)

    @property
    def keys(self) -> Tuple[Key, ...]:
        """Variable keys in registration order"""
        return tuple(self.__keys)

    def __len__(self) -> int:
        return len(self.__factors)

    def variable_count(self) -> int:
        """Number of registered variables"""
        return len(self.__keys)

    def count_by_kind(self) -> Dict[FactorKind, int]:
        """Number of factors of each kind"""
        return dict(Counter(f.kind for f in self.__factors))

    def describe(self, index: int) -> str:
        """Kind and variables of a factor, for error messages"""
        f = self.__factors[index]
        return f'{f.kind.name} on {[str(k) for k in f.keys]}'

    @_utils.lru_cache_method(cache_manager=__cache_manager)
    def ordering(self) -> Ordering:
        """
        Variable ordering of the stacked tangent vector.
        """
        offsets: Dict[Key, int] = {}
        angle: List[bool] = []
        for key in self.__keys:
            offsets[key] = len(angle)
            angle.extend((False, False, True) if key.symbol == POSE else (False, False))
        return Ordering(tuple(self.__keys), offsets, len(angle), np.array(angle, dtype=bool))

    @_utils.lru_cache_method(cache_manager=__cache_manager)
    def bandwidth(self) -> Optional[int]:
        """
        Lower bandwidth of the Hessian in the registration ordering, None
        if it is stored dense.
        """
        order = self.ordering()
        widest = 0
        for f in self.__factors:
            starts = [order.offsets[key] for key in f.keys]
            ends = [order.offsets[key] + DIMS[key.symbol] - 1 for key in f.keys]
            widest = max(widest, max(ends) - min(starts))
        return band_or_dense(order.dim, widest)

    @_utils.lru_cache_method(cache_manager=__cache_manager)
    def batches(self) -> Tuple[Batch, ...]:
        """
        Factors grouped by kind, in kind order then insertion order.
        """
        order = self.ordering()
        grouped: Dict[FactorKind, List[int]] = {}
        for i, f in enumerate(self.__factors):
            grouped.setdefault(f.kind, []).append(i)
        batches = []
        for kind in sorted(grouped):
            members = [self.__factors[i] for i in grouped[kind]]
            gathers = [
                np.array([order.indices(f.keys[slot]) for f in members])
                for slot in range(len(members[0].keys))
            ]
            b = pack_batch(kind, gathers, kernel_params(kind, members), np.array([f.noise.sigmas for f in members]), order.dim, self.bandwidth())
            batches.append(dataclasses.replace(b, factor_indices=np.array(grouped[kind])))
        return tuple(batches)

    def __repr__(self) -> str:
        return f'{self.__class__.__name__}({len(self)} factors, {self.variable_count()} variables)'


class PackedGraph:
    """
    Graph given directly as batches over a fixed banded ordering.

    Used for regular structures, like the planning horizon, that are
    cheaper to slice from arrays than to rebuild factor by factor.
    """

    def __init__(self, ordering: Ordering, batches: Sequence[Batch], bandwidth: int) -> None:
        self.__ordering = ordering
        self.__batches = tuple(batches)
        self.__bandwidth = bandwidth

    def ordering(self) -> Ordering:
        """Variable ordering"""
        return self.__ordering

    def bandwidth(self) -> int:
        """Lower bandwidth of the Hessian"""
        return self.__bandwidth

    def batches(self) -> Tuple[Batch, ...]:
        """Packed factors"""
        return self.__batches

    def __len__(self) -> int:
        return sum(len(b.sigmas) for b in self.__batches)

    def describe(self, index: int) -> str:
        """Kind of a factor, for error messages"""
        for b in self.__batches:
            if index in b.factor_indices:
                return b.kind.name
        return 'unknown'

    def __repr__(self) -> str:
        return f'{self.__class__.__name__}({len(self)} factors, dim {self.__ordering.dim})'


Graph = Union[FactorGraph, PackedGraph]


@dataclass(frozen=True)
class NormalSystem:
    """
    Gauss-Newton normal equations H = J^T J, g = -J^T r at the current
    linearization point, together with the total error there.

    With a bandwidth the Hessian holds the lower band, row d being the
    d-th subdiagonal.
    """
    hessian: np.ndarray
    gradient: np.ndarray
    error: float
    ordering: Ordering
    bandwidth: Optional[int] = field(default=None)


def _band_weights(size: int) -> np.ndarray:
    # off-diagonal entries land twice on the same lower band slot
    return np.where(np.eye(size, dtype=bool), 1.0, 0.5)


def _accumulate(graph: Graph, vec: np.ndarray, with_hessian: bool) -> Tuple[float, np.ndarray, Optional[np.ndarray]]:
    order = graph.ordering()
    bandwidth = graph.bandwidth()
    total = 0.0
    g_index: List[np.ndarray] = []
    g_values: List[np.ndarray] = []
    h_index: List[np.ndarray] = []
    h_values: List[np.ndarray] = []
    for b in graph.batches():
        raw, jacs = KERNELS[b.kind]([vec[idx] for idx in b.gathers], *b.params)
        r = raw / b.sigmas
        bad = ~np.all(np.isfinite(r), axis=1)
        if np.any(bad):
            index = int(b.factor_indices[np.argmax(bad)])
            raise Error(f'non-finite residual in factor {index} ({graph.describe(index)})', Error.Code.NON_FINITE, 'linearize')
        jac = np.concatenate([j / b.sigmas[:, :, None] for j in jacs], axis=2)
        total += float(np.sum(r * r))
        g_index.append(b.columns.ravel())
        g_values.append(-np.einsum('bmd,bm->bd', jac, r).ravel())
        if with_hessian:
            local = np.einsum('bmd,bme->bde', jac, jac)
            if bandwidth is not None:
                local = local * _band_weights(local.shape[1])
            h_index.append(b.hessian_index.ravel())
            h_values.append(local.ravel())
    if not g_index:
        return total, np.zeros(order.dim), (np.zeros((order.dim, order.dim)) if with_hessian else None)
    g = np.bincount(np.concatenate(g_index), weights=np.concatenate(g_values), minlength=order.dim)
    if not with_hessian:
        return total, g, None
    if bandwidth is None:
        h = np.bincount(np.concatenate(h_index), weights=np.concatenate(h_values), minlength=order.dim * order.dim)
        h = h.reshape(order.dim, order.dim)
        return total, g, 0.5 * (h + h.T)
    h = np.bincount(np.concatenate(h_index), weights=np.concatenate(h_values), minlength=order.dim * (bandwidth + 1))
    return total, g, h.reshape(order.dim, bandwidth + 1).T


def _error_at(graph: Graph, vec: np.ndarray) -> float:
    order = graph.ordering()
    total = 0.0
    for b in graph.batches():
        raw, _ = KERNELS[b.kind]([vec[idx] for idx in b.gathers], *b.params)
        r = raw / b.sigmas
        total += float(np.sum(r * r))
    assert vec.shape == (order.dim,)
    return total


def band_to_dense(band: np.ndarray) -> np.ndarray:
    """
    Symmetric matrix from its lower band storage.
    """
    dim = band.shape[1]
    h = np.zeros((dim, dim))
    for d in range(min(band.shape[0], dim)):
        i = np.arange(dim - d)
        h[i + d, i] = band[d, :dim - d]
        h[i, i + d] = band[d, :dim - d]
    return h


def total_error(g: Graph, v: Values) -> float:
    """
    Sum of squared whitened residuals over all factors.
    """
    return _error_at(g, v.to_vector(g.ordering()))


def linearize(g: Graph, v: Values) -> NormalSystem:
    """
    Assemble the normal equations at @p v, with a dense Hessian.
    """
    order = g.ordering()
    err, grad, hessian = _accumulate(g, v.to_vector(order), True)
    assert hessian is not None
    if g.bandwidth() is not None:
        hessian = band_to_dense(hessian)
    return NormalSystem(hessian, grad, err, order)


def cost_gradient(g: Graph, vec: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Total error at a stacked vector and its gradient 2 J^T r.
    """
    err, grad, _ = _accumulate(g, vec, False)
    return err, -2.0 * grad


def solve_normal(system: NormalSystem, lam: float) -> np.ndarray:
    """
    Solve (H + lam * diag(H)) delta = g by Cholesky factorization, banded
    if the system carries a bandwidth.
    """
    if lam < 0.0:
        raise ValueError('Damping must be >= 0.')
    h = system.hessian
    try:
        if system.bandwidth is None:
            factor = scipy.linalg.cho_factor(h + lam * np.diag(np.diag(h)), lower=True, check_finite=False)
            delta = scipy.linalg.cho_solve(factor, system.gradient, check_finite=False)
        else:
            damped = h.copy()
            damped[0] *= 1.0 + lam
            band = scipy.linalg.cholesky_banded(damped, lower=True, check_finite=False)
            delta = scipy.linalg.cho_solve_banded((band, True), system.gradient, check_finite=False)
    except np.linalg.LinAlgError as ex:
        raise Error(f'damped system not positive definite at lambda={lam:g}', Error.Code.INDEFINITE, 'solve_normal') from ex
    if not np.all(np.isfinite(delta)):
        raise Error(f'non-finite step at lambda={lam:g}', Error.Code.INDEFINITE, 'solve_normal')
    return delta


@dataclass
class _LMState:
    vec: np.ndarray
    system: NormalSystem
    error: float
    iterations: int = field(default=0)


def _lm_loop(graph: Graph, state: _LMState, p: LMParams) -> ConvergedBy:
    order = graph.ordering()
    bandwidth = graph.bandwidth()
    lam = p.lambda_init
    if state.error < p.err_tol:
        return ConvergedBy.ERR
    while state.iterations < p.max_iters:
        state.iterations += 1
        try:
            delta = solve_normal(state.system, lam)
        except Error:
            if lam >= p.lambda_max:
                raise
            lam *= p.lambda_factor
            continue
        candidate = _retract(order, state.vec, delta)
        try:
            cand_err, cand_g, cand_h = _accumulate(graph, candidate, True)
        except Error:
            cand_err = float('inf')
        if cand_err < state.error:
            assert cand_h is not None
            decrease = state.error - cand_err
            relative = decrease / state.error
            _log.debug('lm iter %d: error %.6g -> %.6g (lambda %.1e)', state.iterations, state.error, cand_err, lam)
            state.vec = candidate
            state.error = cand_err
            state.system = NormalSystem(cand_h, cand_g, cand_err, order, bandwidth)
            lam = max(lam / p.lambda_factor, 1e-15)
            if cand_err < p.err_tol:
                return ConvergedBy.ERR
            if relative < p.rel_tol:
                return ConvergedBy.REL
            if decrease < p.abs_tol:
                return ConvergedBy.ABS
        else:
            lam *= p.lambda_factor
            _log.debug('lm iter %d: rejected, lambda %.1e', state.iterations, lam)
            if lam > p.lambda_max:
                # no damping gives a decrease: local minimum
                return ConvergedBy.REL
    return ConvergedBy.MAX_ITERS


def lm_optimize_vector(g: Graph, vec: np.ndarray, p: Optional[LMParams] = None) -> Tuple[np.ndarray, SolveStats]:
    """
    lm_optimize() on a stacked vector in the graph ordering.
    """
    if p is None:
        p = LMParams()
    order = g.ordering()
    with _utils.stopwatch() as watch:
        err0, grad0, h0 = _accumulate(g, vec, True)
        assert h0 is not None
        state = _LMState(vec, NormalSystem(h0, grad0, err0, order, g.bandwidth()), err0)
        try:
            converged_by: Optional[ConvergedBy] = _lm_loop(g, state, p)
        except Error as ex:
            if ex.code is not Error.Code.INDEFINITE:
                raise
            converged_by = None
    stats = SolveStats(state.iterations, err0, state.error, watch.elapsed, converged_by or ConvergedBy.MAX_ITERS)
    if converged_by is None:
        raise SolverDivergedError(f'linear solve failed at maximum damping after {state.iterations} iterations', Values.from_vector(order, state.vec), stats)
    return state.vec, stats


def lm_optimize(g: Graph, init: Values, p: Optional[LMParams] = None) -> Tuple[Values, SolveStats]:
    """
    Levenberg-Marquardt with Marquardt diagonal damping.

    Returns the best values found, so that the final error never exceeds
    the initial error.
    """
    order = g.ordering()
    vec, stats = lm_optimize_vector(g, init.to_vector(order), p)
    return Values.from_vector(order, vec), stats
