"""
Command line interface of the benchmark harness.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import argparse
import json
import logging
import math
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fg_transport import __version__, error, factors, metrics_bench
from fg_transport.baseline_mpc import numeric_gradient
from fg_transport.core_types import Control2, DiagNoise, Pose2, wrap_angles
from fg_transport.factors import KERNELS, U, X, kernel_params
from fg_transport.graph_solver import LMParams, lm_optimize
from fg_transport.kinematics import Formation
from fg_transport.metrics_bench import MetricsRow
from fg_transport.planner import PlanProblem, build_step_graph, make_initial_path
from fg_transport.scenario import ScenarioConfig, Solver, experiment1

_log = logging.getLogger(__name__)


def _solvers(text: str) -> List[Solver]:
    try:
        return [Solver(s.strip()) for s in text.split(',') if s.strip()]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(str(ex)) from ex


def _counts(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(',') if s.strip()]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(str(ex)) from ex


def _load(path: Optional[str], seed: Optional[int]) -> ScenarioConfig:
    config = ScenarioConfig.load(path) if path else experiment1()
    return config if seed is None else config.with_overrides(seed=seed)


def _print_rows(rows: Sequence[MetricsRow]) -> None:
    print(f'{"scenario":<28} {"solver":<6} {"run":>3} {"dev[m]":>9} {"inter[m]":>9} {"t[ms]":>8} {"len[m]":>8} {"goal[m]":>8} {"steps":>5}')
    for row in rows:
        m = row.metrics
        if m is None:
            print(f'{row.scenario:<28} {row.solver:<6} {row.run:>3} failed: {row.error}')
            continue
        print(
            f'{row.scenario:<28} {row.solver:<6} {row.run:>3} {m.avg_deviation:9.4f} {m.max_inter_robot_error:9.2e} '
            f'{1e3 * m.mean_opt_time:8.3f} {m.path_length:8.3f} {m.dist_to_goal:8.4f} {m.steps:5d}'
        )


def _finish(rows: List[MetricsRow], out: Optional[str]) -> int:
    _print_rows(rows)
    if out:
        metrics_bench.emit_csv(rows, out)
        _log.info('wrote %d rows to %s', len(rows), out)
    return 0 if all(r.metrics is not None for r in rows) else 1


def _workers(args: argparse.Namespace) -> int:
    return 1 if args.serial_timing else args.workers


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.scenario, args.seed)
    solver = args.solver or config.solver
    rows = []
    for run in range(args.repeat):
        row, log = metrics_bench.run_row(config, solver, run)
        rows.append(row)
        if run == 0 and args.trajectory and log is not None:
            metrics_bench.emit_trajectory_csv(log, args.trajectory)
    return _finish(rows, args.out)


def _cmd_compare(args: argparse.Namespace) -> int:
    config = _load(args.scenario, args.seed)
    rows = metrics_bench.run_all([config], args.solvers, args.repeat, _workers(args))
    return _finish(rows, args.out)


def _print_fits(rows: Sequence[MetricsRow], counts: Sequence[int], solvers: Sequence[Solver], repeat: int) -> None:
    for solver in solvers:
        times = [r.metrics.mean_opt_time for r in rows if r.solver == solver.value and r.metrics is not None]
        if len(times) != len(counts) * repeat or len(counts) < 2:
            continue
        xs = np.repeat(np.asarray(counts, dtype=float), repeat)
        fit = metrics_bench.fit_linear(xs, times)
        print(f'{solver.value}: {1e6 * fit.slope:.3f} us per unit, R^2 {fit.r_squared:.3f}')


def _cmd_sweep_robots(args: argparse.Namespace) -> int:
    config = _load(args.scenario, args.seed)
    rows = metrics_bench.sweep_robots(config, args.counts, args.solvers, args.repeat, _workers(args))
    status = _finish(rows, args.out)
    _print_fits(rows, args.counts, args.solvers, args.repeat)
    return status


def _cmd_sweep_obstacles(args: argparse.Namespace) -> int:
    config = _load(args.scenario, args.seed)
    sets = metrics_bench.obstacle_sets(args.counts)
    rows = metrics_bench.sweep_obstacles(config, sets, args.solvers, args.repeat, _workers(args))
    status = _finish(rows, args.out)
    _print_fits(rows, args.counts, args.solvers, args.repeat)
    return status


def _setting(text: str) -> Tuple[str, List[Any]]:
    name, sep, values = text.partition('=')
    if not sep or not name.strip() or not values.strip():
        raise argparse.ArgumentTypeError(f'expected NAME=V1,V2,..., got {text!r}')

    def parse(token: str) -> Any:
        try:
            return json.loads(token)
        except json.JSONDecodeError:
            return token

    return name.strip(), [parse(v.strip()) for v in values.split(',') if v.strip()]


def _cmd_grid_search(args: argparse.Namespace) -> int:
    config = _load(args.scenario, args.seed)
    if not args.param:
        raise metrics_bench.Error('give at least one --param', metrics_bench.Error.Code.GRID, 'grid-search')
    grid: Dict[str, List[Any]] = {}
    for name, values in args.param:
        grid.setdefault(name, []).extend(values)
    points = metrics_bench.grid_search(config, grid, args.solver, args.goal_limit, args.time_limit, _workers(args))
    print(f'{"rank":>4} {"ok":>3} {"goal[m]":>8} {"t[ms]":>8}  settings')
    for rank, point in enumerate(points, 1):
        m = point.row.metrics
        settings = ' '.join(f'{name}={value}' for name, value in point.settings)
        if m is None:
            print(f'{rank:>4} {"-":>3} {"failed":>8} {"":>8}  {settings}')
        else:
            print(f'{rank:>4} {"yes" if point.feasible else "no":>3} {m.dist_to_goal:8.4f} {1e3 * m.mean_opt_time:8.3f}  {settings}')
    if args.out:
        metrics_bench.emit_csv([p.row for p in points], args.out)
    return 0 if points and points[0].feasible else 1


def _jacobian_check(rng: np.random.Generator, samples: int) -> float:
    """
    Worst relative mismatch between analytic and central-difference
    Jacobians over random factors of every kind.
    """
    worst = 0.0
    noise3 = DiagNoise.from_variances(0.1, 0.1, 0.02)
    for _ in range(samples):
        x0 = Pose2(*rng.uniform(-2.0, 2.0, 2), rng.uniform(-3.0, 3.0))
        x1 = Pose2(*rng.uniform(-2.0, 2.0, 2), rng.uniform(-3.0, 3.0))
        u0 = Control2(*rng.uniform(-1.0, 1.0, 2))
        center = x0.position + rng.uniform(-0.4, 0.4, 2)
        cases = [
            (factors.pose_prior(X(0), x1, noise3), [x0]),
            (factors.control_prior(U(0), Control2(0.5, 0.0), DiagNoise.from_variances(0.1, 0.1)), [u0]),
            (factors.motion(X(0), U(0), X(1), 0.1, DiagNoise.from_variances(1e-4, 1e-4, 2e-5)), [x0, u0, x1]),
            (factors.obstacle(X(0), center, 0.5, DiagNoise.from_variances(0.01), 1), [x0]),
        ]
        for f, variables in cases:
            params = kernel_params(f.kind, [f])
            arrays = [v.vector() for v in variables]
            _, jacs = KERNELS[f.kind]([a[None, :] for a in arrays], *params)
            for slot, jac in enumerate(jacs):
                for row in range(jac.shape[1]):

                    def residual(point: np.ndarray, slot: int = slot, row: int = row) -> float:
                        moved = [a[None, :] for a in arrays]
                        moved[slot] = point[None, :]
                        raw, _ = KERNELS[f.kind](moved, *params)
                        return float(raw[0, row])

                    numeric = numeric_gradient(residual, arrays[slot], 1e-6)
                    scale = max(1.0, float(np.max(np.abs(jac[0, row]))))
                    worst = max(worst, float(np.max(np.abs(numeric - jac[0, row]))) / scale)
    return worst


def _one_step_oracle(problem: PlanProblem, current: Pose2) -> np.ndarray:
    """
    Optimal (v, omega) of the one-step graph by dense grid search and
    coordinate-descent polish.

    For a fixed control the terminal pose is a weighted mean of the model
    prediction and its prior, which leaves a cost in (v, omega) only.
    """
    ref_u = problem.reference.controls[0].vector()
    ref_x = problem.reference.poses[1].vector()
    w_u = problem.noise.control.information
    w_m = problem.noise.motion.information
    w_p = problem.noise.terminal.information
    w_x = w_m * w_p / (w_m + w_p)
    ts = problem.ts

    def cost(v: np.ndarray, omega: np.ndarray) -> np.ndarray:
        dx = current.x + ts * v * math.cos(current.theta) - ref_x[0]
        dy = current.y + ts * v * math.sin(current.theta) - ref_x[1]
        dtheta = wrap_angles(current.theta + ts * omega - ref_x[2])
        return w_u[0] * (v - ref_u[0]) ** 2 + w_u[1] * (omega - ref_u[1]) ** 2 + w_x[0] * dx ** 2 + w_x[1] * dy ** 2 + w_x[2] * dtheta ** 2

    vs, omegas = np.meshgrid(np.arange(-1.0, 3.0, 0.005), np.arange(-3.0, 3.0, 0.005), indexing='ij')
    values = cost(vs, omegas)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    best = np.array([vs[i, j], omegas[i, j]])
    best_cost = float(cost(best[0], best[1]))
    step = 0.005
    while step > 1e-12:
        improved = False
        for axis in range(2):
            for direction in (-1.0, 1.0):
                trial = best.copy()
                trial[axis] += direction * step
                trial_cost = float(cost(trial[0], trial[1]))
                if trial_cost < best_cost:
                    best, best_cost, improved = trial, trial_cost, True
        if not improved:
            step /= 2.0
    return best


def _lm_check() -> float:
    """
    Control mismatch between LM and a brute-force optimum on a one-step
    graph from a displaced, rotated pose.
    """
    reference = make_initial_path(Pose2(0.0, 0.0, 0.0), (0.1, 0.0), 1, 0.1)
    problem = PlanProblem(reference, Formation.symmetric(4))
    current = Pose2(0.0, 0.03, 0.1)
    graph, init = build_step_graph(problem, 0, current)
    values, _ = lm_optimize(graph, init, LMParams(rel_tol=1e-14, abs_tol=1e-16, err_tol=1e-16, max_iters=200))
    return float(np.max(np.abs(values.control(U(0)).vector() - _one_step_oracle(problem, current))))


def _cmd_selftest(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed or 0)
    worst = _jacobian_check(rng, args.samples)
    jac_ok = worst <= 1e-5
    mismatch = _lm_check()
    lm_ok = mismatch <= 1e-4
    print(f'jacobians: worst relative error {worst:.2e} over {args.samples} samples per kind: {"ok" if jac_ok else "FAILED"}')
    print(f'lm one-step: control off the brute-force optimum by {mismatch:.2e}: {"ok" if lm_ok else "FAILED"}')
    return 0 if jac_ok and lm_ok else 1


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fg-transport', description='Factor-graph planning and control for cooperative payload transport.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='count', default=0, help='more logging, repeat for debug')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='errors only')
    commands = parser.add_subparsers(dest='command', required=True)

    def common(sub: argparse.ArgumentParser, scenario_positional: bool) -> None:
        if scenario_positional:
            sub.add_argument('scenario', help='scenario JSON file')
        else:
            sub.add_argument('--scenario', help='scenario JSON file (default: corridor experiment)')
        sub.add_argument('--out', help='metrics CSV file')
        sub.add_argument('--seed', type=int, help='override the scenario seed')
        sub.add_argument('--repeat', type=int, default=1, help='runs per configuration')

    def pool(sub: argparse.ArgumentParser) -> None:
        group = sub.add_mutually_exclusive_group()
        group.add_argument('--workers', type=int, default=1, help='parallel missions')
        group.add_argument('--serial-timing', action='store_true', help='one mission at a time, for timing')

    run = commands.add_parser('run', help='run one scenario')
    common(run, True)
    run.add_argument('--solver', type=Solver, choices=list(Solver), help='override the scenario solver')
    run.add_argument('--trajectory', help='per-step pose CSV file')
    run.set_defaults(func=_cmd_run)

    compare = commands.add_parser('compare', help='run one scenario with several solvers')
    common(compare, True)
    compare.add_argument('--solvers', type=_solvers, default=list(Solver), help='comma separated: ours,mpc_p,mpc_c')
    pool(compare)
    compare.set_defaults(func=_cmd_compare)

    robots = commands.add_parser('sweep-robots', help='scalability in the number of robots')
    common(robots, False)
    robots.add_argument('--counts', type=_counts, default=[4, 8, 16, 32, 64, 128])
    robots.add_argument('--solvers', type=_solvers, default=[Solver.OURS])
    pool(robots)
    robots.set_defaults(func=_cmd_sweep_robots)

    obstacles = commands.add_parser('sweep-obstacles', help='scalability in the number of obstacles')
    common(obstacles, False)
    obstacles.add_argument('--counts', type=_counts, default=[1, 2, 5, 7])
    obstacles.add_argument('--solvers', type=_solvers, default=list(Solver))
    pool(obstacles)
    obstacles.set_defaults(func=_cmd_sweep_obstacles)

    grid = commands.add_parser('grid-search', help='exhaustive parameter search')
    grid.add_argument('--scenario', help='scenario JSON file (default: corridor experiment)')
    grid.add_argument('--out', help='metrics CSV file, best first')
    grid.add_argument('--seed', type=int, help='override the scenario seed')
    grid.add_argument('--param', type=_setting, action='append', default=[], metavar='NAME=V1,V2', help='setting and its values, e.g. lm.rel_tol=1e-2,1e-3')
    grid.add_argument('--solver', type=Solver, choices=list(Solver), default=Solver.OURS)
    grid.add_argument('--goal-limit', type=float, default=0.06, help='largest accepted distance to goal [m]')
    grid.add_argument('--time-limit', type=float, default=0.08, help='largest accepted mean step time [s]')
    pool(grid)
    grid.set_defaults(func=_cmd_grid_search)

    selftest = commands.add_parser('selftest', help='numerical self checks')
    selftest.add_argument('--samples', type=int, default=1000)
    selftest.add_argument('--seed', type=int, default=0)
    selftest.set_defaults(func=_cmd_selftest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the fg-transport script.
    """
    args = _parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except error.Error as ex:
        _log.error('%s', ex)
        return 2


if __name__ == '__main__':
    sys.exit(main())
