# -*- coding: utf-8 -*-

"""Console script for synthesol."""
import functools
import logging
import math
import os
import sys

import click
import numpy as np

from . import __version__
from .config import load_config
from .curvature import check_condition, corollary_bound
from .exceptions import (ConditionFailed, ConfigError, NoConvergenceError,
                         SynthesolError, ValidationFailed)
from .flow import (SADDLE, CotangentState, classify_equilibrium,
                   find_equilibria, integrate)
from .grassmann import graph_frame, locus_diagnostics, stable_unstable_split
from .oracle import compare_with_synthesis
from .synthesis import (converge_horizon, field_from_columns,
                        invariance_residual)
from .utils import dumps, mkdir_p, parallel_map, read_table, write_json, \
    write_table

log = logging.getLogger(__name__)

ORACLE_VALUE_TOL = 1e-3
ORACLE_PATH_TOL = 5e-3
FLOW_CURVATURE_TOL = 1e-4
SEPARATRIX_STEP = 1e-6


def _exits(command):
    """Map synthesol errors to the documented exit codes."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SynthesolError as exc:
            click.echo('{}: {}'.format(type(exc).__name__, exc), err=True)
            sys.exit(exc.exit_code)
    return wrapper


def _setup(config_path, out):
    config = load_config(config_path)
    out = out or config.output_dir
    mkdir_p(out)
    return config, out


config_option = click.option('--config', 'config_path', required=True,
                             type=click.Path(dir_okay=False),
                             help='Run configuration (key = value lines).')
out_option = click.option('--out', default=None, type=click.Path(),
                          help='Output directory (overrides output_dir).')


@click.group()
@click.option('-v', '--verbose', count=True, help='-v for info, -vv debug.')
@click.version_option(version=__version__)
def main(verbose):
    """Optimal synthesis for discounted mechanical problems."""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level,
                        format='%(levelname)s %(name)s: %(message)s')


@main.command()
@config_option
@out_option
@_exits
def check(config_path, out):
    """Sampled curvature condition (exit 3 when it fails)."""
    config, out = _setup(config_path, out)
    config.require_positive_alpha()
    report = check_condition(config.system, config.alpha,
                             density=config.condition_density,
                             safety_margin=config.safety_margin)
    bound = corollary_bound(config.system, config.alpha,
                            density=config.condition_density)
    write_json(report.to_dict(), os.path.join(out, 'condition_report.json'))
    write_json(bound.to_dict(), os.path.join(out, 'corollary_bound.json'))
    click.echo(dumps(report.to_dict()))
    if not report.passed:
        raise ConditionFailed('lambda_max={:.9g} is not below alpha^2/4={:.9g}'
                              .format(report.lambda_max,
                                      0.25 * config.alpha ** 2))


@main.command()
@config_option
@out_option
@_exits
def equilibria(config_path, out):
    """Critical points of U and the linear type of the flow there."""
    config, out = _setup(config_path, out)
    n = config.system.dim
    rows = []
    for point in find_equilibria(config.system):
        if point.degenerate:
            log.warning('skipping degenerate critical point %s',
                        point.q.tolist())
            continue
        rows.append(classify_equilibrium(config.system, point.q, config.alpha,
                                         point.chart))
    columns = {}
    for i in range(n):
        columns['q{}'.format(i + 1)] = [float(r.q_star[i]) for r in rows]
    columns['chart'] = [r.chart for r in rows]
    columns['potential'] = [r.potential_value for r in rows]
    columns['type'] = [r.type for r in rows]
    columns['block_types'] = [';'.join(r.block_types) for r in rows]
    for k in range(2 * n):
        columns['eig{}_re'.format(k + 1)] = [float(r.eigenvalues[k].real)
                                             for r in rows]
        columns['eig{}_im'.format(k + 1)] = [float(r.eigenvalues[k].imag)
                                             for r in rows]
    if not rows:
        click.echo('no non-degenerate critical points')
        return
    table = write_table(columns, os.path.join(out, 'equilibria.csv'))
    for line in table.pformat(max_lines=-1, max_width=-1):
        click.echo(line)


def _write_field(synthesis_field, out, partial):
    suffix = '.partial' if partial else ''
    write_table(synthesis_field.to_columns(),
                os.path.join(out, 'field.csv' + suffix))
    write_json(synthesis_field.residual_report(),
               os.path.join(out, 'field_residuals.json' + suffix))


@main.command()
@config_option
@out_option
@click.option('--force', is_flag=True,
              help='Run even when the curvature condition fails.')
@_exits
def synthesize(config_path, out, force):
    """Converged synthesis field (exit 4 without convergence)."""
    config, out = _setup(config_path, out)
    config.require_positive_alpha()
    report = check_condition(config.system, config.alpha,
                             density=config.condition_density,
                             safety_margin=config.safety_margin)
    if not report.passed and not force:
        raise ConditionFailed('curvature condition fails at alpha={:g}; '
                              'use --force to run anyway'.format(config.alpha))
    tol = config.tolerances
    try:
        result = converge_horizon(
            config.system, config.alpha, config.tau_schedule, tol.horizon,
            config.grid_density, tol.shooting, control=config.control,
            threads=config.threads, certified=report.passed,
            invariance_samples=config.validate_samples,
            invariance_time=config.invariance_time)
    except NoConvergenceError as exc:
        if exc.field is not None:
            _write_field(exc.field, out, partial=True)
        raise
    _write_field(result, out, partial=result.partial)
    summary = result.residual_report()
    click.echo(dumps({k: v for k, v in summary.items() if k != 'history'}))
    misses = [name for name in ('hj_spread', 'exactness', 'invariance')
              if not result.residuals[name] <= tol.validation]
    if result.partial:
        misses.append('failed_nodes')
    if misses:
        raise NoConvergenceError('residuals above tolerance: {}'.format(
            ', '.join(misses)))


def _sample_nodes(synthesis_field, count):
    """Evenly spread grid nodes as (q, chart, psi) triples."""
    picks = []
    patches = synthesis_field.grid.patches
    per_patch = max(1, count // len(patches))
    for patch, psi, failed in zip(patches, synthesis_field.psi,
                                  synthesis_field.failed):
        good = np.flatnonzero(~failed)
        if not good.size:
            continue
        idx = good[np.linspace(0, len(good) - 1, per_patch).round().astype(
            int)]
        q = patch.points()
        picks += [(q[i], patch.chart, psi[i]) for i in np.unique(idx)]
    return picks


def _diagnose(args):
    system, alpha, q, chart, psi, jacobian, control = args
    state = CotangentState(q, psi, chart)
    return locus_diagnostics(system, state, alpha,
                             tangent=graph_frame(jacobian, state),
                             control=control, on_graph=True)


def _compare(args):
    system, q, chart, synthesis_field, alpha, tau, knots, restarts, seed = args
    try:
        return compare_with_synthesis(system, q, synthesis_field, alpha, tau,
                                      knots, restarts, chart, seed).to_dict()
    except SynthesolError as exc:
        log.warning('oracle failed at q=%s: %s', list(np.atleast_1d(q)), exc)
        return {'q': list(np.atleast_1d(q)), 'delta_value': None,
                'delta_traj_sup': None,
                'error': '{}: {}'.format(type(exc).__name__, exc)}


def _criterion(value, tolerance, passed=None):
    if passed is None:
        passed = value is not None and math.isfinite(value) and \
            value <= tolerance
    return {'value': value, 'tolerance': tolerance, 'pass': bool(passed)}


def _worst(records, key, pick=max):
    values = [r[key] for r in records if r.get(key) is not None]
    return pick(values) if values else None


def _complete(records, key):
    """Every record holds the diagnostic; a missing one is a failure."""
    return bool(records) and all(r.get(key) is not None for r in records)


def _bounded(records, key, tolerance):
    value = _worst(records, key)
    return _criterion(value, tolerance, _complete(records, key) and
                      math.isfinite(value) and value <= tolerance)


def _positive(records, key):
    return _criterion(_worst(records, key, min), 0.0,
                      _complete(records, key) and
                      all(r[key] > 0 for r in records))


@main.command()
@config_option
@out_option
@click.option('--field', 'field_path', default=None,
              type=click.Path(dir_okay=False),
              help='Field CSV to validate (default: <out>/field.csv).')
@_exits
def validate(config_path, out, field_path):
    """Diagnostics and oracle comparisons of a field (exit 5 on failure)."""
    config, out = _setup(config_path, out)
    config.require_positive_alpha()
    system, alpha = config.system, config.alpha
    field_path = field_path or os.path.join(out, 'field.csv')
    if not os.path.exists(field_path):
        raise ConfigError('field file {} does not exist'.format(field_path))
    table = read_table(field_path)
    result = field_from_columns(
        system, alpha, {name: np.asarray(table[name], dtype=float)
                        for name in table.colnames})
    tol = config.tolerances.validation
    try:
        result.residuals['invariance'] = invariance_residual(
            result, alpha, config.validate_samples, config.invariance_time,
            control=config.control)
    except SynthesolError as exc:
        log.warning('invariance residual failed: %s', exc)
        result.residuals['invariance'] = None

    interp = result.interpolant()
    samples = _sample_nodes(result, config.validate_samples)
    jobs = [(system, alpha, q, chart, psi, interp.jacobian(q, chart),
             config.control) for q, chart, psi in samples]
    records = parallel_map(_diagnose, jobs, config.threads)

    if config.oracle_points:
        points = [(np.atleast_1d(np.asarray(p, dtype=float)), 0)
                  for p in config.oracle_points]
    else:
        points = [(q, chart) for q, chart, _ in
                  _sample_nodes(result, 3)]
    jobs = [(system, q, chart, result, alpha, config.oracle_tau,
             config.oracle_knots, config.oracle_restarts, config.seed)
            for q, chart in points]
    comparisons = parallel_map(_compare, jobs, config.threads)

    criteria = {
        'invariance': _criterion(result.residuals['invariance'], tol),
        'exactness': _criterion(result.residuals['exactness'], tol),
        'hj_spread': _criterion(result.residuals['hj_spread'], tol),
        'rate_gap': _positive(records, 'epsilon_gap'),
        'tangency': _bounded(records, 'tangency_angle', 100.0 * tol),
        'flow_curvature': _bounded(records, 'flow_curvature_residual',
                                   FLOW_CURVATURE_TOL),
        'lyapunov_rate': _positive(records, 'lyapunov_min_eig'),
        'oracle_value': _bounded(comparisons, 'delta_value',
                                 ORACLE_VALUE_TOL),
        'oracle_path': _bounded(comparisons, 'delta_traj_sup',
                                ORACLE_PATH_TOL),
    }
    passed = all(c['pass'] for c in criteria.values())
    write_json({'alpha': alpha, 'field': field_path, 'pass': passed,
                'criteria': criteria, 'samples': records,
                'oracle': comparisons},
               os.path.join(out, 'validation.json'))
    click.echo(dumps({'pass': passed, 'criteria': criteria}))
    if not passed:
        raise ValidationFailed('failed: {}'.format(', '.join(
            k for k, c in criteria.items() if not c['pass'])))


def _fan(window, count):
    (q0, q1), (x0, x1) = window
    cols = int(math.ceil(math.sqrt(count)))
    rows = int(math.ceil(count / float(cols)))
    qs = np.linspace(q0, q1, cols)
    xs = np.linspace(x0, x1, rows)
    grid = [(q, x) for x in xs for q in qs]
    return grid[:count]


def _orbit(args):
    system, alpha, q, xi, span, control = args
    traj = integrate(system, CotangentState([q], [xi], 0), alpha, 0.0, span,
                     control=control, on_blowup='stop')
    return {'t': traj.times, 'q': traj.q[:, 0], 'xi': traj.xi[:, 0],
            'H': traj.energies}


@main.command()
@config_option
@out_option
@_exits
def portrait(config_path, out):
    """Phase portrait of a one-dimensional system as CSV files."""
    config, out = _setup(config_path, out)
    system, alpha = config.system, config.alpha
    if system.dim != 1:
        raise ConfigError('portrait needs a one-dimensional manifold')
    fan = _fan(config.portrait_window, config.portrait_count)
    jobs = [(system, alpha, q, xi, config.portrait_span, config.control)
            for q, xi in fan]
    for k, orbit in enumerate(parallel_map(_orbit, jobs, config.threads)):
        write_table(orbit, os.path.join(out, 'portrait_{:03d}.csv'.format(k)))

    period = system.manifold.periods[0]
    branches = {'branch': [], 't': [], 'q': [], 'xi': []}
    for point in find_equilibria(system):
        if point.degenerate or classify_equilibrium(
                system, point.q, alpha, point.chart).type != SADDLE:
            continue
        state = CotangentState(point.q, np.zeros(1), point.chart)
        try:
            split = stable_unstable_split(system, state, alpha,
                                          control=config.control)
        except SynthesolError as exc:
            log.warning('no separatrix at q=%s: %s', point.q.tolist(), exc)
            continue
        direction = split.E_minus.basis[:, 0]
        for sign in (1.0, -1.0):
            seed = state.as_vector() + sign * SEPARATRIX_STEP * direction
            start = CotangentState.from_vector(seed, point.chart)
            traj = integrate(system, start, alpha, 0.0, -config.portrait_span,
                             control=config.control, on_blowup='stop')
            label = '{:+.0f}@{:.6g}'.format(sign, float(point.q[0]))
            branches['branch'] += [label] * len(traj)
            branches['t'] += traj.times.tolist()
            branches['q'] += np.mod(traj.q[:, 0], period).tolist()
            branches['xi'] += traj.xi[:, 0].tolist()
    write_table(branches, os.path.join(out, 'separatrix.csv'))
    click.echo('wrote {} orbits and {} separatrix samples to {}'.format(
        len(fan), len(branches['t']), out))


if __name__ == "__main__":
    sys.exit(main())  # pragma: no cover
