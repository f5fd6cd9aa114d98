#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Optimal synthesis as the invariant graph of a covector field.

For a horizon tau the free-endpoint problem from q is solved by shooting:
the extremal through (q, p) must reach the zero section at time tau. The
section q -> p of horizon tau converges, as tau grows, to the graph Psi
of psi = du, and the optimal feedback is V = g^-1 psi.

The default solver shoots backward from the zero section: the unknown is
the endpoint q_end and the backward extremal from (q_end, 0) must arrive
at q after time tau. It never leaves B_H and stays well conditioned for
long horizons.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from . import geometry
from .curvature import check_condition
from .exceptions import (BlowupError, ConfigError, IntegrationError,
                         NewtonDivergence, NoConvergenceError)
from .flow import StepControl, advance, energy, find_equilibria, jets
from .utils import parallel_map

log = logging.getLogger(__name__)

PAD = 3
SPHERE_BAND = (0.25 * np.pi, 0.75 * np.pi)
DEFAULT_SCHEDULE = (2.0, 4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True, eq=False)
class GridPatch:
    """Tensor grid in one chart; periodic axes exclude their endpoint."""

    chart: int
    axes: tuple
    periods: tuple

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def periodic(self):
        return tuple(p is not None for p in self.periods)

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], -1)

    def neighbours(self, index):
        idx = np.unravel_index(index, self.shape)
        out = []
        for axis, size in enumerate(self.shape):
            for step in (-1, 1):
                moved = list(idx)
                moved[axis] += step
                if self.periodic[axis]:
                    moved[axis] %= size
                elif not 0 <= moved[axis] < size:
                    continue
                out.append(int(np.ravel_multi_index(moved, self.shape)))
        return out


@dataclass(frozen=True, eq=False)
class FieldGrid:
    manifold: geometry.ManifoldSpec
    patches: tuple
    density: int

    @property
    def size(self):
        return sum(p.size for p in self.patches)


def make_grid(manifold, density):
    """Regular grid: one periodic patch on flat kinds, two bands on the sphere."""
    density = int(density)
    if density < 4:
        raise ConfigError('grid density must be at least 4')
    if manifold.flat:
        axes = tuple(np.arange(density) * (period / density)
                     for period in manifold.periods)
        patch = GridPatch(0, axes, tuple(manifold.periods))
        return FieldGrid(manifold, (patch,), density)
    phi = np.linspace(SPHERE_BAND[0], SPHERE_BAND[1], max(density // 2, 4) + 1)
    lam = geometry.TWO_PI * np.arange(density) / density
    patches = tuple(GridPatch(c, (phi, lam), (None, geometry.TWO_PI))
                    for c in manifold.charts)
    return FieldGrid(manifold, patches, density)


def _spline(axis_values, values, axis, period):
    """Cubic spline along one grid axis, periodic when a period is given."""
    if period is None:
        return CubicSpline(axis_values, values, axis=axis)
    x = np.append(axis_values, axis_values[0] + period)
    first = np.take(values, [0], axis=axis)
    return CubicSpline(x, np.concatenate([values, first], axis=axis),
                       axis=axis, bc_type='periodic')


def _bad_nodes(values, failed=None):
    bad = ~np.all(np.isfinite(values), axis=-1)
    return bad if failed is None else bad | np.asarray(failed, dtype=bool)


def _filled(patch, values, failed=None, sweeps=20):
    """Copy of node values (N, k) with failed nodes filled from neighbours.

    Failed nodes take the mean of their known neighbours, layer by layer
    inwards, then a few averaging sweeps smooth the filled block. The result
    only feeds interpolation and quadrature; failed nodes stay marked.
    """
    values = np.array(values, dtype=float)
    bad = np.flatnonzero(_bad_nodes(values, failed))
    if not bad.size:
        return values
    if bad.size == len(values):
        values[:] = 0.0
        return values
    missing = set(bad.tolist())
    while missing:
        ready = {}
        for i in missing:
            known = [j for j in patch.neighbours(i) if j not in missing]
            if known:
                ready[i] = known
        if not ready:
            break
        for i, known in ready.items():
            values[i] = values[known].mean(axis=0)
        missing -= set(ready)
    for _ in range(sweeps):
        for i in bad:
            values[i] = values[patch.neighbours(i)].mean(axis=0)
    return values


def _route_mask(patch, bad):
    """Nodes whose integration route from the first node meets a bad node.

    The route runs along the first row (axis 0), then up the node's column.
    """
    grid_bad = np.asarray(bad, dtype=bool).reshape(patch.shape)
    if len(patch.shape) == 1:
        return np.cumsum(grid_bad) > 0
    row = np.cumsum(grid_bad[:, 0]) > 0
    column = np.cumsum(grid_bad, axis=1) > 0
    return (row[:, None] | column).ravel()


class PatchInterpolant(object):
    """Cubic interpolation of node values (N, k) on a grid patch."""

    def __init__(self, patch, values):
        self.patch = patch
        values = np.asarray(values, dtype=float)
        self.width = values.shape[-1]
        grid_values = values.reshape(patch.shape + (self.width,))
        if len(patch.axes) == 1:
            self._spline = _spline(patch.axes[0], grid_values, 0,
                                   patch.periods[0])
            self._rgi = None
            return
        axes, pads = [], []
        for axis, period in zip(patch.axes, patch.periods):
            if period is None:
                axes.append(axis)
                pads.append((0, 0))
            else:
                axes.append(np.concatenate([axis[-PAD:] - period, axis,
                                            axis[:PAD] + period]))
                pads.append((PAD, PAD))
        padded = np.pad(grid_values, pads + [(0, 0)], mode='wrap')
        self._rgi = RegularGridInterpolator(tuple(axes), padded,
                                            method='cubic')

    def _wrap(self, q):
        q = np.array(q, dtype=float)
        for i, (axis, period) in enumerate(zip(self.patch.axes,
                                               self.patch.periods)):
            if period is None:
                q[:, i] = np.clip(q[:, i], axis[0], axis[-1])
            else:
                q[:, i] = np.mod(q[:, i], period)
        return q

    def __call__(self, q):
        q = self._wrap(np.atleast_2d(q))
        if self._rgi is None:
            return self._spline(q[:, 0])
        return self._rgi(q)


class FieldInterpolant(object):
    """Covector field psi evaluated at arbitrary chart points."""

    def __init__(self, synthesis_field, values=None):
        self.field = synthesis_field
        self.manifold = synthesis_field.grid.manifold
        values = synthesis_field.psi if values is None else values
        self._patches = [PatchInterpolant(patch, _filled(patch, v, failed))
                         for patch, v, failed in zip(
                             synthesis_field.grid.patches, values,
                             synthesis_field.failed)]

    def covector(self, q, chart=0):
        q = geometry.as_points(self.manifold, np.atleast_2d(q))
        if self.manifold.flat:
            return self._patches[0](q)
        charts = np.broadcast_to(np.asarray(chart, dtype=int), q.shape[:-1])
        p = geometry.embed(q, charts)
        best = geometry.best_chart(p)
        out = np.empty_like(q)
        for c, interp in enumerate(self._patches):
            mask = best == c
            if not np.any(mask):
                continue
            qc = geometry.sphere_chart_coords(p[mask], c)
            psi = interp(qc)
            other = charts[mask] != c
            if np.any(other):
                _, psi[other] = geometry.change_chart(
                    self.manifold, qc[other], psi[other], c, 1 - c)
            out[mask] = psi
        return out

    def vector(self, q, chart=0):
        metric = geometry.metric_jet(self.manifold, q, chart)
        return geometry.raise_index(metric, self.covector(q, chart))

    def jacobian(self, q, chart=0, step=1e-6):
        """Finite-difference d psi / dq at one point."""
        q = np.asarray(q, dtype=float)
        cols = []
        for j in range(len(q)):
            dq = np.zeros_like(q)
            dq[j] = step
            cols.append((self.covector(q + dq, chart)[0]
                         - self.covector(q - dq, chart)[0]) / (2.0 * step))
        return np.stack(cols, -1)


@dataclass(eq=False)
class SynthesisField:
    """Covector field psi on a grid with value function and feedback.

    Per-patch arrays are flattened in grid order; ``q_end`` and
    ``end_chart`` hold the zero-section endpoints of the horizon-``tau``
    shooting, reused as warm starts.
    """

    system: object
    alpha: float
    grid: FieldGrid
    psi: list
    tau: float
    q_end: list = None
    end_chart: list = None
    failed: list = None
    u: list = None
    u_path: list = None
    V: list = None
    tau_final: float = None
    residuals: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    outside_regime: bool = False

    def __post_init__(self):
        if self.failed is None:
            self.failed = [np.zeros(p.size, dtype=bool)
                           for p in self.grid.patches]

    @property
    def partial(self):
        return bool(any(mask.any() for mask in self.failed))

    @property
    def failed_nodes(self):
        return int(sum(mask.sum() for mask in self.failed))

    def interpolant(self):
        return FieldInterpolant(self)

    def to_columns(self):
        """Columns q1.., [chart,] psi1.., u, V1.. of every node."""
        n = self.system.dim
        q = np.vstack([p.points() for p in self.grid.patches])
        psi = np.vstack(self.psi)
        columns = {}
        for i in range(n):
            columns['q{}'.format(i + 1)] = q[:, i]
        if not self.grid.manifold.flat:
            columns['chart'] = np.concatenate(
                [np.full(p.size, p.chart) for p in self.grid.patches])
        for i in range(n):
            columns['psi{}'.format(i + 1)] = psi[:, i]
        columns['u'] = np.concatenate(self.u) if self.u else np.full(
            len(q), np.nan)
        vec = np.vstack(self.V) if self.V else np.full_like(psi, np.nan)
        for i in range(n):
            columns['V{}'.format(i + 1)] = vec[:, i]
        return columns

    def residual_report(self):
        return {'tau_final': self.tau_final if self.tau_final is not None
                else self.tau,
                'hj_spread': self.residuals.get('hj_spread'),
                'exactness': self.residuals.get('exactness'),
                'invariance': self.residuals.get('invariance'),
                'failed_nodes': self.failed_nodes,
                'outside_regime': self.outside_regime,
                'history': self.history}


def field_from_columns(system, alpha, columns, tau=np.nan):
    """Rebuild a field from exported columns (psi only; u and V recomputed)."""
    manifold = system.manifold
    n = system.dim
    q = np.stack([np.asarray(columns['q{}'.format(i + 1)], dtype=float)
                  for i in range(n)], -1)
    psi = np.stack([np.asarray(columns['psi{}'.format(i + 1)], dtype=float)
                    for i in range(n)], -1)
    if manifold.flat:
        density = int(round(len(q) ** (1.0 / n)))
    else:
        density = int(round(-1.0 + np.sqrt(1.0 + len(q))))
    grid = make_grid(manifold, density)
    if grid.size != len(q) or not np.allclose(
            np.vstack([p.points() for p in grid.patches]), q, atol=1e-9):
        raise ConfigError('field nodes do not form a regular grid')
    split = np.cumsum([p.size for p in grid.patches])[:-1]
    psi = np.split(psi, split)
    result = SynthesisField(system, float(alpha), grid, psi, float(tau),
                            failed=[_bad_nodes(p) for p in psi])
    value_function(result, alpha)
    result.residuals['exactness'] = exactness_residual(result)
    return result


# -- shooting ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShootingResult:
    p_star: np.ndarray
    newton_iters: int
    final_residual: float
    q_end: np.ndarray
    end_chart: int = 0
    method: str = 'reverse'


def _forward_run(system, q, p, tau, alpha, chart, control, jacobian):
    n = system.dim
    frame = np.vstack([np.zeros((n, n)), np.eye(n)]) if jacobian else None
    run = advance(system, q, p, alpha, 0.0, tau, chart=chart, frame=frame,
                  control=control)
    if run.escaped:
        raise BlowupError('extremal escapes at t={:.6g}'.format(run.t),
                          time=run.t)
    return run


def transversality_residual(system, q, p, tau, alpha, chart=0, jacobian=False,
                            control=None):
    """xi(tau) of the extremal from (q, p); optionally with d xi(tau) / dp.

    Raises
    ------
    BlowupError
        If the extremal escapes before tau.
    """
    run = _forward_run(system, q, p, tau, alpha, chart, control, jacobian)
    if jacobian:
        return run.xi[0], run.frame[0][system.dim:]
    return run.xi[0]


def _reverse_endpoint(system, q_end, end_chart, tau, alpha, chart, control):
    n = system.dim
    manifold = system.manifold
    frame = np.vstack([np.eye(n), np.zeros((n, n))])
    run = advance(system, q_end, np.zeros(n), alpha, tau, 0.0,
                  chart=end_chart, frame=frame, control=control, escape=False)
    q0, xi0, jq = run.q[0], run.xi[0], run.frame[0][:n]
    if run.chart != chart:
        jump = geometry.point_jacobian(q0, run.chart, chart)
        q0, xi0 = geometry.change_chart(manifold, q0, xi0, run.chart, chart)
        jq = jump @ jq
    return q0, xi0, jq


def _reverse_newton(system, q, chart, q_end, end_chart, tau, alpha, tol,
                    max_iter, control):
    manifold = system.manifold

    def evaluate(qe, ce):
        q0, xi0, jq = _reverse_endpoint(system, qe, ce, tau, alpha, chart,
                                        control)
        return geometry.wrap_difference(manifold, q0 - q), jq, xi0

    f, jq, p = evaluate(q_end, end_chart)
    res = float(np.linalg.norm(f))
    iters = 0
    while res >= tol:
        if iters >= max_iter:
            raise NewtonDivergence('no convergence in {} iterations'.format(
                max_iter), iters, res)
        step = np.linalg.lstsq(jq, f, rcond=None)[0]
        lam = 1.0
        for _ in range(9):
            trial, trial_chart = system.normalize(q_end - lam * step,
                                                  end_chart)
            ft, jt, pt = evaluate(trial, trial_chart)
            rt = float(np.linalg.norm(ft))
            if rt < res:
                break
            lam *= 0.5
        else:
            raise NewtonDivergence('line search failed', iters, res)
        q_end, end_chart, f, jq, p, res = trial, trial_chart, ft, jt, pt, rt
        iters += 1
    return ShootingResult(p, iters, res, np.asarray(q_end, dtype=float),
                          int(end_chart), 'reverse')


def _forward_newton(system, q, chart, p, tau, alpha, tol, max_iter, control):
    def evaluate(pp):
        try:
            run = _forward_run(system, q, pp, tau, alpha, chart, control, True)
        except BlowupError:
            return None
        return run.xi[0], run.frame[0][system.dim:], run

    out = evaluate(p)
    if out is None:
        raise NewtonDivergence('initial guess escapes', 0, np.inf)
    xi, jac, run = out
    res = float(np.linalg.norm(xi))
    iters = 0
    while res >= tol:
        if iters >= max_iter:
            raise NewtonDivergence('no convergence in {} iterations'.format(
                max_iter), iters, res)
        step = np.linalg.lstsq(jac, xi, rcond=None)[0]
        lam = 1.0
        for _ in range(9):
            trial = p - lam * step
            out = evaluate(trial)
            if out is not None and np.linalg.norm(out[0]) < res:
                break
            lam *= 0.5
        else:
            raise NewtonDivergence('line search failed', iters, res)
        p, (xi, jac, run) = trial, out
        res = float(np.linalg.norm(xi))
        iters += 1
    return ShootingResult(np.asarray(p, dtype=float), iters, res, run.q[0],
                          run.chart, 'forward')


def solve_shooting(system, q, tau, alpha, p_init=None, chart=0,
                   method='reverse', q_end_init=None, end_chart=None,
                   tol=1e-10, max_iter=50, control=None):
    """Covector p with e^{tau h_alpha}(q, p) on the zero section.

    ``method='reverse'`` solves for the endpoint on the zero section by
    Newton's method on the backward extremal, ramping the horizon through
    tau/8, tau/4, tau/2 unless ``q_end_init`` is given. ``method='forward'``
    runs Newton on p from ``p_init`` and suits short horizons only.

    Raises
    ------
    NewtonDivergence
        After ``max_iter`` iterations or a failed line search.
    """
    control = (control or StepControl()).coarse()
    q = geometry.as_points(system.manifold, q)
    if method == 'forward':
        p = np.zeros_like(q) if p_init is None else np.asarray(p_init, float)
        return _forward_newton(system, q, chart, p, tau, alpha, tol, max_iter,
                               control)
    if method != 'reverse':
        raise ValueError('unknown shooting method {!r}'.format(method))
    if q_end_init is None:
        horizons = [tau / 8.0, tau / 4.0, tau / 2.0, tau]
        q_end, end_chart = q, chart
    else:
        horizons = [tau]
        q_end = np.asarray(q_end_init, dtype=float)
        end_chart = chart if end_chart is None else end_chart
    total = 0
    for horizon in horizons:
        result = _reverse_newton(system, q, chart, q_end, end_chart, horizon,
                                 alpha, tol, max_iter, control)
        q_end, end_chart = result.q_end, result.end_chart
        total += result.newton_iters
    log.debug('shooting q=%s tau=%g: %d iterations, residual %.2e',
              q.tolist(), tau, total, result.final_residual)
    return ShootingResult(result.p_star, total, result.final_residual,
                          result.q_end, result.end_chart, 'reverse')


def _reverse_batch(system, targets, q_end, tau, alpha, tol, max_iter,
                   control):
    """Vectorized reverse shooting for all nodes of a flat grid."""
    manifold = system.manifold
    periods = np.asarray(manifold.periods)
    count, n = targets.shape
    top = np.vstack([np.eye(n), np.zeros((n, n))])

    def evaluate(idx, qe):
        frame = np.broadcast_to(top, (len(idx), 2 * n, n)).copy()
        run = advance(system, qe, np.zeros_like(qe), alpha, tau, 0.0,
                      frame=frame, control=control, escape=False)
        f = geometry.wrap_difference(manifold, run.q - targets[idx])
        return f, run.frame[:, :n, :], run.xi

    q_end = np.mod(np.array(q_end, dtype=float), periods)
    f, jq, p = evaluate(np.arange(count), q_end)
    res = np.linalg.norm(f, axis=1)
    iters = np.zeros(count, dtype=int)
    stalled = np.zeros(count, dtype=bool)
    for _ in range(max_iter):
        active = np.flatnonzero((res >= tol) & ~stalled)
        if not active.size:
            break
        step = np.einsum('kij,kj->ki', np.linalg.pinv(jq[active]), f[active])
        lam = np.ones(len(active))
        pending = np.arange(len(active))
        for _ in range(9):
            sel = active[pending]
            trial = np.mod(q_end[sel] - lam[pending, None] * step[pending],
                           periods)
            ft, jt, pt = evaluate(sel, trial)
            rt = np.linalg.norm(ft, axis=1)
            ok = rt < res[sel]
            good = sel[ok]
            q_end[good], f[good], jq[good] = trial[ok], ft[ok], jt[ok]
            p[good], res[good] = pt[ok], rt[ok]
            pending = pending[~ok]
            if not pending.size:
                break
            lam[pending] *= 0.5
        stalled[active[pending]] = True
        iters[active] += 1
    return p, q_end, iters, res, res >= tol


FOLD_DENSITY = 32


def _zero_section_frame(args):
    system, q, chart, tau, alpha, control = args
    n = system.dim
    top = np.vstack([np.eye(n), np.zeros((n, n))])
    return advance(system, q, np.zeros(n), alpha, tau, 0.0, chart=chart,
                   frame=top, control=control, escape=False).frame[0]


def _check_folds(system, alpha, tau, control, threads=None):
    """Raise when the backward image of the zero section stops being a graph.

    The zero section over a coarse grid is flowed backward for tau; a
    negative det dq(0)/dq_end at any node means the image folds over q.
    """
    n = system.dim
    grid = make_grid(system.manifold, FOLD_DENSITY)
    for patch in grid.patches:
        q = patch.points()
        if system.manifold.flat:
            top = np.vstack([np.eye(n), np.zeros((n, n))])
            frames = advance(system, q, np.zeros_like(q), alpha, tau, 0.0,
                             frame=np.broadcast_to(top, (len(q), 2 * n, n)),
                             control=control, escape=False).frame
        else:
            frames = np.stack(parallel_map(
                _zero_section_frame,
                [(system, qi, patch.chart, tau, alpha, control) for qi in q],
                threads))
        scale = np.prod(np.linalg.norm(frames, axis=1), axis=-1)
        det = np.linalg.det(frames[:, :n, :]) / scale
        if np.any(det < -1e-10):
            raise NoConvergenceError(
                'multiple basins: the backward image of the zero section '
                'folds at tau={:g} ({} nodes)'.format(
                    tau, int(np.sum(det < -1e-10))))


def _repair(system, patch, q, arrays, tau, alpha, tol, max_iter, control):
    p, q_end, end_chart, res, failed = arrays
    if not failed.any():
        return
    manifold = system.manifold
    centres = find_equilibria(system)
    if centres:
        dist = np.min([geometry.distance(manifold, q, patch.chart, c.q,
                                         c.chart) for c in centres], axis=0)
    else:
        dist = np.zeros(len(q))
    progress = True
    while progress and failed.any():
        progress = False
        for i in np.flatnonzero(failed)[np.argsort(dist[failed])]:
            for j in patch.neighbours(i):
                if failed[j]:
                    continue
                try:
                    r = solve_shooting(system, q[i], tau, alpha,
                                       chart=patch.chart, q_end_init=q_end[j],
                                       end_chart=int(end_chart[j]), tol=tol,
                                       max_iter=max_iter, control=control)
                except NewtonDivergence:
                    continue
                p[i], q_end[i], end_chart[i] = r.p_star, r.q_end, r.end_chart
                res[i], failed[i] = r.final_residual, False
                progress = True
                break
    if failed.any():
        log.warning('%d nodes of chart %d failed after the repair sweep',
                    int(failed.sum()), patch.chart)


def _shoot_node(args):
    system, q, chart, tau, alpha, q_end, end_chart, tol, max_iter, control = \
        args
    try:
        r = solve_shooting(system, q, tau, alpha, chart=chart,
                           q_end_init=q_end, end_chart=end_chart, tol=tol,
                           max_iter=max_iter, control=control)
    except NewtonDivergence as exc:
        log.debug('node %s failed: %s', np.asarray(q).tolist(), exc)
        return None
    return r.p_star, r.q_end, r.end_chart, r.final_residual


def build_field(system, alpha, tau, density=256, q_end_init=None, tol=1e-10,
                max_iter=50, control=None, threads=None, check_folds=True):
    """Section of horizon tau over a regular grid, with value function.

    Parameters
    ----------
    q_end_init : list of (q_end, end_chart) per patch, optional
        Warm start; by default each node ramps up from q_end = q.

    Raises
    ------
    NoConvergenceError
        If the backward image of the zero section folds (several basins).
    """
    control = (control or StepControl()).coarse()
    grid = make_grid(system.manifold, density)
    if check_folds:
        _check_folds(system, alpha, tau, control, threads)

    psi, ends, end_charts, failures = [], [], [], []
    for k, patch in enumerate(grid.patches):
        q = patch.points()
        if q_end_init is None:
            start, start_chart = q.copy(), np.full(len(q), patch.chart)
        else:
            start, start_chart = (np.array(a) for a in q_end_init[k])
        if system.manifold.flat:
            horizons = ([tau] if q_end_init is not None
                        else [tau / 8.0, tau / 4.0, tau / 2.0, tau])
            q_end = start
            for horizon in horizons:
                p, q_end, iters, res, failed = _reverse_batch(
                    system, q, q_end, horizon, alpha, tol, max_iter, control)
            end_chart = np.zeros(len(q), dtype=int)
        else:
            jobs = [(system, q[i], patch.chart, tau, alpha,
                     None if q_end_init is None else start[i],
                     int(start_chart[i]), tol, max_iter, control)
                    for i in range(len(q))]
            results = parallel_map(_shoot_node, jobs, threads)
            failed = np.array([r is None for r in results])
            p = np.array([r[0] if r else np.full(2, np.nan) for r in results])
            q_end = np.array([r[1] if r else start[i]
                              for i, r in enumerate(results)])
            end_chart = np.array([r[2] if r else start_chart[i]
                                  for i, r in enumerate(results)], dtype=int)
            res = np.array([r[3] if r else np.inf for r in results])
        _repair(system, patch, q, (p, q_end, end_chart, res, failed), tau,
                alpha, tol, max_iter, control)
        psi.append(p)
        ends.append(q_end)
        end_charts.append(end_chart)
        failures.append(failed)

    result = SynthesisField(system, float(alpha), grid, psi, float(tau),
                            ends, end_charts, failures)
    value_function(result, alpha)
    result.residuals['exactness'] = exactness_residual(result)
    log.info('tau=%g: %d nodes, %d failed, hj_spread=%.3e', tau, grid.size,
             result.failed_nodes, result.residuals['hj_spread'])
    return result


def _feedback_endpoints(field_prev, tau):
    """Endpoints of q' = V(q) after time tau, one per node of every patch."""
    system = field_prev.system
    manifold = system.manifold
    interp = field_prev.interpolant()
    out = []
    for patch in field_prev.grid.patches:
        q = patch.points()
        count, n = q.shape
        if manifold.flat:
            def rhs(t, y):
                return interp.vector(y.reshape(count, n), 0).ravel()
            sol = solve_ivp(rhs, (0.0, tau), q.ravel(), method='DOP853',
                            rtol=1e-8, atol=1e-10)
            end = np.mod(sol.y[:, -1].reshape(count, n),
                         np.asarray(manifold.periods))
            out.append((end, np.zeros(count, dtype=int)))
            continue

        def rhs(t, y):
            p = y.reshape(count, 3)
            p = p / np.linalg.norm(p, axis=1, keepdims=True)
            best = geometry.best_chart(p)
            qc = geometry.sphere_chart_coords(p, best)
            _, jac, _ = geometry.sphere_embedding(qc, best)
            vec = interp.vector(qc, best)
            return np.einsum('kmi,ki->km', jac, vec).ravel()

        sol = solve_ivp(rhs, (0.0, tau),
                        geometry.embed(q, patch.chart).ravel(),
                        method='DOP853', rtol=1e-8, atol=1e-10)
        p = sol.y[:, -1].reshape(count, 3)
        p = p / np.linalg.norm(p, axis=1, keepdims=True)
        best = geometry.best_chart(p)
        out.append((geometry.sphere_chart_coords(p, best), best))
    return out


def feedback_trajectory(synthesis_field, q, times, chart=0, rtol=1e-10,
                        atol=1e-12):
    """Integrate the optimal feedback q' = V(q) from q, sampled at ``times``.

    Returns
    -------
    points : array (T, n)
    charts : int array (T,)
    """
    manifold = synthesis_field.grid.manifold
    interp = synthesis_field.interpolant()
    q = geometry.as_points(manifold, q)
    times = np.asarray(times, dtype=float)
    span = (times[0], times[-1])
    if manifold.flat:
        sol = solve_ivp(lambda t, y: interp.vector(y[None], 0)[0], span, q,
                        t_eval=times, method='DOP853', rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationError(sol.message)
        return (np.mod(sol.y.T, np.asarray(manifold.periods)),
                np.zeros(len(times), dtype=int))

    def rhs(t, y):
        p = y / np.linalg.norm(y)
        c = int(geometry.best_chart(p))
        qc = geometry.sphere_chart_coords(p, c)
        _, jac, _ = geometry.sphere_embedding(qc, c)
        return jac @ interp.vector(qc, c)[0]

    sol = solve_ivp(rhs, span, geometry.embed(q, chart), t_eval=times,
                    method='DOP853', rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    p = sol.y.T / np.linalg.norm(sol.y.T, axis=1, keepdims=True)
    charts = geometry.best_chart(p)
    return geometry.sphere_chart_coords(p, charts), charts


def _grid_gradient(patch, values):
    grid_values = values.reshape(patch.shape + values.shape[1:])
    grads = []
    for axis, (ax, period) in enumerate(zip(patch.axes, patch.periods)):
        h = ax[1] - ax[0]
        if period is None:
            grads.append(np.gradient(grid_values, h, axis=axis))
        else:
            grads.append((np.roll(grid_values, -1, axis)
                          - np.roll(grid_values, 1, axis)) / (2.0 * h))
    return np.stack(grads, -1)


def slope_bound(synthesis_field):
    """Largest finite-difference derivative of psi over the grid."""
    return float(max(np.nanmax(np.abs(_grid_gradient(patch, psi)))
                     for patch, psi in zip(synthesis_field.grid.patches,
                                           synthesis_field.psi)))


def converge_horizon(system, alpha, schedule=DEFAULT_SCHEDULE, tol=1e-6,
                     density=256, shooting_tol=1e-10, max_iter=50,
                     control=None, threads=None, certified=None,
                     invariance_samples=32, invariance_time=5.0):
    """Run build_field along an increasing horizon schedule until psi settles.

    Every horizon after the first is warm-started from the endpoints of the
    previous feedback. The sup-norm change of psi between consecutive
    horizons must drop below ``tol``.

    Raises
    ------
    NoConvergenceError
        If the schedule is exhausted; ``field`` holds the last field.
    """
    schedule = [float(t) for t in schedule]
    if not schedule or np.any(np.diff(schedule) <= 0):
        raise ConfigError('tau_schedule must be increasing')
    if certified is None:
        certified = check_condition(system, alpha, density=32).passed
    if not certified:
        log.warning('curvature condition fails at alpha=%g: results are '
                    'outside the guaranteed regime', alpha)
    previous, history = None, []
    for tau in schedule:
        warm = None if previous is None else _feedback_endpoints(previous, tau)
        current = build_field(system, alpha, tau, density, warm, shooting_tol,
                              max_iter, control, threads)
        current.outside_regime = not certified
        change = np.inf
        if previous is not None:
            diffs = [np.abs(a - b)[~(fa | fb)] for a, b, fa, fb in
                     zip(current.psi, previous.psi, current.failed,
                         previous.failed)]
            change = float(max((np.max(d) if d.size else 0.0)
                               for d in diffs))
        history.append({'tau': tau, 'sup_change': change,
                        'slope_bound': slope_bound(current)})
        current.history = list(history)
        log.info('horizon %g: sup change %.3e', tau, change)
        if change < tol:
            current.tau_final = tau
            current.residuals['invariance'] = invariance_residual(
                current, alpha, invariance_samples, invariance_time)
            return current
        previous = current
    raise NoConvergenceError('psi still moves by {:.3e} at tau={:g}'.format(
        change, schedule[-1]), field=previous)


# -- value function and residuals --------------------------------------------


def _patch_path_integral(patch, psi):
    """Line integral of psi from the first node: axis 0 along the first row,
    then axis 1 along every column."""
    grid_psi = psi.reshape(patch.shape + (psi.shape[-1],))
    ax0 = patch.axes[0]
    first = _spline(ax0, grid_psi[(slice(None),) + (0,) * (len(
        patch.shape) - 1) + (0,)], 0, patch.periods[0])
    base = first.antiderivative()(ax0)
    if len(patch.shape) == 1:
        return base
    ax1 = patch.axes[1]
    along = _spline(ax1, grid_psi[..., 1], 1, patch.periods[1])
    return (base[:, None] + along.antiderivative()(ax1)).ravel()


def value_function(synthesis_field, alpha):
    """u = H(psi) / alpha, the path-integrated u, V and the HJ spread.

    Failed nodes keep u = NaN. The path integral runs over psi with those
    nodes filled from their neighbours, and nodes whose route crosses a
    failed node are left out of the spread.
    """
    system = synthesis_field.system
    grid = synthesis_field.grid
    u, paths, routes = [], [], []
    for patch, psi, failed in zip(grid.patches, synthesis_field.psi,
                                  synthesis_field.failed):
        bad = _bad_nodes(psi, failed)
        h = energy(system, patch.points(), psi, patch.chart)
        u.append(np.where(bad, np.nan, h / alpha))
        paths.append(_patch_path_integral(patch, _filled(patch, psi, bad)))
        routes.append(_route_mask(patch, bad))
    if len(grid.patches) == 2:
        # glue the second patch to the first at the node nearest chart 0's equator
        q1 = grid.patches[1].points()
        p1 = geometry.embed(q1, 1)
        k = int(np.argmin(np.abs(p1[:, geometry.POLE_AXIS[0]])))
        q0 = geometry.sphere_chart_coords(p1[k], 0)
        ref = PatchInterpolant(grid.patches[0], paths[0][:, None])(q0)[0, 0]
        paths[1] = paths[1] + (ref - paths[1][k])
    spreads = []
    for k, (h_over_alpha, path, crossed) in enumerate(zip(u, paths, routes)):
        spreads.append((alpha * h_over_alpha - alpha * path)[~crossed])
        paths[k] = np.where(np.isnan(h_over_alpha), np.nan, path)
    spread = np.concatenate(spreads)
    spread = spread[np.isfinite(spread)]
    synthesis_field.u = u
    synthesis_field.u_path = paths
    synthesis_field.V = synthesize_vector_field(synthesis_field)
    synthesis_field.residuals['hj_spread'] = float(
        np.max(spread) - np.min(spread)) if spread.size else np.nan
    return synthesis_field


def exactness_residual(synthesis_field):
    """Obstruction of psi to being a differential.

    Circle: |loop integral|. Two dimensions: the larger of the spline curl
    and the loop integrals around every periodic grid line. Grid lines
    through failed nodes and the curl within two nodes of them are skipped.
    """
    worst = 0.0
    for patch, psi, failed in zip(synthesis_field.grid.patches,
                                  synthesis_field.psi, synthesis_field.failed):
        bad = _bad_nodes(psi, failed).reshape(patch.shape)
        filled = _filled(patch, psi, bad.ravel())
        grid_psi = filled.reshape(patch.shape + (psi.shape[-1],))
        for axis, (ax, period) in enumerate(zip(patch.axes, patch.periods)):
            if period is not None:
                spline = _spline(ax, grid_psi[..., axis], axis, period)
                loop = np.abs(spline.integrate(ax[0], ax[0] + period))
                crossed = bad.any(axis=axis)
                loop = np.atleast_1d(loop)[~np.atleast_1d(crossed)]
                if loop.size:
                    worst = max(worst, float(np.max(loop)))
        if len(patch.shape) == 2:
            curl = np.abs(_derivative(patch, grid_psi[..., 1], 0)
                          - _derivative(patch, grid_psi[..., 0], 1))
            near = bad.ravel().copy()
            for _ in range(2):
                near[[j for i in np.flatnonzero(near)
                      for j in patch.neighbours(i)]] = True
            curl = curl.ravel()[~near]
            if curl.size:
                worst = max(worst, float(np.max(curl)))
    return worst


def _derivative(patch, values, axis):
    spline = _spline(patch.axes[axis], values, axis, patch.periods[axis])
    return spline.derivative()(patch.axes[axis])


def invariance_residual(synthesis_field, alpha, samples=32, t=5.0,
                        direction='backward', control=None):
    """Distance of flowed graph points from the graph.

    Node samples (q, psi(q)) are flowed for time t (backward by default) and
    the largest |xi - psi(q)| along the accepted steps is returned.
    """
    system = synthesis_field.system
    manifold = system.manifold
    interp = synthesis_field.interpolant()
    span = -abs(t) if direction == 'backward' else abs(t)
    control = control or StepControl()
    worst = 0.0
    patches = synthesis_field.grid.patches
    per_patch = max(1, int(samples) // len(patches))
    for patch, psi, failed in zip(patches, synthesis_field.psi,
                                  synthesis_field.failed):
        q = patch.points()
        good = np.flatnonzero(~failed)
        pick = good[np.linspace(0, len(good) - 1, per_patch).round().astype(
            int)] if good.size else good
        if not pick.size:
            continue
        if manifold.flat and span < 0:
            run = advance(system, q[pick], psi[pick], alpha, 0.0, span,
                          control=control, escape=False, keep=True)
            rows = np.concatenate([seg.y for seg in run.segments])
            n = system.dim
            qs = rows[..., :n].reshape(-1, n)
            xs = rows[..., n:2 * n].reshape(-1, n)
            gap = xs - interp.covector(qs, 0)
            metric = system.metric_jet(qs, 0)
            worst = max(worst, float(np.max(geometry.co_norm(metric, gap))))
            continue
        for i in pick:
            run = advance(system, q[i], psi[i], alpha, 0.0, span,
                          chart=patch.chart, control=control, keep=True)
            for seg in run.segments:
                n = system.dim
                qs, xs = seg.y[:, 0, :n], seg.y[:, 0, n:2 * n]
                gap = xs - interp.covector(qs, seg.chart)
                metric = system.metric_jet(qs, seg.chart)
                worst = max(worst, float(np.max(geometry.co_norm(metric,
                                                                 gap))))
    return worst


def synthesize_vector_field(synthesis_field):
    """Optimal feedback V = g^-1 psi at every node."""
    out = []
    for patch, psi in zip(synthesis_field.grid.patches, synthesis_field.psi):
        metric, _ = jets(synthesis_field.system, patch.points(), patch.chart)
        out.append(geometry.raise_index(metric, psi))
    return out
