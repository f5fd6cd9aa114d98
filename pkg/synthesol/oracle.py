#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Direct minimization of the discounted action with a free endpoint.

The functional

    I(gamma) = int_0^tau e^{-alpha t} (|gamma'|^2 / 2 - U(gamma)) dt

is discretized by the midpoint rule on uniform knots, with gamma(0) = q
fixed and every other knot free. Minimizers found here do not depend on
the shooting machinery and are compared with the synthesis trajectories.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import geometry
from .exceptions import ConfigError, NonConvergence
from .flow import CotangentState, integrate, potential_range
from .synthesis import feedback_trajectory, solve_shooting

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_KNOTS = 100


@dataclass(eq=False)
class DiscretePath:
    """Knots of a path on the uniform grid 0..tau; points[0] is the start."""

    times: np.ndarray
    points: np.ndarray
    charts: np.ndarray
    action: float = None

    @property
    def tau(self):
        return float(self.times[-1])

    @property
    def knots(self):
        return len(self.times) - 1

    @classmethod
    def constant(cls, system, q, tau, knots, chart=0):
        q, chart = system.normalize(q, chart)
        times = np.linspace(0.0, tau, knots + 1)
        return cls(times, np.tile(q, (knots + 1, 1)),
                   np.full(knots + 1, chart, dtype=int))

    def copy(self):
        return DiscretePath(self.times.copy(), self.points.copy(),
                            self.charts.copy(), self.action)

    def terminal_speed(self, system):
        """|dq/dt| over the last interval."""
        terms = _intervals(system, self.points[-2:], self.charts[-2:],
                           self.times[-2:], 0.0)
        return float(np.sqrt(2.0 * terms['kinetic'][0]))


def _intervals(system, points, charts, times, alpha):
    """Per-interval midpoint quantities, each interval in its own chart."""
    manifold = system.manifold
    a, b = points[:-1], points[1:]
    if manifold.flat:
        ic = np.zeros(len(a), dtype=int)
        qa, qb = a, b
    else:
        pa = geometry.embed(a, charts[:-1])
        pb = geometry.embed(b, charts[1:])
        ic = geometry.best_chart(pa + pb)
        qa = geometry.sphere_chart_coords(pa, ic)
        qb = geometry.sphere_chart_coords(pb, ic)
    dt = np.diff(times)
    delta = geometry.wrap_difference(manifold, qb - qa)
    mid = qa + 0.5 * delta
    metric = geometry.metric_jet(manifold, mid, ic)
    pot = geometry.potential_jet(manifold, system.potential, mid, ic, metric)
    v = delta / dt[:, None]
    gv = geometry.lower_index(metric, v)
    kinetic = 0.5 * np.einsum('ki,ki->k', v, gv)
    weight = np.exp(-alpha * (times[:-1] + 0.5 * dt))
    return {'chart': ic, 'qa': qa, 'mid': mid, 'metric': metric, 'pot': pot,
            'v': v, 'gv': gv, 'kinetic': kinetic, 'weight': weight, 'dt': dt,
            'terms': weight * (kinetic - pot.value) * dt}


def _action_terms(system, path, alpha):
    return _intervals(system, path.points, path.charts, path.times, alpha)


def discrete_action(system, path, alpha, gradient=False):
    """Midpoint-rule action of a path, optionally with its knot gradient.

    The gradient with respect to points[0] is zero (the start is fixed).
    """
    parts = _action_terms(system, path, alpha)
    action = float(np.sum(parts['terms']))
    if not gradient:
        return action
    metric, v, dt = parts['metric'], parts['v'], parts['dt']
    force = (0.5 * np.einsum('...kij,...i,...j->...k', metric.dg, v, v)
             - parts['pot'].gradient)
    scale = (parts['weight'] * dt)[:, None]
    push = parts['gv'] / dt[:, None]
    grad_a = scale * (0.5 * force - push)
    grad_b = scale * (0.5 * force + push)
    if not system.manifold.flat:
        ic = parts['chart']
        grad_a = np.einsum('kji,kj->ki', geometry.point_jacobian(
            path.points[:-1], path.charts[:-1], ic), grad_a)
        grad_b = np.einsum('kji,kj->ki', geometry.point_jacobian(
            path.points[1:], path.charts[1:], ic), grad_b)
    grad = np.zeros_like(path.points)
    grad[:-1] += grad_a
    grad[1:] += grad_b
    grad[0] = 0.0
    return action, grad


def _preconditioner(times, alpha):
    """Banded discounted H^1 form on the free knots (free right end)."""
    dt = np.diff(times)
    weight = np.exp(-alpha * (times[:-1] + 0.5 * dt))
    stiff = weight / dt
    mass = 0.5 * weight * dt
    diag = stiff.copy()
    diag[:-1] += stiff[1:]
    diag += mass
    diag[:-1] += mass[1:]
    ab = np.zeros((3, len(dt)))
    ab[0, 1:] = -stiff[1:]
    ab[1] = diag
    ab[2, :-1] = -stiff[1:]
    return ab


def _descend(system, path, alpha, tol, max_iter):
    """Preconditioned steepest descent with Armijo backtracking."""
    path = path.copy()
    ab = _preconditioner(path.times, alpha)
    terms = _action_terms(system, path, alpha)['terms']
    step = 1.0
    dual = np.inf
    for iteration in range(max_iter):
        action, grad = discrete_action(system, path, alpha, gradient=True)
        metric = geometry.metric_jet(system.manifold, path.points[1:],
                                     path.charts[1:])
        direction = solve_banded((1, 1), ab,
                                 geometry.raise_index(metric, grad[1:]))
        slope = float(np.sum(grad[1:] * direction))
        dual = np.sqrt(max(slope, 0.0))
        if dual < tol:
            path.action = action
            return path, True, iteration, dual
        step = min(1.0, 2.0 * step)
        for _ in range(40):
            trial = path.copy()
            moved, charts = system.normalize(
                path.points[1:] - step * direction, path.charts[1:])
            trial.points[1:] = moved
            trial.charts[1:] = charts
            trial_terms = _action_terms(system, trial, alpha)['terms']
            # summed per-interval changes keep tiny discounted tails visible
            if np.sum(trial_terms - terms) <= -ARMIJO * step * slope:
                break
            step *= 0.5
        else:
            path.action = action
            stalled = slope <= 1e-12 * max(1.0, abs(action))
            return path, stalled, iteration, dual
        path, terms = trial, trial_terms
    path.action = float(np.sum(terms))
    return path, False, max_iter, dual


def _perturbed(base, rng, amplitude=0.1, modes=3):
    out = base.copy()
    s = base.times / base.tau
    n = base.points.shape[1]
    bump = np.zeros_like(base.points)
    for m in range(1, modes + 1):
        bump += np.sin((m - 0.5) * np.pi * s)[:, None] * rng.normal(size=n)
    out.points = base.points + amplitude * bump / modes
    out.action = None
    return out


def synthesis_path(system, synthesis_field, q, tau, knots, chart=0):
    """Feedback trajectory from q sampled on the oracle knots."""
    q, chart = system.normalize(q, chart)
    times = np.linspace(0.0, tau, knots + 1)
    points, charts = feedback_trajectory(synthesis_field, q, times, chart)
    path = DiscretePath(times, points, np.asarray(charts, dtype=int))
    path.points[0], path.charts[0] = q, chart
    path.action = discrete_action(system, path, synthesis_field.alpha)
    return path


def extremal_path(system, q, tau, alpha, knots, chart=0, control=None):
    """Horizon-tau extremal from q sampled on the oracle knots.

    Integrated backward from its endpoint on the zero section, where the
    flow contracts towards the graph.
    """
    q, chart = system.normalize(q, chart)
    chart = int(chart)
    shot = solve_shooting(system, q, tau, alpha, chart=chart,
                          control=control)
    end = CotangentState(shot.q_end, np.zeros(system.dim), shot.end_chart)
    traj = integrate(system, end, alpha, tau, 0.0, control=control)
    times = np.linspace(0.0, tau, knots + 1)
    states = [traj.at(t) for t in times]
    path = DiscretePath(times, np.array([s.q for s in states]),
                        np.array([s.chart for s in states], dtype=int))
    path.points[0], path.charts[0] = q, chart
    path.action = discrete_action(system, path, alpha)
    return path


def minimize_free_endpoint(system, q, tau, alpha, knots=2000, restarts=2,
                           chart=0, synthesis_field=None, seed=0, tol=1e-9,
                           max_iter=5000):
    """Best local minimizer of the discrete action over several starts.

    Starts from the constant path, the synthesis trajectory when a field is
    given, and ``restarts`` random smooth perturbations of the last of
    these (the synthesis trajectory when a field is given).

    Raises
    ------
    NonConvergence
        If no start reaches a vanishing gradient within ``max_iter``.
    """
    if knots < MIN_KNOTS:
        raise ConfigError('oracle needs at least {} knots'.format(MIN_KNOTS))
    starts = [DiscretePath.constant(system, q, tau, knots, chart)]
    if synthesis_field is not None:
        starts.append(synthesis_path(system, synthesis_field, q, tau, knots,
                                     chart))
    rng = np.random.default_rng(seed)
    starts += [_perturbed(starts[-1], rng) for _ in range(restarts)]
    for path in starts[len(starts) - restarts:]:
        path.points[1:], path.charts[1:] = system.normalize(
            path.points[1:], path.charts[1:])

    best, fallback = None, None
    for k, start in enumerate(starts):
        path, converged, iters, dual = _descend(system, start, alpha, tol,
                                                max_iter)
        log.debug('start %d: action %.12g after %d iterations (%s)', k,
                  path.action, iters, 'converged' if converged else
                  'stopped at dual norm {:.2e}'.format(dual))
        if converged and (best is None or path.action < best.action):
            best = path
        if fallback is None or path.action < fallback.action:
            fallback = path
    if best is None:
        raise NonConvergence('no start reached a critical path', path=fallback)
    return best


@dataclass(frozen=True)
class ComparisonReport:
    q: tuple
    oracle_action: float
    synthesis_action: float
    delta_value: float
    delta_traj_sup: float
    knots: int
    tau: float
    tail_bound: float

    def to_dict(self):
        return {'q': list(self.q), 'oracle_action': self.oracle_action,
                'synthesis_action': self.synthesis_action,
                'delta_value': self.delta_value,
                'delta_traj_sup': self.delta_traj_sup, 'knots': self.knots,
                'tau': self.tau, 'tail_bound': self.tail_bound}


def compare_with_synthesis(system, q, synthesis_field, alpha, tau, knots=2000,
                           restarts=2, chart=0, seed=0, control=None):
    """Oracle minimum against the synthesis on the same knots.

    The value is compared with the discrete action of the feedback
    trajectory, both through the same finite-horizon quadrature; the
    infinite-horizon tail is bounded by e^{-alpha tau} (max U - min U) / alpha.
    The path is compared with the horizon-tau extremal from q, which, unlike
    the feedback trajectory, also stops at rest at t = tau.
    """
    reference = synthesis_path(system, synthesis_field, q, tau, knots, chart)
    extremal = extremal_path(system, q, tau, alpha, knots, chart, control)
    found = minimize_free_endpoint(system, q, tau, alpha, knots, restarts,
                                   chart, synthesis_field, seed)
    gap = geometry.distance(system.manifold, found.points, found.charts,
                            extremal.points, extremal.charts)
    max_u, min_u = potential_range(system)
    report = ComparisonReport(
        tuple(float(x) for x in np.atleast_1d(reference.points[0])),
        found.action, reference.action,
        abs(found.action - reference.action), float(np.max(gap)), knots,
        float(tau), float(np.exp(-alpha * tau) * (max_u - min_u) / alpha))
    log.info('oracle at q=%s: delta_value=%.3e delta_traj_sup=%.3e',
             list(report.q), report.delta_value, report.delta_traj_sup)
    return report
