#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Curvature of the Hamiltonian and the sampled synthesis condition.

R^H_z acts on covectors over q as

    R^H_z zeta = R(zeta, z) z + (nabla^2 U) zeta

with z identified with a vector by the metric. Smooth optimal synthesis is
guaranteed when R^H_z < alpha^2 / 4 on B_H = {H <= max U}.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import minimize

from . import geometry
from .exceptions import ConfigError, SynthesolError
from .flow import CotangentState, energy, jets, potential_range

log = logging.getLogger(__name__)

CHUNK = 1 << 16


@dataclass(frozen=True)
class CurvatureOperator:
    """R^H_z on T*_q M in chart coordinates.

    ``form`` is the symmetric bilinear form S with matrix = S g^-1;
    ``eigenvalues`` are the roots of det(S - mu g) = 0 in ascending order.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    form: np.ndarray


def _curvature_form(metric, pot, xi):
    vec = geometry.raise_index(metric, xi)
    k = np.einsum('...lijk,...j,...k->...li', metric.riemann, vec, vec)
    form = np.einsum('...ml,...li->...mi', metric.g, k) + pot.hessian
    return 0.5 * (form + np.swapaxes(form, -1, -2))


def _top_eigenvalues(metric, form):
    chol = np.linalg.cholesky(metric.g)
    half = np.linalg.solve(chol, form)
    reduced = np.linalg.solve(chol, np.swapaxes(half, -1, -2))
    reduced = 0.5 * (reduced + np.swapaxes(reduced, -1, -2))
    return np.linalg.eigvalsh(reduced)[..., -1]


def curvature_operator(system, state):
    """R^H at a single cotangent state.

    Raises
    ------
    ChartDomainError
        If the state lies outside its sphere chart.
    """
    metric, pot = jets(system, state.q, state.chart)
    form = _curvature_form(metric, pot, state.xi)
    matrix = form @ metric.g_inv
    mu = eigh(form, metric.g, eigvals_only=True)
    return CurvatureOperator(matrix, mu, form)


def top_eigenvalue(system, q, xi, chart=0):
    """Vectorized largest eigenvalue of R^H at states (q, xi)."""
    metric, pot = jets(system, q, chart)
    return _top_eigenvalues(metric, _curvature_form(metric, pot, xi))


def condition_margin(system, state, alpha):
    """alpha^2 / 4 minus the largest eigenvalue of R^H at one state."""
    return 0.25 * alpha * alpha - float(
        top_eigenvalue(system, state.q, state.xi, state.chart))


@dataclass(frozen=True, eq=False)
class StateBatch:
    """Cotangent states stored as arrays."""

    q: np.ndarray
    xi: np.ndarray
    chart: np.ndarray

    def __len__(self):
        return len(self.q)

    def __getitem__(self, i):
        return CotangentState(self.q[i], self.xi[i], int(self.chart[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _directions(n, count):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], -1)


def sample_B_H(system, density, directions=16, radii=8):
    """Stratified samples of B_H.

    Every grid point q carries the zero covector and ``radii - 1`` shells
    up to the boundary radius sqrt(2 (max U - U(q))), each along
    ``directions`` unit directions (two in dimension one).
    """
    if density <= 0:
        raise ConfigError('sampling density must be positive')
    max_u, _ = potential_range(system)
    q, chart = geometry.sample_grid(system.manifold, density)
    metric, pot = jets(system, q, chart)
    rmax = np.sqrt(2.0 * np.maximum(0.0, max_u - pot.value))
    units = _directions(system.dim, directions)
    radii = max(int(radii), 2)
    frac = np.linspace(0.0, 1.0, radii)[1:]
    chol = np.linalg.cholesky(metric.g)
    # (q, radius, direction) ordering, zero covector first
    shells = np.einsum('p,r,pij,dj->prdi', rmax, frac, chol, units)
    per_q = 1 + len(frac) * len(units)
    xi = np.concatenate([np.zeros((len(q), 1, system.dim)),
                         shells.reshape(len(q), -1, system.dim)], axis=1)
    return StateBatch(np.repeat(q, per_q, axis=0),
                      xi.reshape(-1, system.dim),
                      np.repeat(np.atleast_1d(chart), per_q))


@dataclass(frozen=True, eq=False)
class ConditionReport:
    alpha: float
    lambda_max: float
    argmax_state: CotangentState
    alpha_critical: float
    passed: bool
    samples_used: int
    margin: float

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'lambda_max': self.lambda_max,
            'alpha_critical': self.alpha_critical,
            'pass': self.passed,
            'margin': self.margin,
            'samples_used': self.samples_used,
            'argmax_state': self.argmax_state.to_dict(),
        }


def _polish(system, state, max_u):
    n = system.dim
    chart = state.chart

    def objective(z):
        return -float(top_eigenvalue(system, z[:n], z[n:], chart))

    def inside(z):
        return max_u - float(energy(system, z[:n], z[n:], chart))

    try:
        res = minimize(objective, state.as_vector(), method='SLSQP',
                       constraints=[{'type': 'ineq', 'fun': inside}],
                       options={'maxiter': 100, 'ftol': 1e-14})
    except SynthesolError as exc:
        log.debug('polish abandoned: %s', exc)
        return None
    if inside(res.x) < -1e-12:
        return None
    return CotangentState.from_vector(res.x, chart), -res.fun


def check_condition(system, alpha, density=64, safety_margin=1e-6,
                    directions=16, radii=8, polish=True):
    """Sampled verification of R^H < alpha^2 / 4 on B_H.

    The top eigenvalue is evaluated on the stratified samples of B_H and
    refined by a constrained local maximization from the best sample. The
    report passes when lambda_max + safety_margin < alpha^2 / 4.
    """
    if not alpha > 0:
        raise ConfigError('alpha must be positive, got {}'.format(alpha))
    samples = sample_B_H(system, density, directions, radii)
    best, where = -np.inf, 0
    for start in range(0, len(samples), CHUNK):
        stop = start + CHUNK
        top = top_eigenvalue(system, samples.q[start:stop],
                             samples.xi[start:stop], samples.chart[start:stop])
        k = int(np.argmax(top))
        if top[k] > best:
            best, where = float(top[k]), start + k
    argmax = samples[where]

    if polish:
        max_u, _ = potential_range(system)
        refined = _polish(system, argmax, max_u)
        if refined is not None and refined[1] > best:
            log.debug('polish raised lambda_max from %.12g to %.12g', best,
                      refined[1])
            argmax, best = refined

    bound = 0.25 * alpha * alpha
    report = ConditionReport(float(alpha), best, argmax,
                             2.0 * np.sqrt(max(0.0, best)),
                             bool(best + safety_margin < bound), len(samples),
                             bound - best)
    log.info('sampled lambda_max=%.9g against alpha^2/4=%.9g (%s)', best,
             bound, 'pass' if report.passed else 'fail')
    return report


@dataclass(frozen=True)
class CorollaryBound:
    alpha: float
    rhs: float
    hessian_max: float
    sectional_bound: float
    passed: bool

    def to_dict(self):
        return {'alpha': self.alpha, 'pass': self.passed, 'rhs': self.rhs,
                'hessian_max': self.hessian_max,
                'sectional_bound': self.sectional_bound}


def corollary_bound(system, alpha, density=64):
    """Coarser test: nabla^2 U < alpha^2 / 4 - 2 r (max U - min U).

    ``r`` bounds the sectional curvature of the manifold. Passing implies
    that check_condition passes.
    """
    max_u, min_u = potential_range(system)
    r = system.manifold.sectional_bound
    rhs = 0.25 * alpha * alpha - 2.0 * r * (max_u - min_u)
    q, chart = geometry.sample_grid(system.manifold, density)
    metric, pot = jets(system, q, chart)
    sym = 0.5 * (pot.hessian + np.swapaxes(pot.hessian, -1, -2))
    hmax = float(np.max(_top_eigenvalues(metric, sym)))
    return CorollaryBound(float(alpha), rhs, hmax, float(r), hmax < rhs)
