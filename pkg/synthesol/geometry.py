#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Chart geometry of the catalog manifolds.

The circle, the flat tori and the round sphere are described in explicit
charts with analytic metric and potential jets up to second order.  All
functions are vectorized over leading axes: a point array has shape
``(..., n)`` and the chart tag broadcasts against ``q.shape[:-1]``.

The sphere uses two spherical charts, colatitude/azimuth ``(phi, lam)``
around the z axis (chart 0) and around the x axis (chart 1).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ChartDomainError, ConfigError

log = logging.getLogger(__name__)

CIRCLE = 'circle'
FLAT_TORUS = 'flat_torus'
SPHERE = 'sphere'
KINDS = (CIRCLE, FLAT_TORUS, SPHERE)

# Embedding component that plays the role of the polar axis in each chart.
POLE_AXIS = (2, 0)
SPHERE_BASIS = ('x', 'y', 'z', 'xx', 'yy', 'zz', 'xy', 'yz', 'xz')

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ManifoldSpec:
    """Catalog manifold.

    Parameters
    ----------
    kind : str
        One of 'circle', 'flat_torus' or 'sphere'.
    dim : int
        1 for the circle, 1 or 2 for the torus, 2 for the sphere.
    periods : tuple of float, optional
        Coordinate periods of circle and torus charts. Default: 2*pi each.
    sphere_chart_switch : float, optional
        Distance in radians from the active chart's pole below which a
        trajectory is moved to the other chart. Default: pi/3
    """

    kind: str = CIRCLE
    dim: int = 1
    periods: tuple = None
    sphere_chart_switch: float = np.pi / 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError('unknown manifold kind {!r}'.format(self.kind))
        allowed = {CIRCLE: (1,), FLAT_TORUS: (1, 2), SPHERE: (2,)}[self.kind]
        if self.dim not in allowed:
            raise ConfigError('{} cannot have dimension {}'.format(
                self.kind, self.dim))
        if self.kind == SPHERE:
            if self.periods is not None:
                raise ConfigError('the sphere has no coordinate periods')
            if not 0.0 < self.sphere_chart_switch < np.pi / 2.0:
                raise ConfigError('sphere_chart_switch must lie in (0, pi/2)')
            return
        periods = self.periods
        if periods is None:
            periods = (TWO_PI,) * self.dim
        elif np.isscalar(periods):
            periods = (float(periods),) * self.dim
        periods = tuple(float(p) for p in periods)
        if len(periods) != self.dim or min(periods) <= 0.0:
            raise ConfigError('periods must be {} positive numbers'.format(
                self.dim))
        object.__setattr__(self, 'periods', periods)

    @classmethod
    def circle(cls, period=TWO_PI):
        return cls(CIRCLE, 1, (period,))

    @classmethod
    def torus(cls, dim=2, period=TWO_PI):
        return cls(FLAT_TORUS, dim, (period,) * dim)

    @classmethod
    def sphere(cls, switch=np.pi / 3.0):
        return cls(SPHERE, 2, None, switch)

    @property
    def flat(self):
        return self.kind != SPHERE

    @property
    def sectional_bound(self):
        """Upper bound of the sectional curvature (0 flat, 1 unit sphere)."""
        return 0.0 if self.flat else 1.0

    @property
    def chart_periods(self):
        if self.flat:
            return self.periods
        return (None, TWO_PI)

    @property
    def charts(self):
        return (0,) if self.flat else (0, 1)


def _freq(k):
    k = (k,) if np.isscalar(k) else tuple(k)
    return tuple(int(v) for v in k)


@dataclass(frozen=True)
class PotentialSpec:
    """Potential energy U.

    On circle and torus charts U is the trigonometric polynomial
    ``const + sum a cos(k.w q) + sum b sin(k.w q)`` with ``w = 2 pi / period``.
    On the sphere ``U(p) = const + c.p + p^T A p`` on the embedding, with
    amplitudes given by basis name (x, y, z, xx, yy, zz, xy, yz, xz).
    """

    const: float = 0.0
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()
    sphere: tuple = ()

    def __post_init__(self):
        cos_coeffs = tuple((_freq(k), float(a)) for k, a in self.cos_coeffs)
        sin_coeffs = tuple((_freq(k), float(a)) for k, a in self.sin_coeffs)
        sphere = self.sphere
        if isinstance(sphere, dict):
            sphere = sphere.items()
        sphere = tuple(sorted((str(k), float(a)) for k, a in sphere))
        for name, _ in sphere:
            if name not in SPHERE_BASIS:
                raise ConfigError('unknown sphere basis function {!r}'.format(
                    name))
        object.__setattr__(self, 'const', float(self.const))
        object.__setattr__(self, 'cos_coeffs', cos_coeffs)
        object.__setattr__(self, 'sin_coeffs', sin_coeffs)
        object.__setattr__(self, 'sphere', sphere)

    @classmethod
    def pendulum(cls):
        """U = cos(theta)."""
        return cls(cos_coeffs=((1, 1.0),))

    def check(self, manifold):
        if manifold.flat:
            if self.sphere:
                raise ConfigError('sphere coefficients given on a flat chart')
            for k, _ in self.cos_coeffs + self.sin_coeffs:
                if len(k) != manifold.dim:
                    raise ConfigError(
                        'frequency {} does not match dimension {}'.format(
                            k, manifold.dim))
        elif self.cos_coeffs or self.sin_coeffs:
            raise ConfigError('trigonometric coefficients given on the sphere')
        return self

    def quadratic_form(self):
        """Linear part c and symmetric matrix A of a sphere potential."""
        c = np.zeros(3)
        a = np.zeros((3, 3))
        index = {'x': 0, 'y': 1, 'z': 2}
        for name, amp in self.sphere:
            if len(name) == 1:
                c[index[name]] += amp
            else:
                i, j = index[name[0]], index[name[1]]
                if i == j:
                    a[i, i] += amp
                else:
                    a[i, j] += 0.5 * amp
                    a[j, i] += 0.5 * amp
        return c, a


@dataclass(frozen=True)
class MetricJet:
    """Metric with derivatives at a chart point.

    ``dg[..., k, i, j]`` is the derivative of g_ij along q_k,
    ``christoffel[..., k, i, j]`` is Gamma^k_ij and ``riemann[..., l, i, j, k]``
    is the component such that (R(X, Y) Z)^l = riemann[l, i, j, k] X^i Y^j Z^k.
    """

    g: np.ndarray
    g_inv: np.ndarray
    dg: np.ndarray
    dg_inv: np.ndarray
    d2g_inv: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray


@dataclass(frozen=True)
class ScalarJet:
    """Potential value, gradient, coordinate and covariant Hessians."""

    value: np.ndarray
    gradient: np.ndarray
    second: np.ndarray
    hessian: np.ndarray


def as_points(manifold, q):
    """Return q as a float array of shape (..., n)."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        if manifold.dim != 1:
            raise ValueError('scalar point given for a {}-d manifold'.format(
                manifold.dim))
        q = q.reshape(1)
    if q.shape[-1] != manifold.dim:
        raise ValueError('points must have last axis of length {}'.format(
            manifold.dim))
    return q


def _chart_array(chart, shape):
    return np.broadcast_to(np.asarray(chart, dtype=int), shape)


def sphere_embedding(q, chart=0):
    """Embedding p, its Jacobian E and second derivatives of the sphere.

    Returns arrays of shapes (..., 3), (..., 3, 2) and (..., 3, 2, 2).
    """
    q = np.asarray(q, dtype=float)
    phi, lam = q[..., 0], q[..., 1]
    sp, cp = np.sin(phi), np.cos(phi)
    sl, cl = np.sin(lam), np.cos(lam)
    zero = np.zeros_like(phi)
    p = np.stack([sp * cl, sp * sl, cp], -1)
    e_phi = np.stack([cp * cl, cp * sl, -sp], -1)
    e_lam = np.stack([-sp * sl, sp * cl, zero], -1)
    jac = np.stack([e_phi, e_lam], -1)
    p_pl = np.stack([-cp * sl, cp * cl, zero], -1)
    p_ll = np.stack([-sp * cl, -sp * sl, zero], -1)
    d2p = np.stack([np.stack([-p, p_pl], -1), np.stack([p_pl, p_ll], -1)], -1)

    swap = _chart_array(chart, phi.shape) == 1
    if np.any(swap):
        perm = [2, 0, 1]
        p = np.where(swap[..., None], p[..., perm], p)
        jac = np.where(swap[..., None, None], jac[..., perm, :], jac)
        d2p = np.where(swap[..., None, None, None], d2p[..., perm, :, :], d2p)
    return p, jac, d2p


def embed(q, chart=0):
    return sphere_embedding(q, chart)[0]


def sphere_chart_coords(p, chart):
    """Inverse of the sphere embedding in the given chart."""
    p = np.asarray(p, dtype=float)
    swap = _chart_array(chart, p.shape[:-1]) == 1
    f = np.where(swap[..., None], p[..., [1, 2, 0]], p)
    phi = np.arctan2(np.hypot(f[..., 0], f[..., 1]), f[..., 2])
    lam = np.mod(np.arctan2(f[..., 1], f[..., 0]), TWO_PI)
    return np.stack([phi, lam], -1)


def pole_distance(p, chart):
    """Angular distance from p to the nearer pole of the chart."""
    p = np.asarray(p, dtype=float)
    chart = _chart_array(chart, p.shape[:-1])
    axis = np.where(chart == 1, POLE_AXIS[1], POLE_AXIS[0])
    comp = np.take_along_axis(p, axis[..., None], -1)[..., 0]
    return np.arccos(np.clip(np.abs(comp), 0.0, 1.0))


def best_chart(p):
    """Chart whose pole is farthest from p."""
    p = np.asarray(p, dtype=float)
    return np.where(np.abs(p[..., POLE_AXIS[0]]) <= np.abs(p[..., POLE_AXIS[1]]),
                    0, 1)


def wrap_difference(manifold, dq):
    """Minimal representative of a coordinate difference."""
    dq = np.array(dq, dtype=float)
    for i, period in enumerate(manifold.chart_periods):
        if period is not None:
            dq[..., i] = np.mod(dq[..., i] + 0.5 * period, period) - 0.5 * period
    return dq


def normalize_point(manifold, q, chart=0):
    """Wrap periodic coordinates, pick the best sphere chart.

    Returns
    -------
    q : array
        Normalized chart point(s).
    chart : int or array of int
        Chart tag(s) of the returned coordinates.
    """
    q = as_points(manifold, q)
    if manifold.flat:
        periods = np.asarray(manifold.periods)
        q = np.mod(q, periods)
        chart = np.zeros(q.shape[:-1], dtype=int)
    else:
        p = embed(q, chart)
        chart = best_chart(p)
        q = sphere_chart_coords(p, chart)
    if chart.ndim == 0:
        chart = int(chart)
    return q, chart


def change_chart(manifold, q, xi, chart, new_chart):
    """Express a cotangent vector in another sphere chart.

    The covector transforms with the transpose of dq/dq'.
    """
    q = np.asarray(q, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if manifold.flat:
        return q.copy(), xi.copy()
    p, jac_old, _ = sphere_embedding(q, chart)
    q_new = sphere_chart_coords(p, new_chart)
    _, jac_new, _ = sphere_embedding(q_new, new_chart)
    g_old = np.einsum('...mi,...mj->...ij', jac_old, jac_old)
    # dq/dq' = g^-1 E^T E'
    dq_dqnew = np.linalg.solve(
        g_old, np.einsum('...mi,...mj->...ij', jac_old, jac_new))
    xi_new = np.einsum('...ij,...i->...j', dq_dqnew, xi)
    return q_new, xi_new


def point_jacobian(q, chart, new_chart):
    """Derivative of the sphere chart transition dq'/dq."""
    p, jac_old, _ = sphere_embedding(q, chart)
    q_new = sphere_chart_coords(p, new_chart)
    _, jac_new, _ = sphere_embedding(q_new, new_chart)
    g_new = np.einsum('...mi,...mj->...ij', jac_new, jac_new)
    return np.linalg.solve(
        g_new, np.einsum('...mi,...mj->...ij', jac_new, jac_old))


def transition_jacobian(manifold, q, xi, chart, new_chart, step=1e-6):
    """2n x 2n derivative of the cotangent chart transition at one state.

    Central differences; azimuth differences are wrapped.
    """
    n = manifold.dim
    z = np.concatenate([q, xi])
    jac = np.empty((2 * n, 2 * n))
    for j in range(2 * n):
        dz = np.zeros(2 * n)
        dz[j] = step
        qp, xp = change_chart(manifold, (z + dz)[:n], (z + dz)[n:], chart,
                              new_chart)
        qm, xm = change_chart(manifold, (z - dz)[:n], (z - dz)[n:], chart,
                              new_chart)
        dq = wrap_difference(manifold, qp - qm)
        jac[:, j] = np.concatenate([dq, xp - xm]) / (2.0 * step)
    return jac


def _levi_civita(g_inv, dg, d2g, dg_inv):
    """Christoffel symbols and Riemann tensor from metric derivatives."""
    t = (np.einsum('...ilj->...lij', dg) + np.einsum('...jli->...lij', dg)
         - dg)
    gamma = 0.5 * np.einsum('...kl,...lij->...kij', g_inv, t)
    dt = (np.einsum('...ailj->...alij', d2g) + np.einsum('...ajli->...alij', d2g)
          - d2g)
    dgamma = 0.5 * (np.einsum('...akl,...lij->...akij', dg_inv, t)
                    + np.einsum('...kl,...alij->...akij', g_inv, dt))
    riemann = (np.einsum('...iljk->...lijk', dgamma)
               - np.einsum('...jlik->...lijk', dgamma)
               + np.einsum('...lim,...mjk->...lijk', gamma, gamma)
               - np.einsum('...ljm,...mik->...lijk', gamma, gamma))
    return gamma, riemann


def _check_sphere_domain(manifold, q, chart):
    p = embed(q, chart)
    dist = pole_distance(p, chart)
    limit = 0.5 * manifold.sphere_chart_switch
    if np.any(dist < limit):
        raise ChartDomainError(
            'point within {:.3g} rad of the pole of chart {}'.format(
                limit, chart))


def metric_jet(manifold, q, chart=0):
    """Analytic metric jet at chart point(s) q.

    Flat kinds return the identity metric and vanishing connection and
    curvature. On the sphere the metric is diag(1, sin^2 phi) in both charts.

    Raises
    ------
    ChartDomainError
        If a sphere point lies too close to the pole of the given chart.
    """
    q = as_points(manifold, q)
    n = manifold.dim
    shape = q.shape[:-1]
    if manifold.flat:
        eye = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
        z3 = np.zeros(shape + (n,) * 3)
        z4 = np.zeros(shape + (n,) * 4)
        return MetricJet(eye, eye.copy(), z3, z3.copy(), z4.copy(),
                         z3.copy(), z4)

    _check_sphere_domain(manifold, q, chart)
    s, c = np.sin(q[..., 0]), np.cos(q[..., 0])
    g = np.zeros(shape + (2, 2))
    g[..., 0, 0] = 1.0
    g[..., 1, 1] = s * s
    g_inv = np.zeros_like(g)
    g_inv[..., 0, 0] = 1.0
    g_inv[..., 1, 1] = 1.0 / (s * s)
    dg = np.zeros(shape + (2, 2, 2))
    dg[..., 0, 1, 1] = 2.0 * s * c
    d2g = np.zeros(shape + (2, 2, 2, 2))
    d2g[..., 0, 0, 1, 1] = 2.0 * (c * c - s * s)

    dg_inv = -np.einsum('...km,...amn,...nl->...akl', g_inv, dg, g_inv)
    d2g_inv = -(np.einsum('...aim,...kmn,...nj->...akij', dg_inv, dg, g_inv)
                + np.einsum('...im,...akmn,...nj->...akij', g_inv, d2g, g_inv)
                + np.einsum('...im,...kmn,...anj->...akij', g_inv, dg, dg_inv))
    gamma, riemann = _levi_civita(g_inv, dg, d2g, dg_inv)
    return MetricJet(g, g_inv, dg, dg_inv, d2g_inv, gamma, riemann)


def potential_jet(manifold, potential, q, chart=0, metric=None):
    """Analytic value, gradient and Hessians of U at chart point(s) q.

    The covariant Hessian is the coordinate one minus Gamma^k_ij dU_k.
    """
    q = as_points(manifold, q)
    shape = q.shape[:-1]
    n = manifold.dim
    if manifold.flat:
        value = np.full(shape, potential.const)
        grad = np.zeros(shape + (n,))
        second = np.zeros(shape + (n, n))
        scale = TWO_PI / np.asarray(manifold.periods)
        for coeffs, is_cos in ((potential.cos_coeffs, True),
                               (potential.sin_coeffs, False)):
            if not coeffs:
                continue
            kw = np.array([k for k, _ in coeffs], dtype=float) * scale
            amp = np.array([a for _, a in coeffs])
            phase = q @ kw.T
            cos, sin = np.cos(phase), np.sin(phase)
            if is_cos:
                value = value + cos @ amp
                grad = grad - (sin * amp) @ kw
                second = second - np.einsum('...m,mi,mj->...ij', cos * amp,
                                            kw, kw)
            else:
                value = value + sin @ amp
                grad = grad + (cos * amp) @ kw
                second = second - np.einsum('...m,mi,mj->...ij', sin * amp,
                                            kw, kw)
        return ScalarJet(value, grad, second, second.copy())

    if metric is None:
        metric = metric_jet(manifold, q, chart)
    lin, quad = potential.quadratic_form()
    p, jac, d2p = sphere_embedding(q, chart)
    value = potential.const + p @ lin + np.einsum('...m,mn,...n->...', p, quad,
                                                  p)
    grad_p = lin + 2.0 * p @ quad
    grad = np.einsum('...ma,...m->...a', jac, grad_p)
    second = (np.einsum('...ma,mn,...nb->...ab', jac, 2.0 * quad, jac)
              + np.einsum('...m,...mab->...ab', grad_p, d2p))
    hessian = second - np.einsum('...kab,...k->...ab', metric.christoffel, grad)
    return ScalarJet(value, grad, second, hessian)


def raise_index(jet, xi):
    """Vector g^-1 xi."""
    return np.einsum('...ij,...j->...i', jet.g_inv, xi)


def lower_index(jet, v):
    """Covector g v."""
    return np.einsum('...ij,...j->...i', jet.g, v)


def co_norm(jet, xi):
    """Dual norm |xi| = sqrt(xi . g^-1 . xi)."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(np.einsum('...i,...ij,...j->...', xi, jet.g_inv, xi))


def sectional_curvature(jet, x, y):
    """Sectional curvature of the plane spanned by vectors x and y."""
    r_xyy = np.einsum('...lijk,...i,...j,...k->...l', jet.riemann, x, y, y)
    num = np.einsum('...l,...lm,...m->...', r_xyy, jet.g, x)
    gxx = np.einsum('...i,...ij,...j->...', x, jet.g, x)
    gyy = np.einsum('...i,...ij,...j->...', y, jet.g, y)
    gxy = np.einsum('...i,...ij,...j->...', x, jet.g, y)
    return num / (gxx * gyy - gxy ** 2)


def sample_grid(manifold, density):
    """Regular grid of chart points covering the manifold.

    Flat charts use ``density`` nodes per coordinate. The sphere uses a
    colatitude/azimuth grid of ``density // 2`` by ``density`` nodes in the
    z-axis chart, re-expressed in the best chart.

    Returns
    -------
    q : array (N, n)
    chart : int array (N,)
    """
    density = int(density)
    if manifold.flat:
        axes = [np.arange(density) * (period / density)
                for period in manifold.periods]
        mesh = np.meshgrid(*axes, indexing='ij')
        q = np.stack([m.ravel() for m in mesh], -1)
        return q, np.zeros(len(q), dtype=int)
    n_phi = max(density // 2, 2)
    phi = np.pi * (np.arange(n_phi) + 0.5) / n_phi
    lam = TWO_PI * np.arange(density) / density
    mesh = np.meshgrid(phi, lam, indexing='ij')
    q = np.stack([m.ravel() for m in mesh], -1)
    return normalize_point(manifold, q, 0)


def distance(manifold, q1, chart1, q2, chart2):
    """Chart-independent distance (wrapped Euclidean or great circle)."""
    if manifold.flat:
        dq = wrap_difference(manifold, np.asarray(q1) - np.asarray(q2))
        return np.linalg.norm(dq, axis=-1)
    cos = np.einsum('...i,...i->...', embed(q1, chart1), embed(q2, chart2))
    return np.arccos(np.clip(cos, -1.0, 1.0))


@dataclass(frozen=True)
class MechanicalSystem:
    """A manifold together with its potential energy."""

    manifold: ManifoldSpec
    potential: PotentialSpec = field(default_factory=PotentialSpec)

    def __post_init__(self):
        self.potential.check(self.manifold)

    @classmethod
    def pendulum(cls):
        return cls(ManifoldSpec.circle(), PotentialSpec.pendulum())

    @property
    def dim(self):
        return self.manifold.dim

    def metric_jet(self, q, chart=0):
        return metric_jet(self.manifold, q, chart)

    def potential_jet(self, q, chart=0, metric=None):
        return potential_jet(self.manifold, self.potential, q, chart, metric)

    def normalize(self, q, chart=0):
        return normalize_point(self.manifold, q, chart)
