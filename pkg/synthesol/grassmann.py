#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Lagrange subspaces carried by the linearized discounted flow.

Tangent vectors of T*M are columns (dq, dxi) in chart coordinates and the
symplectic pairing is sigma(u, v) = u_xi . v_q - u_q . v_xi = u^T Omega v.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from . import geometry
from .curvature import curvature_operator
from .exceptions import (BlowupError, ConvergenceError, NotOnLocusError,
                         StepTooSmall, SynthesolError, TransversalityError)
from .flow import (ESCAPED, CotangentState, StepControl, advance,
                   classify_boundedness, field_components, field_jacobian,
                   hamiltonian, jets, potential_range)

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


def omega(n):
    """Matrix of the symplectic form, sigma(u, v) = u^T omega(n) v."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def sigma(u, v):
    n = len(u) // 2
    return float(u[n:] @ v[:n] - u[:n] @ v[n:])


@dataclass(frozen=True, eq=False)
class LagrangeFrame:
    """Columns spanning a subspace of T_z(T*M).

    After propagation ``basis @ scale`` is the frame transported by the
    linearized flow; ``growth`` holds (time, cumulative log |R_ii|) of the
    re-orthonormalizations.
    """

    basis: np.ndarray
    base: CotangentState
    time: float = 0.0
    scale: np.ndarray = None
    growth: tuple = field(default=())

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def raw(self):
        if self.scale is None:
            return self.basis
        return self.basis @ self.scale

    def isotropy_defect(self):
        return isotropy_defect(self.basis)


@dataclass(frozen=True)
class GrassmannChartCoord:
    S: np.ndarray


def _basis(frame):
    return frame.basis if isinstance(frame, LagrangeFrame) else np.asarray(
        frame, dtype=float)


def isotropy_defect(basis):
    """Largest |sigma| between normalized columns."""
    basis = _basis(basis)
    unit = basis / np.linalg.norm(basis, axis=0)
    n = basis.shape[0] // 2
    return float(np.max(np.abs(unit.T @ omega(n) @ unit)))


def principal_angles(a, b):
    """Principal angles between two subspaces, largest first."""
    return subspace_angles(_basis(a), _basis(b))


def subspace_distance(a, b):
    return float(np.max(principal_angles(a, b)))


def intersection_dim(a, b, tol=1e-8):
    """Dimension of the intersection from the rank of the stacked bases."""
    qa, _ = np.linalg.qr(_basis(a))
    qb, _ = np.linalg.qr(_basis(b))
    sv = np.linalg.svd(np.hstack([qa, qb]), compute_uv=False)
    return int(qa.shape[1] + qb.shape[1] - np.sum(sv > tol))


def angle_to_subspace(v, frame):
    """Angle between a vector and a subspace."""
    v = np.asarray(v, dtype=float)
    q, _ = np.linalg.qr(_basis(frame))
    rest = v - q @ (q.T @ v)
    return float(np.arcsin(min(1.0, np.linalg.norm(rest) / np.linalg.norm(v))))


def _qr(mat):
    q, r = np.linalg.qr(mat)
    sign = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * sign, r * sign[:, None]


def vertical_frame(system, state):
    n = system.dim
    return LagrangeFrame(np.vstack([np.zeros((n, n)), np.eye(n)]), state)


def _shifted_horizontal(system, state, shift):
    metric, _ = jets(system, state.q, state.chart)
    gamma_xi = np.einsum('mkj,m->kj', metric.christoffel, state.xi)
    # w = g^-1 u for covectors u orthonormal in the dual metric
    w = np.linalg.inv(np.linalg.cholesky(metric.g)).T
    lift = gamma_xi + shift * metric.g
    return LagrangeFrame(np.vstack([w, lift @ w]), state)


def levi_civita_horizontal(system, state):
    """Horizontal space D of the Levi-Civita connection."""
    return _shifted_horizontal(system, state, 0.0)


def connection_D_alpha(system, state, alpha):
    """Canonical horizontal complement D^alpha of the vertical fiber.

    Each column pairs w = g^-1 u with the Levi-Civita lift of w shifted by
    (alpha / 2) g w on the fiber. ``alpha = 0`` gives D.
    """
    return _shifted_horizontal(system, state, 0.5 * alpha)


def delta_alpha(system, state, alpha):
    """Lagrange complement of D^alpha used as the chart origin of q_ratio_check."""
    return _shifted_horizontal(system, state, 1.0 + 0.5 * alpha)


def graph_frame(jacobian, state):
    """Tangent space of the graph of a covector field with Jacobian d psi."""
    jacobian = np.atleast_2d(jacobian)
    n = jacobian.shape[0]
    return LagrangeFrame(np.vstack([np.eye(n), jacobian]), state)


def linearization(system, state, alpha):
    """Jacobian of the discounted field at a state."""
    return field_jacobian(system, state.q, state.xi, state.chart, alpha)


def propagate_frame(system, frame, alpha, t1, control=None, renormalize=1.0):
    """Transport a frame by the linearized flow from frame.time to t1.

    Columns are re-orthonormalized every ``renormalize`` time units.

    Raises
    ------
    BlowupError
        If the base trajectory escapes.
    """
    control = control or StepControl()
    base = frame.base
    q, xi, chart = base.q, base.xi, base.chart
    basis = frame.basis
    scale = np.eye(frame.dim) if frame.scale is None else frame.scale
    logs = (frame.growth[-1][1] if frame.growth
            else np.zeros(frame.dim))
    growth = list(frame.growth)
    t = frame.time
    direction = np.sign(t1 - t)
    while t != t1:
        t_next = t + direction * renormalize
        if direction * (t_next - t1) > 0:
            t_next = t1
        run = advance(system, q, xi, alpha, t, t_next, chart=chart,
                      frame=basis, control=control)
        if run.escaped:
            state = CotangentState(run.q[0], run.xi[0], run.chart)
            exc = BlowupError('frame base escapes at t={:.6g}'.format(run.t),
                              time=run.t, state=state)
            exc.growth = tuple(growth)
            raise exc
        q, xi, chart = run.q[0], run.xi[0], run.chart
        basis, r = _qr(run.frame[0])
        scale = r @ scale
        logs = logs + np.log(np.abs(np.diag(r)))
        growth.append((t_next, logs))
        t = t_next
    return LagrangeFrame(basis, CotangentState(q, xi, chart), float(t1), scale,
                         tuple(growth))


def _flow_state(system, state, alpha, t, control):
    run = advance(system, state.q, state.xi, alpha, 0.0, t, chart=state.chart,
                  control=control)
    if run.escaped:
        raise BlowupError('trajectory escapes at t={:.6g}'.format(run.t),
                          time=run.t)
    return CotangentState(run.q[0], run.xi[0], run.chart)


def pullback_curve(system, state, alpha, t, frame_field, control=None):
    """e^{-t h_alpha}_* of the subspace frame_field(zeta(t)), based at state."""
    if t == 0.0:
        return LagrangeFrame(frame_field(state).basis, state)
    control = control or StepControl()
    end = _flow_state(system, state, alpha, t, control)
    start = LagrangeFrame(frame_field(end).basis, end, time=float(t))
    back = propagate_frame(system, start, alpha, 0.0, control)
    basis = back.basis
    if back.base.chart != state.chart:
        jump = geometry.transition_jacobian(system.manifold, back.base.q,
                                            back.base.xi, back.base.chart,
                                            state.chart)
        basis, _ = _qr(jump @ basis)
    return LagrangeFrame(basis, state, 0.0, None, back.growth)


def jacobi_curve(system, state, alpha, t, control=None):
    """Jacobi curve J_z(t): the vertical fiber at zeta(t) pulled back to z."""
    return pullback_curve(system, state, alpha, t,
                          lambda s: vertical_frame(system, s), control)


def chart_coords(frame, origin, complement):
    """Symmetric coordinate S of a Lagrange subspace.

    The subspace is the span of origin + complement B; S symmetrizes
    sigma(origin, complement) B.

    Raises
    ------
    TransversalityError
        If the subspace meets the complement.
    """
    x, o, c = _basis(frame), _basis(origin), _basis(complement)
    k = o.shape[1]
    pair = np.hstack([o, c])
    if np.linalg.cond(pair) > COND_LIMIT:
        raise TransversalityError('origin and complement are not transversal')
    coeff = np.linalg.solve(pair, x)
    a, b = coeff[:k], coeff[k:]
    if np.linalg.cond(a) > COND_LIMIT:
        raise TransversalityError('subspace meets the chart complement')
    n = o.shape[0] // 2
    p = o.T @ omega(n) @ c
    s = p @ b @ np.linalg.inv(a)
    return GrassmannChartCoord(0.5 * (s + s.T))


def monotone_form(curve_sampler, t, h=1e-3):
    """Velocity form sigma(x, dx/dt) of a curve of Lagrange subspaces.

    Negative definite where the curve is monotone decreasing.

    Raises
    ------
    StepTooSmall
        If h is below the noise floor of the differencing.
    """
    if h <= 1e-7 * max(1.0, abs(t)):
        raise StepTooSmall('difference step {:.3g} too small at t={:.6g}'
                           .format(h, t))
    x = _basis(curve_sampler(t))
    dx = (_basis(curve_sampler(t + h)) - _basis(curve_sampler(t - h))) / (
        2.0 * h)
    n = x.shape[0] // 2
    m = x.T @ omega(n) @ dx
    return 0.5 * (m + m.T)


def _projections(system, state, alpha):
    metric, _ = jets(system, state.q, state.chart)
    gamma_xi = np.einsum('mkj,m->kj', metric.christoffel, state.xi)
    return gamma_xi + 0.5 * alpha * metric.g


def flow_curvature(system, state, alpha, eps=None):
    """Curvature of the flow on the vertical fiber, R v = -[h, [h, v]_hor]_ver.

    Vertical fields are constant in the chart; horizontal and vertical parts
    are taken in the D^alpha splitting. The outer bracket differentiates the
    inner one along h by central differences with one Richardson level.
    Returns the matrix acting on fiber covectors.
    """
    n = system.dim
    z = state.as_vector()
    if eps is None:
        eps = 1e-4 * (1.0 + np.linalg.norm(z))
    if eps < 1e-9:
        raise StepTooSmall('bracket step {:.3g} too small'.format(eps))
    vert = np.vstack([np.zeros((n, n)), np.eye(n)])

    def inner(point):
        s = CotangentState.from_vector(point, state.chart)
        jac = field_jacobian(system, s.q, s.xi, s.chart, alpha)
        bracket = -jac @ vert
        lift = _projections(system, s, alpha)
        return np.vstack([bracket[:n], lift @ bracket[:n]])

    dq, dxi = field_components(system, state.q, state.xi, state.chart, alpha)
    h = np.concatenate([dq, dxi])

    def along(step):
        return (inner(z + step * h) - inner(z - step * h)) / (2.0 * step)

    d_inner = (4.0 * along(0.5 * eps) - along(eps)) / 3.0
    jac = field_jacobian(system, state.q, state.xi, state.chart, alpha)
    outer = d_inner - jac @ inner(z)
    lift = _projections(system, state, alpha)
    return -(outer[n:] - lift @ outer[:n])


@dataclass(frozen=True, eq=False)
class HyperbolicSplit:
    """Invariant splitting E^- + E^+ at a point of the extremal locus."""

    E_minus: LagrangeFrame
    E_plus: LagrangeFrame
    rate_minus: float
    rate_plus: float
    epsilon_gap: float
    prefactors: tuple
    horizon: float
    transversal: bool

    def to_dict(self):
        return {'rate_minus': self.rate_minus, 'rate_plus': self.rate_plus,
                'epsilon_gap': self.epsilon_gap,
                'c_minus': self.prefactors[0], 'c_plus': self.prefactors[1],
                'horizon': self.horizon, 'transversal': self.transversal}


def _limit_frame(system, state, alpha, sign, tol, t_max, control):
    previous, last_angle, t_prev, t = None, np.inf, 0.0, 1.0
    while t <= t_max:
        try:
            frame = jacobi_curve(system, state, alpha, sign * t, control)
        except BlowupError as exc:
            if previous is None:
                raise ConvergenceError('flow escapes at t={:.3g} before the '
                                       'limit subspace settles'.format(
                                           sign * t))
            # last look just short of the escape
            t_last = 0.9 * abs(exc.time) if exc.time is not None else 0.0
            if t_last > t_prev:
                try:
                    late = jacobi_curve(system, state, alpha, sign * t_last,
                                        control)
                    angle = subspace_distance(late, previous)
                    if angle < min(last_angle, np.sqrt(tol)):
                        previous, last_angle, t_prev = late, angle, t_last
                except BlowupError:
                    pass
            if last_angle < np.sqrt(tol):
                log.warning('flow escapes at t=%.3g, keeping the frame of '
                            't=%.3g (angle %.2e)', sign * t, sign * t_prev,
                            last_angle)
                return previous, t_prev
            raise ConvergenceError('flow escapes at t={:.3g} before the '
                                   'limit subspace settles'.format(sign * t))
        if previous is not None:
            last_angle = subspace_distance(frame, previous)
            log.debug('t=%.3g angle to previous %.3e', sign * t, last_angle)
            if last_angle < tol:
                return frame, t
        previous, t_prev = frame, t
        t *= 2.0
    raise ConvergenceError('limit subspace did not settle by t={:.3g}'.format(
        t_max))


def lyapunov_rates(system, state, alpha, duration=10.0, control=None,
                   truncate=0.75):
    """Exponents and prefactors of the linearized flow along a trajectory.

    Fits log-norm growth of a QR-propagated basis of T_z(T*M); exponents
    are returned in descending order. When the base trajectory escapes
    the fit keeps the samples before ``truncate`` times the escape time.
    """
    n = system.dim
    frame = LagrangeFrame(np.eye(2 * n), state)
    try:
        frame = propagate_frame(system, frame, alpha, duration, control,
                                renormalize=0.5)
        growth = frame.growth
    except BlowupError as exc:
        log.info('rate estimate truncated at t=%.3g', exc.time)
        growth = tuple(g for g in getattr(exc, 'growth', ())
                       if g[0] <= truncate * exc.time)
    times = np.array([g[0] for g in growth])
    # fit the second half only, past the alignment transient
    late = times >= 0.5 * times[-1] if len(times) else times
    if np.count_nonzero(late) < 2:
        raise ConvergenceError('too few samples for a rate fit')
    logs = np.vstack([g[1] for g in growth])
    fit = np.polyfit(times[late], logs[late], 1)
    order = np.argsort(-fit[0])
    return fit[0][order], np.exp(fit[1][order])


def stable_unstable_split(system, state, alpha, tol=1e-7, t_max=40.0,
                          rate_time=10.0, control=None, on_graph=False):
    """E^- and E^+ as limits of the Jacobi curve, with measured rates.

    E^- is J_z(+T) and E^+ is J_z(-T) for T doubled until successive
    subspaces agree within ``tol``.

    With ``on_graph`` the caller vouches that z is a point of a computed
    invariant graph. Such a point sits off the exact locus by the grid
    error, which the forward flow amplifies along E^+ until it escapes, so
    the long forward boundedness test is skipped and only H(z) <= max U is
    checked.

    Raises
    ------
    NotOnLocusError
        If z is outside B_H or its forward trajectory escapes.
    ConvergenceError
        If the doubling does not settle before ``t_max``.
    """
    control = control or StepControl()
    max_u, _ = potential_range(system)
    if hamiltonian(system, state) > max_u + tol:
        raise NotOnLocusError('H(z) exceeds max U')
    if not on_graph:
        verdict = classify_boundedness(system, state, alpha)
        if verdict.kind == ESCAPED:
            raise NotOnLocusError('trajectory through z escapes at t={:.3g}'
                                  .format(verdict.time))
    e_minus, t_minus = _limit_frame(system, state, alpha, 1.0, tol, t_max,
                                    control)
    e_plus, t_plus = _limit_frame(system, state, alpha, -1.0, tol, t_max,
                                  control)
    exps, pref = lyapunov_rates(system, state, alpha, rate_time, control)
    n = system.dim
    rate_plus, rate_minus = float(exps[n - 1]), float(exps[n])
    gap = min(0.5 * alpha - rate_minus, rate_plus - 0.5 * alpha)

    transversal = True
    for name, frame in (('E-', e_minus), ('E+', e_plus)):
        smallest = np.linalg.svd(frame.basis[:n], compute_uv=False)[-1]
        if smallest < 1e-8:
            transversal = False
            log.warning('%s meets the vertical fiber (sv=%.2e)', name,
                        smallest)
    return HyperbolicSplit(e_minus, e_plus, rate_minus, rate_plus, gap,
                           (float(pref[n]), float(pref[n - 1])),
                           max(t_minus, t_plus), transversal)


def _split_coefficients(l0, l1, vectors):
    pair = np.hstack([_basis(l0), _basis(l1)])
    if np.linalg.cond(pair) > COND_LIMIT:
        raise TransversalityError('the two Lagrange subspaces intersect')
    return np.linalg.solve(pair, vectors)


def q_form(l0, l1, v):
    """sigma(v0, v1) for the decomposition v = v0 + v1 along L0 + L1."""
    a0 = _basis(l0)
    k = a0.shape[1]
    coeff = _split_coefficients(l0, l1, np.asarray(v, dtype=float))
    return sigma(a0 @ coeff[:k], _basis(l1) @ coeff[k:])


def q_matrix(l0, l1, vectors=None):
    """Symmetric matrix of v -> q_form(l0, l1, v) in the given basis."""
    a0, a1 = _basis(l0), _basis(l1)
    n = a0.shape[0] // 2
    k = a0.shape[1]
    vectors = np.eye(2 * n) if vectors is None else vectors
    coeff = _split_coefficients(l0, l1, vectors)
    m = coeff[:k].T @ a0.T @ omega(n) @ a1 @ coeff[k:]
    return 0.5 * (m + m.T)


def lyapunov_rate_check(system, state, alpha, dt=1e-3, control=None):
    """Smallest eigenvalue of L_X Q - alpha Q for Q = Q_{vertical, D^alpha}.

    The Lie derivative is the time derivative at 0 of the pullback of Q by
    the flow, by central differences with one Richardson level.
    """
    if dt < 1e-7:
        raise StepTooSmall('time step {:.3g} too small'.format(dt))
    control = control or StepControl()
    n = system.dim

    def q_here(s):
        return q_matrix(vertical_frame(system, s),
                        connection_D_alpha(system, s, alpha))

    def pulled(t):
        run = advance(system, state.q, state.xi, alpha, 0.0, t,
                      chart=state.chart, frame=np.eye(2 * n), control=control)
        if run.escaped:
            raise BlowupError('trajectory escapes', time=run.t)
        s = CotangentState(run.q[0], run.xi[0], run.chart)
        phi = run.frame[0]
        return phi.T @ q_here(s) @ phi

    def central(h):
        return (pulled(h) - pulled(-h)) / (2.0 * h)

    lie = (4.0 * central(0.5 * dt) - central(dt)) / 3.0
    form = lie - alpha * q_here(state)
    return float(np.linalg.eigvalsh(0.5 * (form + form.T))[0])


@dataclass(frozen=True)
class QRatio:
    q_d_alpha: np.ndarray
    q_d: np.ndarray
    q_delta: np.ndarray
    ratio: float
    deviation: float


def q_ratio_check(system, state, alpha):
    """Chart coordinates of D^alpha, D and the vertical fiber.

    In the chart with origin D^alpha and complement Delta^alpha the first
    vanishes and Q_D = alpha / (alpha + 2) Q_vertical.
    """
    origin = connection_D_alpha(system, state, alpha)
    complement = delta_alpha(system, state, alpha)
    s_da = chart_coords(origin, origin, complement).S
    s_d = chart_coords(levi_civita_horizontal(system, state), origin,
                       complement).S
    s_v = chart_coords(vertical_frame(system, state), origin, complement).S
    ratios = np.linalg.eigvals(np.linalg.solve(s_v, s_d)).real
    expected = alpha / (alpha + 2.0)
    deviation = float(max(np.max(np.abs(s_d - expected * s_v)),
                          np.max(np.abs(s_da))))
    return QRatio(s_da, s_d, s_v, float(np.mean(ratios)), deviation)


def locus_diagnostics(system, state, alpha, tangent=None, control=None,
                      on_graph=False):
    """Per-state record of the hyperbolicity diagnostics.

    With ``tangent`` (a frame of the graph tangent at the state) the record
    also holds its largest principal angle to E^-. ``field_angle`` is the
    angle of h_alpha(z) to E^-, None at rest points. A diagnostic that
    cannot be computed is recorded as None with its error under
    ``errors``; nothing is raised.
    """
    record = {'state': state.to_dict(), 'errors': {}}
    fields = ['rate_minus', 'rate_plus', 'epsilon_gap', 'field_angle']
    if tangent is not None:
        fields.append('tangency_angle')
    record.update(dict.fromkeys(fields))
    try:
        split = stable_unstable_split(system, state, alpha, control=control,
                                      on_graph=on_graph)
        record.update(rate_minus=split.rate_minus, rate_plus=split.rate_plus,
                      epsilon_gap=split.epsilon_gap)
        if tangent is not None:
            record['tangency_angle'] = subspace_distance(split.E_minus,
                                                         tangent)
        h = np.concatenate(field_components(system, state.q, state.xi,
                                            state.chart, alpha))
        if np.linalg.norm(h) > 1e-10:
            record['field_angle'] = angle_to_subspace(h, split.E_minus)
    except SynthesolError as exc:
        log.warning('split failed at %s: %s', state.to_dict(), exc)
        record['errors']['split'] = '{}: {}'.format(type(exc).__name__, exc)

    try:
        expected = (curvature_operator(system, state).matrix
                    - 0.25 * alpha * alpha * np.eye(system.dim))
        record['flow_curvature_residual'] = float(np.max(np.abs(
            flow_curvature(system, state, alpha) - expected)))
    except SynthesolError as exc:
        log.warning('flow curvature failed at %s: %s', state.to_dict(), exc)
        record['flow_curvature_residual'] = None
        record['errors']['flow_curvature'] = '{}: {}'.format(
            type(exc).__name__, exc)
    try:
        record['lyapunov_min_eig'] = lyapunov_rate_check(system, state, alpha,
                                                         control=control)
    except SynthesolError as exc:
        log.warning('rate check failed at %s: %s', state.to_dict(), exc)
        record['lyapunov_min_eig'] = None
        record['errors']['lyapunov_rate'] = '{}: {}'.format(
            type(exc).__name__, exc)
    return record
