#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Discounted characteristic flow on the cotangent bundle.

In the rescaled covector xi = e^{alpha t} p the extremal flow reads

    dq/dt  = g^-1 xi
    dxi/dt = -dU - 1/2 xi^T (d g^-1) xi + alpha xi

and the energy H = |xi|^2 / 2 + U grows at the rate alpha |xi|^2.
"""

import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh

from . import geometry
from .exceptions import BlowupError, DegenerateError, IntegrationError

log = logging.getLogger(__name__)

SADDLE = 'saddle'
NODE = 'unstable_node'
FOCUS = 'unstable_focus'
CENTER = 'center'
DEGENERATE = 'degenerate'

BOUNDED = 'bounded_to'
ESCAPED = 'escaped'
UNDECIDED = 'undecided'

DEGENERATE_TOL = 1e-8
CHART_MARGIN = 0.05


@dataclass(frozen=True)
class StepControl:
    """Tolerances of the embedded Runge-Kutta pair."""

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = 1e-2
    method: str = 'DOP853'

    def coarse(self, max_step=np.inf):
        return replace(self, max_step=max_step)


@dataclass(frozen=True, eq=False)
class CotangentState:
    """Point (q, xi) of the cotangent bundle in chart ``chart``."""

    q: np.ndarray
    xi: np.ndarray
    chart: int = 0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        if q.shape != xi.shape or q.ndim != 1:
            raise ValueError('q and xi must be vectors of equal length')
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'xi', xi)
        object.__setattr__(self, 'chart', int(self.chart))

    @classmethod
    def from_vector(cls, z, chart=0):
        z = np.asarray(z, dtype=float)
        n = len(z) // 2
        return cls(z[:n], z[n:], chart)

    @property
    def dim(self):
        return len(self.q)

    def as_vector(self):
        return np.concatenate([self.q, self.xi])

    def to_dict(self):
        return {'q': self.q.tolist(), 'xi': self.xi.tolist(),
                'chart': self.chart}


def _field(metric, pot, xi, alpha):
    dq = geometry.raise_index(metric, xi)
    dxi = (-pot.gradient
           - 0.5 * np.einsum('...iab,...a,...b->...i', metric.dg_inv, xi, xi)
           + alpha * xi)
    return dq, dxi


def _jacobian(metric, pot, xi, alpha):
    n = xi.shape[-1]
    shape = xi.shape[:-1]
    jac = np.empty(shape + (2 * n, 2 * n))
    jac[..., :n, :n] = np.einsum('...kij,...j->...ik', metric.dg_inv, xi)
    jac[..., :n, n:] = metric.g_inv
    jac[..., n:, :n] = -pot.second - 0.5 * np.einsum(
        '...kiab,...a,...b->...ik', metric.d2g_inv, xi, xi)
    jac[..., n:, n:] = (-np.einsum('...ijb,...b->...ij', metric.dg_inv, xi)
                        + alpha * np.eye(n))
    return jac


def jets(system, q, chart=0):
    metric = system.metric_jet(q, chart)
    return metric, system.potential_jet(q, chart, metric)


def energy(system, q, xi, chart=0):
    """Vectorized H = |xi|^2 / 2 + U(q)."""
    metric, pot = jets(system, q, chart)
    xi = np.asarray(xi, dtype=float)
    return 0.5 * geometry.co_norm(metric, xi) ** 2 + pot.value


def hamiltonian(system, state):
    """Energy of a single state."""
    return float(energy(system, state.q, state.xi, state.chart))


def field_components(system, q, xi, chart, alpha):
    metric, pot = jets(system, q, chart)
    return _field(metric, pot, np.asarray(xi, dtype=float), alpha)


def vector_field_h_alpha(system, state, alpha):
    """Tangent (dq, dxi) of the discounted flow at a state."""
    dq, dxi = field_components(system, state.q, state.xi, state.chart, alpha)
    return dq, dxi


def field_jacobian(system, q, xi, chart, alpha):
    """Analytic 2n x 2n Jacobian of the field in (q, xi) coordinates."""
    metric, pot = jets(system, q, chart)
    return _jacobian(metric, pot, np.asarray(xi, dtype=float), alpha)


def dissipative_conjugate(state):
    """Fiber reflection z -> -z, conjugating h_alpha with -h_{-alpha}."""
    return CotangentState(state.q, -state.xi, state.chart)


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    q: np.ndarray
    chart: int
    value: float
    hessian_eigenvalues: np.ndarray
    degenerate: bool


def _newton_critical(system, q, chart, iterations=60):
    manifold = system.manifold
    for _ in range(iterations):
        pot = system.potential_jet(q, chart)
        step = np.einsum('...ij,...j->...i', np.linalg.pinv(pot.second),
                         pot.gradient)
        length = np.linalg.norm(step, axis=-1, keepdims=True)
        step = step * np.minimum(1.0, 0.5 / np.maximum(length, 1e-300))
        if np.max(length) < 1e-15:
            break
        q, chart = geometry.normalize_point(manifold, q - step, chart)
    return q, np.atleast_1d(chart)


@functools.lru_cache(maxsize=32)
def _critical_points(system, density):
    manifold = system.manifold
    q, chart = geometry.sample_grid(manifold, density)
    q, chart = _newton_critical(system, q, chart)
    pot = system.potential_jet(q, chart)
    metric = system.metric_jet(q, chart)
    gnorm = geometry.co_norm(metric, pot.gradient)
    scale = max(1.0, float(np.max(np.abs(pot.value))))
    ok = gnorm < 1e-9 * scale

    found = []
    for i in np.flatnonzero(ok):
        qi, ci = q[i], int(chart[i])
        if manifold.flat:
            wrapped = geometry.wrap_difference(manifold, qi)
            qi = np.where(np.abs(wrapped) < 1e-12, 0.0, qi)
        if any(geometry.distance(manifold, qi, ci, other.q, other.chart) < 1e-6
               for other in found):
            continue
        mu = eigh(pot.hessian[i], metric.g[i], eigvals_only=True)
        found.append(CriticalPoint(qi.copy(), ci, float(pot.value[i]), mu,
                                   bool(np.min(np.abs(mu)) < DEGENERATE_TOL)))
    if manifold.flat:
        found.sort(key=lambda c: tuple(np.round(c.q, 9)))
    else:
        found.sort(key=lambda c: tuple(np.round(geometry.embed(c.q, c.chart),
                                                9)))
    return tuple(found)


def find_equilibria(system, density=32):
    """Critical points of U, i.e. the zero covectors of C_H.

    Grid seeds are refined by Newton's method on dU = 0 and deduplicated
    by chart-independent distance. Non-Morse points are flagged as
    degenerate rather than dropped.
    """
    points = list(_critical_points(system, int(density)))
    n_degenerate = sum(c.degenerate for c in points)
    if n_degenerate:
        log.warning('%d degenerate critical points: U is not a Morse function',
                    n_degenerate)
    return points


@functools.lru_cache(maxsize=32)
def potential_range(system):
    """(max U, min U) over the manifold."""
    values = [c.value for c in _critical_points(system, 32)]
    q, chart = geometry.sample_grid(system.manifold, 64)
    grid_values = system.potential_jet(q, chart).value
    return (max(max(values, default=-np.inf), float(np.max(grid_values))),
            min(min(values, default=np.inf), float(np.min(grid_values))))


def escape_bound(system):
    """Covector norm beyond which a trajectory is declared escaping."""
    max_u, min_u = potential_range(system)
    return 10.0 * np.sqrt(2.0 * (max_u - min_u)) + 10.0


@dataclass(frozen=True, eq=False)
class EquilibriumInfo:
    """Linear type of a zero covector over a critical point."""

    q_star: np.ndarray
    chart: int
    potential_value: float
    eigenvalues: np.ndarray
    type: str
    block_types: tuple
    hessian_eigenvalues: np.ndarray


def _block_type(mu, alpha):
    if mu < 0.0:
        return SADDLE
    if alpha == 0.0:
        return CENTER
    if alpha * alpha >= 4.0 * mu:
        return NODE
    return FOCUS


def classify_equilibrium(system, q_star, alpha, chart=0):
    """Eigenvalues and type of the linearized flow at 0_{q*}.

    Each eigenvalue mu of the Hessian relative to g gives the pair of roots
    of lambda^2 - alpha lambda + mu = 0.

    Raises
    ------
    DegenerateError
        If the Hessian has a vanishing eigenvalue.
    """
    q_star = geometry.as_points(system.manifold, q_star)
    metric, pot = jets(system, q_star, chart)
    mu = eigh(pot.hessian, metric.g, eigvals_only=True)
    if np.min(np.abs(mu)) < DEGENERATE_TOL:
        raise DegenerateError('degenerate critical point at q={}'.format(
            q_star.tolist()))
    jac = _jacobian(metric, pot, np.zeros_like(q_star), alpha)
    eig = np.linalg.eigvals(jac).astype(complex)
    eig = eig[np.lexsort((-eig.imag, -eig.real))]
    blocks = tuple(_block_type(m, alpha) for m in mu)
    if SADDLE in blocks:
        kind = SADDLE
    elif CENTER in blocks:
        kind = CENTER
    elif FOCUS in blocks:
        kind = FOCUS
    else:
        kind = NODE
    return EquilibriumInfo(q_star, int(chart), float(pot.value), eig, kind,
                           blocks, mu)


# -- integration engine ------------------------------------------------------


@dataclass(eq=False)
class Segment:
    """Accepted steps integrated in a single chart."""

    t: np.ndarray
    y: np.ndarray
    chart: int
    sol: object = None


@dataclass(eq=False)
class FlowRun:
    q: np.ndarray
    xi: np.ndarray
    frame: np.ndarray
    chart: int
    t: float
    escaped: bool = False
    segments: list = field(default_factory=list)


def _pack(q, xi, frame):
    parts = [q, xi]
    if frame is not None:
        parts.append(frame.reshape(len(q), -1))
    return np.concatenate(parts, axis=1).ravel()


def _unpack(y, count, n, cols):
    rows = y.reshape(count, -1)
    frame = None
    if cols:
        frame = rows[:, 2 * n:].reshape(count, 2 * n, cols).copy()
    return rows[:, :n].copy(), rows[:, n:2 * n].copy(), frame


def _make_rhs(system, alpha, chart, count, n, cols):
    def rhs(t, y):
        rows = y.reshape(count, -1)
        q, xi = rows[:, :n], rows[:, n:2 * n]
        metric, pot = jets(system, q, chart)
        dq, dxi = _field(metric, pot, xi, alpha)
        out = [dq, dxi]
        if cols:
            frame = rows[:, 2 * n:].reshape(count, 2 * n, cols)
            out.append((_jacobian(metric, pot, xi, alpha) @ frame).reshape(
                count, -1))
        return np.concatenate(out, axis=1).ravel()
    return rhs


def _escape_event(system, chart, count, n, bound):
    def event(t, y):
        rows = y.reshape(count, -1)
        metric = system.metric_jet(rows[:, :n], chart)
        return np.max(geometry.co_norm(metric, rows[:, n:2 * n])) - bound
    event.terminal = True
    event.direction = 1
    return event


def _chart_event(manifold, chart, n):
    def event(t, y):
        p = geometry.embed(y[:n], chart)
        active = geometry.pole_distance(p, chart)
        other = geometry.pole_distance(p, 1 - chart)
        return active - min(manifold.sphere_chart_switch, other - CHART_MARGIN)
    event.terminal = True
    event.direction = -1
    return event


def advance(system, q, xi, alpha, t0, t1, chart=0, frame=None, control=None,
            escape=True, dense=False, keep=False):
    """Integrate states (rows of q, xi) and an attached frame from t0 to t1.

    Sphere trajectories are moved to the other chart when they approach the
    active chart's pole; the frame follows through the derivative of the
    chart transition. Integration stops early, with ``escaped`` set, once a
    covector norm crosses the escape bound.

    Parameters
    ----------
    q, xi : array (N, n) or (n,)
        Initial states. The sphere is advanced one state at a time.
    frame : array (N, 2n, k), optional
        Tangent vectors transported by the linearized flow.
    dense, keep : bool
        Keep the accepted steps (and the dense interpolants) per segment.
    """
    manifold = system.manifold
    control = control or StepControl()
    q = np.atleast_2d(np.asarray(q, dtype=float)).copy()
    xi = np.atleast_2d(np.asarray(xi, dtype=float)).copy()
    count, n = q.shape
    if not manifold.flat and count != 1:
        raise ValueError('sphere states are advanced one at a time')
    cols = 0
    if frame is not None:
        frame = np.asarray(frame, dtype=float).reshape(count, 2 * n, -1).copy()
        cols = frame.shape[-1]
    chart = int(np.atleast_1d(chart)[0])
    bound = escape_bound(system) if escape else None

    run = FlowRun(q, xi, frame, chart, float(t0))
    if escape:
        metric = system.metric_jet(q, chart)
        if np.max(geometry.co_norm(metric, xi)) > bound:
            run.escaped = True
            return run

    t = float(t0)
    while t != t1:
        if not manifold.flat and _chart_event(manifold, chart, n)(
                t, q[0]) < 0.0:
            q, xi, frame, chart = _switch_chart(manifold, q, xi, frame, chart)
            run.q, run.xi, run.frame, run.chart = q, xi, frame, chart
        events = []
        if escape:
            events.append(_escape_event(system, chart, count, n, bound))
        if not manifold.flat:
            events.append(_chart_event(manifold, chart, n))
        sol = solve_ivp(_make_rhs(system, alpha, chart, count, n, cols),
                        (t, t1), _pack(q, xi, frame), method=control.method,
                        rtol=control.rtol, atol=control.atol,
                        max_step=control.max_step, dense_output=dense,
                        events=events or None)
        if sol.status == -1:
            raise IntegrationError(sol.message)
        if keep or dense:
            run.segments.append(Segment(sol.t, sol.y.T.reshape(len(sol.t),
                                                               count, -1),
                                        chart, sol.sol))
        q, xi, frame = _unpack(sol.y[:, -1], count, n, cols)
        t = float(sol.t[-1])
        run.q, run.xi, run.frame, run.t = q, xi, frame, t
        if sol.status != 1:
            break
        if escape and sol.t_events[0].size:
            run.escaped = True
            log.debug('escape bound %.3g crossed at t=%.6g', bound, t)
            break
        q, xi, frame, chart = _switch_chart(manifold, q, xi, frame, chart)
        log.debug('chart %d -> %d at t=%.6g', 1 - chart, chart, t)
        run.q, run.xi, run.frame, run.chart = q, xi, frame, chart
    return run


def _switch_chart(manifold, q, xi, frame, chart):
    new_chart = 1 - chart
    if frame is not None:
        jump = geometry.transition_jacobian(manifold, q[0], xi[0], chart,
                                            new_chart)
        frame = jump @ frame
    q, xi = geometry.change_chart(manifold, q, xi, chart, new_chart)
    return q, xi, frame, new_chart


@dataclass(eq=False)
class Trajectory:
    """Samples of e^{t h_alpha}(z) at the accepted integrator steps.

    Times are monotone in the direction of integration.
    """

    times: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    charts: np.ndarray
    energies: np.ndarray
    segments: list
    escaped: bool = False

    def __len__(self):
        return len(self.times)

    @property
    def states(self):
        return [CotangentState(q, xi, c)
                for q, xi, c in zip(self.q, self.xi, self.charts)]

    @property
    def final(self):
        return CotangentState(self.q[-1], self.xi[-1], self.charts[-1])

    def at(self, t):
        """Dense-output state at time t."""
        for seg in self.segments:
            lo, hi = sorted((seg.t[0], seg.t[-1]))
            if lo <= t <= hi:
                return CotangentState.from_vector(seg.sol(t), seg.chart)
        raise ValueError('t={} outside the trajectory'.format(t))


def _trajectory(system, run):
    times, qs, xis, charts, energies = [], [], [], [], []
    for i, seg in enumerate(run.segments):
        rows = seg.y[:, 0, :]
        start = 1 if i else 0
        n = system.dim
        q, xi = rows[start:, :n], rows[start:, n:2 * n]
        times.append(seg.t[start:])
        qs.append(q)
        xis.append(xi)
        charts.append(np.full(len(q), seg.chart, dtype=int))
        energies.append(energy(system, q, xi, seg.chart))
    return Trajectory(np.concatenate(times), np.concatenate(qs),
                      np.concatenate(xis), np.concatenate(charts),
                      np.concatenate(energies), run.segments, run.escaped)


def integrate(system, state, alpha, t0, t1, control=None, on_blowup='raise'):
    """Integrate the discounted flow from ``state`` at t0 to t1.

    ``t1 < t0`` integrates backward. With ``on_blowup='stop'`` an escaping
    trajectory is returned truncated with ``escaped`` set.

    Raises
    ------
    BlowupError
        When the covector norm crosses the escape bound and
        ``on_blowup='raise'``.
    """
    run = advance(system, state.q, state.xi, alpha, t0, t1, chart=state.chart,
                  control=control, dense=True, keep=True)
    if not run.segments:
        traj = Trajectory(np.array([float(t0)]), state.q[None], state.xi[None],
                          np.array([state.chart]),
                          np.atleast_1d(energy(system, state.q, state.xi,
                                               state.chart)),
                          [], run.escaped)
    else:
        traj = _trajectory(system, run)
    if traj.escaped and on_blowup == 'raise':
        raise BlowupError('trajectory escapes at t={:.6g}'.format(run.t),
                          time=run.t, state=traj.final, trajectory=traj)
    return traj


def _windows(t, min_span):
    kept = [0]
    for i in range(1, len(t)):
        if abs(t[i] - t[kept[-1]]) >= min_span:
            kept.append(i)
    if kept[-1] != len(t) - 1:
        if len(kept) > 1:
            kept[-1] = len(t) - 1
        else:
            kept.append(len(t) - 1)
    return np.array(kept)


def energy_law_residual(system, trajectory, alpha, min_span=1e-4):
    """Largest deviation from dH/dt = alpha |xi|^2 along a trajectory.

    dH/dt is the secant of H over consecutive accepted steps (merged so
    that no window is shorter than ``min_span``); the right-hand side is its
    window average by 3-point Gauss-Legendre on the dense output.
    """
    nodes, weights = np.polynomial.legendre.leggauss(3)
    n = system.dim
    worst = 0.0
    for seg in trajectory.segments:
        if len(seg.t) < 2:
            continue
        idx = _windows(seg.t, min_span)
        t = seg.t[idx]
        rows = seg.y[idx, 0, :]
        h = energy(system, rows[:, :n], rows[:, n:2 * n], seg.chart)
        dt = np.diff(t)
        secant = np.diff(h) / dt
        mid, half = 0.5 * (t[:-1] + t[1:]), 0.5 * dt
        rate = np.zeros_like(secant)
        for x, w in zip(nodes, weights):
            y = seg.sol(mid + half * x).T
            metric = system.metric_jet(y[:, :n], seg.chart)
            rate += 0.5 * w * alpha * geometry.co_norm(metric,
                                                       y[:, n:2 * n]) ** 2
        worst = max(worst, float(np.max(np.abs(secant - rate))))
    return worst


def escape_bound_violation(system, trajectory, alpha):
    """Largest shortfall of H below the escape growth law.

    Once H(t0) > max U, H(t) >= e^{2 alpha (t - t0)} (H(t0) - max U) + max U.
    Returns 0 when the trajectory never leaves B_H.
    """
    max_u, _ = potential_range(system)
    outside = np.flatnonzero(trajectory.energies > max_u)
    if not len(outside):
        return 0.0
    k = outside[0]
    t = trajectory.times[k:]
    h = trajectory.energies[k:]
    bound = np.exp(2.0 * alpha * np.abs(t - t[0])) * (h[0] - max_u) + max_u
    return float(max(0.0, np.max(bound - h)))


@dataclass(frozen=True)
class Boundedness:
    """Verdict of classify_boundedness."""

    kind: str
    q_star: tuple = None
    chart: int = 0
    time: float = 0.0
    heuristic: bool = False


@functools.lru_cache(maxsize=64)
def _linear_zones(system, alpha):
    zones = []
    for point in find_equilibria(system):
        if point.degenerate:
            continue
        jac = field_jacobian(system, point.q, np.zeros_like(point.q),
                             point.chart, alpha)
        w, vec = np.linalg.eig(jac)
        unstable = w.real >= 0.0
        zones.append((point, vec, np.linalg.inv(vec), unstable))
    return tuple(zones)


def _deviation(system, q, xi, charts, point):
    manifold = system.manifold
    q = np.array(q)
    xi = np.array(xi)
    if not manifold.flat:
        other = charts != point.chart
        if np.any(other):
            q[other], xi[other] = geometry.change_chart(
                manifold, q[other], xi[other], 1 - point.chart, point.chart)
    dq = geometry.wrap_difference(manifold, q - point.q)
    return np.concatenate([dq, xi], axis=1)


def classify_boundedness(system, state, alpha, t_max=50.0, eps=1e-6,
                         dwell=5.0, linear_radius=0.05, linear_ratio=0.1,
                         chunk=1.0, control=None):
    """Decide whether the forward trajectory escapes or converges.

    ``escaped`` as soon as H exceeds max U. ``bounded_to`` when the state
    stays in the eps-ball of an equilibrium for ``dwell`` time units, or
    when it enters the linear zone of a hyperbolic equilibrium with a
    negligible component along the non-contracting eigendirections; the
    latter verdict is flagged heuristic.
    """
    control = control or StepControl(max_step=0.1)
    max_u, _ = potential_range(system)
    tol = 1e-9 * max(1.0, abs(max_u))
    if hamiltonian(system, state) > max_u + tol:
        return Boundedness(ESCAPED)
    zones = _linear_zones(system, alpha)

    inside_since, inside_of = None, None
    t, current = 0.0, state
    while t < t_max:
        traj = integrate(system, current, alpha, t, min(t + chunk, t_max),
                         control, on_blowup='stop')
        if np.any(traj.energies > max_u + tol) or traj.escaped:
            hit = np.flatnonzero(traj.energies > max_u + tol)
            when = traj.times[hit[0]] if len(hit) else traj.times[-1]
            return Boundedness(ESCAPED, time=float(when))
        dev = [_deviation(system, traj.q, traj.xi, traj.charts, zone[0])
               for zone in zones]
        for k, when in enumerate(traj.times):
            for j, (point, vec, vec_inv, unstable) in enumerate(zones):
                d = dev[j][k]
                dist = np.linalg.norm(d)
                if dist < eps:
                    if inside_of != j:
                        inside_since, inside_of = when, j
                    elif when - inside_since >= dwell:
                        return Boundedness(BOUNDED, tuple(point.q),
                                           point.chart, float(when))
                    break
                if inside_of == j:
                    inside_since, inside_of = None, None
                if 0.0 < dist < linear_radius and not unstable.all():
                    coeff = vec_inv @ d
                    part = np.linalg.norm(vec[:, unstable] @ coeff[unstable])
                    if part <= linear_ratio * dist:
                        log.warning('heuristic linear-zone acceptance near '
                                    'q=%s at t=%.3g',
                                    point.q.tolist(), when)
                        return Boundedness(BOUNDED, tuple(point.q),
                                           point.chart, float(when), True)
        current = traj.final
        t = float(traj.times[-1])
    log.warning('boundedness undecided after t=%.3g', t_max)
    return Boundedness(UNDECIDED, time=float(t_max))
