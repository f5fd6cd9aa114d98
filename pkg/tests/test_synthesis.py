#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.synthesis`."""

import numpy as np
import pytest

from synthesol import synthesis
from synthesol.exceptions import ConfigError, NoConvergenceError
from synthesol.geometry import ManifoldSpec, MechanicalSystem


@pytest.fixture(scope='module')
def pendulum_field():
    """Horizon-8 section of the pendulum at alpha = 3 on 32 nodes."""
    return synthesis.build_field(MechanicalSystem.pendulum(), 3.0, 8.0,
                                 density=32, threads=1)


def test_make_grid_flat():
    grid = synthesis.make_grid(ManifoldSpec.torus(2), 8)
    patch, = grid.patches
    assert patch.shape == (8, 8)
    assert grid.size == 64
    assert patch.periodic == (True, True)
    assert sorted(patch.neighbours(0)) == sorted([56, 8, 7, 1])


def test_make_grid_sphere():
    grid = synthesis.make_grid(ManifoldSpec.sphere(), 8)
    assert [p.chart for p in grid.patches] == [0, 1]
    assert grid.size == (8 + 1) ** 2 - 1
    phi = grid.patches[0].axes[0]
    assert phi[0] == pytest.approx(np.pi / 4)
    assert phi[-1] == pytest.approx(3 * np.pi / 4)
    # non-periodic colatitude has one neighbour at the band edge
    assert len(grid.patches[0].neighbours(0)) == 3


def test_make_grid_rejects_tiny_density():
    with pytest.raises(ConfigError):
        synthesis.make_grid(ManifoldSpec.circle(), 3)


def test_shooting_at_equilibrium(pendulum):
    result = synthesis.solve_shooting(pendulum, [0.0], 4.0, 3.0)
    assert result.newton_iters == 0
    assert result.p_star == pytest.approx([0.0], abs=1e-14)


def test_forward_and_reverse_agree(pendulum):
    reverse = synthesis.solve_shooting(pendulum, [0.5], 1.0, 3.0)
    forward = synthesis.solve_shooting(pendulum, [0.5], 1.0, 3.0,
                                       method='forward')
    assert forward.p_star == pytest.approx(reverse.p_star, abs=1e-8)
    xi = synthesis.transversality_residual(pendulum, [0.5], reverse.p_star,
                                           1.0, 3.0)
    assert np.linalg.norm(xi) < 1e-8


def test_shooting_rejects_unknown_method(pendulum):
    with pytest.raises(ValueError):
        synthesis.solve_shooting(pendulum, [0.5], 1.0, 3.0, method='sideways')


def test_pendulum_field(pendulum_field):
    field = pendulum_field
    assert not field.partial
    q = field.grid.patches[0].points()[:, 0]
    psi = field.psi[0][:, 0]
    u = field.u[0]
    at_zero, at_pi = 0, len(q) // 2
    assert q[at_pi] == pytest.approx(np.pi)
    assert psi[at_zero] == pytest.approx(0.0, abs=1e-8)
    assert psi[at_pi] == pytest.approx(0.0, abs=1e-8)
    assert u[at_zero] == pytest.approx(1.0 / 3.0, abs=1e-8)
    assert u[at_pi] == pytest.approx(-1.0 / 3.0, abs=1e-8)
    assert field.residuals['hj_spread'] < 1e-2
    assert field.residuals['exactness'] < 1e-2
    assert field.V[0] == pytest.approx(field.psi[0])


def test_interpolant_reproduces_nodes(pendulum_field):
    interp = pendulum_field.interpolant()
    q = pendulum_field.grid.patches[0].points()
    assert interp.covector(q) == pytest.approx(pendulum_field.psi[0],
                                               abs=1e-12)
    assert interp.covector(q + 2 * np.pi) == pytest.approx(
        pendulum_field.psi[0], abs=1e-10)


def test_columns_round_trip(pendulum_field, pendulum):
    columns = pendulum_field.to_columns()
    assert list(columns) == ['q1', 'psi1', 'u', 'V1']
    rebuilt = synthesis.field_from_columns(pendulum, 3.0, columns, 8.0)
    assert rebuilt.psi[0] == pytest.approx(pendulum_field.psi[0])
    assert rebuilt.u[0] == pytest.approx(pendulum_field.u[0])
    columns['q1'] = columns['q1'] + 0.1
    with pytest.raises(ConfigError):
        synthesis.field_from_columns(pendulum, 3.0, columns)


def test_residual_report(pendulum_field):
    report = pendulum_field.residual_report()
    assert report['tau_final'] == 8.0
    assert report['failed_nodes'] == 0
    assert set(report) == {'tau_final', 'hj_spread', 'exactness',
                           'invariance', 'failed_nodes', 'outside_regime',
                           'history'}


def test_free_particle_is_trivial(free_circle):
    field = synthesis.converge_horizon(free_circle, 3.0, schedule=(2.0, 4.0),
                                       density=16, certified=True, threads=1)
    assert field.tau_final == 4.0
    assert np.all(field.psi[0] == 0.0)
    assert field.residuals['hj_spread'] == pytest.approx(0.0, abs=1e-14)
    assert field.residuals['invariance'] == pytest.approx(0.0, abs=1e-14)
    assert [h['tau'] for h in field.history] == [2.0, 4.0]
    assert field.history[-1]['sup_change'] == 0.0


def test_schedule_must_increase(free_circle):
    with pytest.raises(ConfigError):
        synthesis.converge_horizon(free_circle, 3.0, schedule=(4.0, 2.0),
                                   density=16, certified=True)


@pytest.mark.slow
def test_pendulum_converges(pendulum):
    field = synthesis.converge_horizon(pendulum, 3.0, density=64, threads=1)
    assert field.tau_final <= 32.0
    assert not field.outside_regime
    assert field.residuals['invariance'] < 1e-3


@pytest.mark.slow
def test_pendulum_below_threshold_has_several_basins(pendulum):
    with pytest.raises(NoConvergenceError):
        synthesis.converge_horizon(pendulum, 1.0, density=32, threads=1)


def _hand_field(system, density, psi):
    grid = synthesis.make_grid(system.manifold, density)
    return synthesis.SynthesisField(system, 3.0, grid, psi, 8.0)


def test_value_function_with_failed_node():
    system = MechanicalSystem(ManifoldSpec.sphere())
    grid = synthesis.make_grid(system.manifold, 8)
    psi = [np.zeros((p.size, 2)) for p in grid.patches]
    psi[0][17] = np.nan
    field = _hand_field(system, 8, psi)
    field.failed = [synthesis._bad_nodes(p) for p in psi]
    synthesis.value_function(field, 3.0)
    assert np.flatnonzero(np.isnan(field.u[0])).tolist() == [17]
    assert not np.any(np.isnan(field.u[1]))
    assert field.residuals['hj_spread'] == pytest.approx(0.0, abs=1e-12)
    assert synthesis.exactness_residual(field) == pytest.approx(0.0,
                                                                abs=1e-12)
    q = np.vstack([p.points() for p in grid.patches[:1]])
    assert np.all(np.isfinite(field.interpolant().covector(q, 0)))
    assert field.partial


def test_failed_nodes_are_filled_from_neighbours(free_circle):
    grid = synthesis.make_grid(free_circle.manifold, 16)
    values = np.ones((16, 1))
    values[[4, 5]] = np.nan
    filled = synthesis._filled(grid.patches[0], values)
    assert np.all(filled == 1.0)
    assert np.isnan(values[4, 0])


def test_exactness_of_a_differential(free_circle):
    q = synthesis.make_grid(free_circle.manifold, 64).patches[0].points()
    field = _hand_field(free_circle, 64, [np.cos(q)])
    assert synthesis.exactness_residual(field) < 1e-8


def test_exactness_detects_winding(free_circle):
    field = _hand_field(free_circle, 64, [np.ones((64, 1))])
    assert synthesis.exactness_residual(field) == pytest.approx(2 * np.pi,
                                                                rel=1e-9)


@pytest.mark.slow
def test_torus_field_is_closed(torus):
    field = synthesis.converge_horizon(torus, 3.0, density=48, threads=1)
    assert field.residuals['exactness'] < 1e-4
    assert field.failed_nodes == 0
