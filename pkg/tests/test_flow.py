#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.flow`."""

import logging

import numpy as np
import pytest

from synthesol import flow
from synthesol.exceptions import BlowupError, DegenerateError
from synthesol.flow import CotangentState
from synthesol.geometry import ManifoldSpec, MechanicalSystem, PotentialSpec
from synthesol.synthesis import solve_shooting


def test_energy(pendulum):
    state = CotangentState([0.3], [0.5])
    assert flow.hamiltonian(pendulum, state) == pytest.approx(
        0.125 + np.cos(0.3))


def test_field_jacobian_matches_differences(sphere):
    q, xi = np.array([1.1, 0.4]), np.array([0.2, -0.3])
    alpha, h = 2.0, 1e-6
    jac = flow.field_jacobian(sphere, q, xi, 0, alpha)
    z = np.concatenate([q, xi])
    for j in range(4):
        dz = np.zeros(4)
        dz[j] = h
        plus = np.concatenate(flow.field_components(
            sphere, (z + dz)[:2], (z + dz)[2:], 0, alpha))
        minus = np.concatenate(flow.field_components(
            sphere, (z - dz)[:2], (z - dz)[2:], 0, alpha))
        assert jac[:, j] == pytest.approx((plus - minus) / (2 * h), abs=1e-7)


def test_pendulum_equilibria(pendulum):
    points = flow.find_equilibria(pendulum)
    assert len(points) == 2
    assert [p.q[0] for p in points] == pytest.approx([0.0, np.pi])
    assert [p.value for p in points] == pytest.approx([1.0, -1.0])
    assert not any(p.degenerate for p in points)


def test_pendulum_classification(pendulum):
    saddle = flow.classify_equilibrium(pendulum, [0.0], 3.0)
    assert saddle.type == flow.SADDLE
    assert saddle.eigenvalues.real == pytest.approx(
        [(3 + np.sqrt(13)) / 2, (3 - np.sqrt(13)) / 2])
    node = flow.classify_equilibrium(pendulum, [np.pi], 3.0)
    assert node.type == flow.NODE
    assert node.eigenvalues.real == pytest.approx(
        [(3 + np.sqrt(5)) / 2, (3 - np.sqrt(5)) / 2])


@pytest.mark.parametrize('alpha, kind', [
    (0.0, flow.CENTER), (1.0, flow.FOCUS), (1.9, flow.FOCUS),
    (2.1, flow.NODE)])
def test_node_threshold(pendulum, alpha, kind):
    assert flow.classify_equilibrium(pendulum, [np.pi], alpha).type == kind


def test_torus_block_types(torus):
    points = flow.find_equilibria(torus)
    assert len(points) == 4
    types = {tuple(np.round(p.q, 6)): flow.classify_equilibrium(
        torus, p.q, 3.0).block_types for p in points}
    assert types[(0.0, 0.0)] == (flow.SADDLE, flow.SADDLE)
    assert types[(round(np.pi, 6), round(np.pi, 6))] == (flow.NODE, flow.NODE)
    assert sorted(types[(0.0, round(np.pi, 6))]) == sorted(
        (flow.SADDLE, flow.NODE))


def test_degenerate_point_raises():
    flat = MechanicalSystem(ManifoldSpec.circle(), PotentialSpec(
        cos_coeffs=((2, 1.0),), sin_coeffs=()))
    assert flow.classify_equilibrium(flat, [0.0], 3.0).type == flow.SADDLE
    with pytest.raises(DegenerateError):
        flow.classify_equilibrium(MechanicalSystem(ManifoldSpec.circle()),
                                  [0.0], 3.0)


def test_energy_law_and_monotone_energy(pendulum):
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.uniform(0, 2 * np.pi)
        bound = np.sqrt(2 * (1 - np.cos(q)))
        state = CotangentState([q], [rng.uniform(-bound, bound)])
        traj = flow.integrate(pendulum, state, 3.0, 0.0, 5.0,
                              on_blowup='stop')
        scale = max(1.0, float(np.max(np.abs(traj.energies))))
        assert flow.energy_law_residual(pendulum, traj, 3.0) < 1e-8 * scale
        assert np.all(np.diff(traj.energies) >= -1e-10)


def test_dissipative_conjugation(pendulum):
    state = CotangentState([0.4], [0.3])
    forward = flow.integrate(pendulum, state, 3.0, 0.0, 0.5).final
    mirrored = flow.integrate(pendulum, flow.dissipative_conjugate(state),
                              -3.0, 0.0, -0.5).final
    assert mirrored.q == pytest.approx(forward.q, abs=1e-8)
    assert mirrored.xi == pytest.approx(-forward.xi, abs=1e-8)


def test_backward_times_are_decreasing(pendulum):
    traj = flow.integrate(pendulum, CotangentState([0.4], [0.0]), 3.0, 0.0,
                          -2.0)
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(-2.0)
    assert np.all(np.diff(traj.times) < 0)


def test_blowup(pendulum):
    state = CotangentState([0.0], [5.0])
    with pytest.raises(BlowupError) as info:
        flow.integrate(pendulum, state, 3.0, 0.0, 20.0)
    assert info.value.time < 20.0
    assert info.value.trajectory.escaped
    traj = flow.integrate(pendulum, state, 3.0, 0.0, 20.0, on_blowup='stop')
    assert traj.escaped
    assert flow.escape_bound_violation(pendulum, traj, 3.0) < 1e-6


def test_boundedness(pendulum):
    verdict = flow.classify_boundedness(pendulum, CotangentState([0.0], [0.0]),
                                        3.0)
    assert verdict.kind == flow.BOUNDED
    assert verdict.q_star == pytest.approx((0.0,))
    assert flow.classify_boundedness(
        pendulum, CotangentState([0.0], [5.0]), 3.0).kind == flow.ESCAPED


def test_sphere_trajectory_crosses_charts(sphere):
    state = CotangentState([1.2, 0.0], [-1.0, 0.0], 0)
    traj = flow.integrate(sphere, state, 1.0, 0.0, 1.5, on_blowup='stop')
    assert len(set(traj.charts.tolist())) == 2
    scale = max(1.0, float(np.max(np.abs(traj.energies))))
    assert flow.energy_law_residual(sphere, traj, 1.0) < 1e-8 * scale


def test_locus_point_is_bounded(pendulum, caplog):
    shot = solve_shooting(pendulum, [0.3], 16.0, 3.0)
    with caplog.at_level(logging.WARNING, logger='synthesol.flow'):
        verdict = flow.classify_boundedness(
            pendulum, CotangentState([0.3], shot.p_star), 3.0)
    assert verdict.kind == flow.BOUNDED
    assert verdict.q_star[0] == pytest.approx(0.0, abs=0.05)
    assert verdict.heuristic
    assert 'heuristic' in caplog.text


@pytest.mark.slow
def test_random_states_are_decided(pendulum):
    rng = np.random.default_rng(7)
    q = rng.uniform(0.0, 2 * np.pi, 100)
    xi = rng.uniform(-1.0, 1.0, 100) * np.sqrt(1.0 - np.cos(q)) * np.sqrt(2)
    kinds = [flow.classify_boundedness(
        pendulum, CotangentState([a], [b]), 3.0).kind for a, b in zip(q, xi)]
    assert flow.UNDECIDED not in kinds
