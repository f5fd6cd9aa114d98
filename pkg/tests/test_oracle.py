#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.oracle`."""

import numpy as np
import pytest

from synthesol import oracle, synthesis
from synthesol.exceptions import ConfigError
from synthesol.geometry import MechanicalSystem
from synthesol.oracle import DiscretePath


def _path(times, points, charts=None):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if charts is None:
        charts = np.zeros(len(times), dtype=int)
    return DiscretePath(np.asarray(times, dtype=float), points, charts)


def test_constant_path_action(pendulum):
    path = DiscretePath.constant(pendulum, [0.4], 10.0, 1000)
    assert path.knots == 1000
    assert path.tau == 10.0
    assert path.terminal_speed(pendulum) == 0.0
    exact = -np.cos(0.4) * (1 - np.exp(-30.0)) / 3.0
    assert oracle.discrete_action(pendulum, path, 3.0) == pytest.approx(
        exact, rel=1e-4)


def test_gradient_matches_differences(pendulum):
    rng = np.random.default_rng(2)
    times = np.linspace(0.0, 2.0, 101)
    path = _path(times, 0.5 + 0.3 * np.sin(times) + 0.01 * rng.normal(
        size=len(times)))
    _, grad = oracle.discrete_action(pendulum, path, 1.5, gradient=True)
    assert grad[0] == pytest.approx([0.0])
    h = 1e-6
    for j in (1, 37, 100):
        plus, minus = path.copy(), path.copy()
        plus.points[j] += h
        minus.points[j] -= h
        fd = (oracle.discrete_action(pendulum, plus, 1.5)
              - oracle.discrete_action(pendulum, minus, 1.5)) / (2 * h)
        assert grad[j, 0] == pytest.approx(fd, abs=1e-6)


def test_sphere_gradient_matches_differences(sphere):
    times = np.linspace(0.0, 1.0, 101)
    s = times[:, None]
    path = _path(times, np.hstack([1.0 + 0.3 * s, 0.2 + 0.5 * s ** 2]))
    _, grad = oracle.discrete_action(sphere, path, 2.0, gradient=True)
    h = 1e-6
    for j in (5, 50, 100):
        for i in range(2):
            plus, minus = path.copy(), path.copy()
            plus.points[j, i] += h
            minus.points[j, i] -= h
            fd = (oracle.discrete_action(sphere, plus, 2.0)
                  - oracle.discrete_action(sphere, minus, 2.0)) / (2 * h)
            assert grad[j, i] == pytest.approx(fd, abs=1e-6)


def test_midpoint_rule_is_second_order(pendulum):
    actions = []
    for knots in (100, 200, 400):
        times = np.linspace(0.0, 2.0, knots + 1)
        path = _path(times, 0.3 * np.sin(times))
        actions.append(oracle.discrete_action(pendulum, path, 1.0))
    ratio = (actions[0] - actions[1]) / (actions[1] - actions[2])
    assert ratio == pytest.approx(4.0, abs=0.2)


def test_minimum_knots(pendulum):
    with pytest.raises(ConfigError):
        oracle.minimize_free_endpoint(pendulum, [0.5], 5.0, 3.0, knots=50)


def test_free_particle_stays(free_circle):
    best = oracle.minimize_free_endpoint(free_circle, [1.0], 5.0, 3.0,
                                         knots=100, restarts=1)
    assert best.action == pytest.approx(0.0, abs=1e-12)
    assert np.all(best.points == 1.0)


def test_resting_on_the_maximum(pendulum):
    best = oracle.minimize_free_endpoint(pendulum, [0.0], 5.0, 3.0,
                                         knots=500, restarts=1)
    exact = -(1 - np.exp(-15.0)) / 3.0
    assert best.action == pytest.approx(exact, rel=1e-4)
    assert best.action <= oracle.discrete_action(
        pendulum, DiscretePath.constant(pendulum, [0.0], 5.0, 500), 3.0)


def test_extremal_path_at_rest_point(pendulum):
    path = oracle.extremal_path(pendulum, [0.0], 4.0, 3.0, knots=200)
    assert np.max(np.abs(path.points)) < 1e-9
    assert path.action == pytest.approx(oracle.discrete_action(
        pendulum, DiscretePath.constant(pendulum, [0.0], 4.0, 200), 3.0),
        abs=1e-9)


def test_extremal_path_stops_at_rest(pendulum):
    path = oracle.extremal_path(pendulum, [0.5], 4.0, 3.0, knots=400)
    assert path.points[0, 0] == 0.5
    assert path.terminal_speed(pendulum) < 1e-2
    # the maximum of U pulls the path from 0.5 towards 0
    assert 0.0 < path.points[-1, 0] < 0.5
    best = oracle.minimize_free_endpoint(pendulum, [0.5], 4.0, 3.0,
                                         knots=400, restarts=0)
    assert np.max(np.abs(best.points - path.points)) < 5e-3
    assert best.action <= path.action + 1e-6


@pytest.fixture(scope='module')
def pendulum_limit_field():
    system = MechanicalSystem.pendulum()
    return system, synthesis.converge_horizon(system, 3.0, density=256,
                                              threads=1)


@pytest.mark.slow
@pytest.mark.parametrize('q, tau', [(0.3, 10.0), (1.5, 10.0),
                                    (np.pi - 0.01, 20.0)])
def test_oracle_agrees_with_synthesis(pendulum_limit_field, q, tau):
    system, field = pendulum_limit_field
    report = oracle.compare_with_synthesis(system, [q], field, 3.0, tau=tau,
                                           knots=2000)
    assert report.delta_value < 1e-3
    assert report.delta_traj_sup < 5e-3
    assert report.tail_bound == pytest.approx(2 * np.exp(-3.0 * tau) / 3.0)
    assert report.to_dict()['knots'] == 2000
