#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.geometry`."""

import numpy as np
import pytest

from synthesol import geometry
from synthesol.exceptions import ChartDomainError, ConfigError
from synthesol.geometry import ManifoldSpec, MechanicalSystem, PotentialSpec


def test_manifold_defaults():
    assert ManifoldSpec.circle().periods == (2 * np.pi,)
    assert ManifoldSpec.torus(2).periods == (2 * np.pi, 2 * np.pi)
    assert ManifoldSpec.sphere().periods is None
    assert ManifoldSpec.sphere().charts == (0, 1)
    assert ManifoldSpec.circle().sectional_bound == 0.0
    assert ManifoldSpec.sphere().sectional_bound == 1.0


@pytest.mark.parametrize('kwargs', [
    {'kind': 'klein_bottle', 'dim': 2},
    {'kind': 'circle', 'dim': 2},
    {'kind': 'sphere', 'dim': 2, 'periods': (1.0, 1.0)},
    {'kind': 'flat_torus', 'dim': 2, 'periods': (1.0, -1.0)},
])
def test_manifold_rejects(kwargs):
    with pytest.raises(ConfigError):
        ManifoldSpec(**kwargs)


def test_potential_must_match_manifold():
    with pytest.raises(ConfigError):
        MechanicalSystem(ManifoldSpec.circle(), PotentialSpec(
            sphere={'z': 1.0}))
    with pytest.raises(ConfigError):
        MechanicalSystem(ManifoldSpec.torus(2), PotentialSpec.pendulum())
    with pytest.raises(ConfigError):
        PotentialSpec(sphere={'w': 1.0})


def test_wrap_and_normalize():
    circle = ManifoldSpec.circle()
    assert geometry.wrap_difference(circle, [2 * np.pi - 0.1])[0] == \
        pytest.approx(-0.1)
    q, chart = geometry.normalize_point(circle, [7.0])
    assert q[0] == pytest.approx(7.0 - 2 * np.pi)
    assert chart == 0


def test_pendulum_jets(pendulum):
    q = np.array([[0.3], [np.pi]])
    pot = pendulum.potential_jet(q)
    assert pot.value == pytest.approx(np.cos(q[:, 0]))
    assert pot.gradient[:, 0] == pytest.approx(-np.sin(q[:, 0]), abs=1e-15)
    assert pot.hessian[:, 0, 0] == pytest.approx(-np.cos(q[:, 0]))
    metric = pendulum.metric_jet(q)
    assert np.allclose(metric.g, 1.0)
    assert np.allclose(metric.riemann, 0.0)


def test_sphere_chart_round_trip():
    q = np.array([1.0, 2.0])
    for chart in (0, 1):
        p = geometry.embed(q, chart)
        assert np.linalg.norm(p) == pytest.approx(1.0)
        assert geometry.sphere_chart_coords(p, chart) == pytest.approx(q)


def test_sphere_change_chart_preserves_pairing():
    sphere = ManifoldSpec.sphere()
    rng = np.random.default_rng(4)
    q = np.array([1.1, 0.7])
    xi = rng.normal(size=2)
    v = rng.normal(size=2)
    q_new, xi_new = geometry.change_chart(sphere, q, xi, 0, 1)
    v_new = geometry.point_jacobian(q, 0, 1) @ v
    assert xi_new @ v_new == pytest.approx(xi @ v)
    assert geometry.embed(q_new, 1) == pytest.approx(geometry.embed(q, 0))


def test_transition_jacobian_maps_tangent_vectors():
    sphere = ManifoldSpec.sphere()
    q, xi = np.array([1.2, 0.4]), np.array([0.3, -0.2])
    jump = geometry.transition_jacobian(sphere, q, xi, 0, 1)
    assert jump.shape == (4, 4)
    assert jump[:2, :2] == pytest.approx(geometry.point_jacobian(q, 0, 1),
                                         abs=1e-6)


def test_sphere_metric_and_curvature():
    sphere = ManifoldSpec.sphere()
    q = np.array([1.0, 0.3])
    jet = geometry.metric_jet(sphere, q)
    assert jet.g == pytest.approx(np.diag([1.0, np.sin(1.0) ** 2]))
    k = geometry.sectional_curvature(jet, np.array([1.0, 0.0]),
                                     np.array([0.0, 1.0]))
    assert k == pytest.approx(1.0)


def test_sphere_chart_domain():
    with pytest.raises(ChartDomainError):
        geometry.metric_jet(ManifoldSpec.sphere(), np.array([0.1, 0.0]), 0)


def test_sphere_potential_gradient_matches_differences(sphere):
    q = np.array([1.0, 0.5])
    pot = sphere.potential_jet(q)
    h = 1e-6
    for i in range(2):
        dq = np.zeros(2)
        dq[i] = h
        fd = (sphere.potential_jet(q + dq).value
              - sphere.potential_jet(q - dq).value) / (2 * h)
        assert pot.gradient[i] == pytest.approx(fd, abs=1e-8)
    assert pot.value == pytest.approx(0.3 * np.cos(1.0))


def test_distance():
    sphere = ManifoldSpec.sphere()
    assert geometry.distance(sphere, np.array([np.pi / 2, 0.0]), 0,
                             np.array([np.pi / 2, np.pi / 2]), 0) == \
        pytest.approx(np.pi / 2)
    circle = ManifoldSpec.circle()
    assert geometry.distance(circle, np.array([0.1]), 0,
                             np.array([2 * np.pi - 0.1]), 0) == \
        pytest.approx(0.2)


def test_sample_grid_covers_sphere():
    q, chart = geometry.sample_grid(ManifoldSpec.sphere(), 16)
    p = geometry.embed(q, chart)
    assert len(q) == 8 * 16
    assert np.allclose(np.linalg.norm(p, axis=1), 1.0)
    assert np.all(geometry.pole_distance(p, chart) >= np.pi / 4 - 1e-12)
