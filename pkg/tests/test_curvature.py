#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.curvature`."""

import numpy as np
import pytest

from synthesol import curvature
from synthesol.exceptions import ConfigError
from synthesol.flow import CotangentState


def test_pendulum_operator_is_minus_cos(pendulum):
    for q in (0.0, 1.0, np.pi):
        op = curvature.curvature_operator(
            pendulum, CotangentState([q], [0.7]))
        assert op.eigenvalues == pytest.approx([-np.cos(q)])


def test_sphere_operator_at_equator(sphere):
    op = curvature.curvature_operator(
        sphere, CotangentState([np.pi / 2, 0.0], [1.0, 0.0]))
    assert op.eigenvalues == pytest.approx([0.0, 1.0], abs=1e-12)


def test_vectorized_top_eigenvalue(pendulum):
    q = np.linspace(0, 2 * np.pi, 7)[:, None]
    top = curvature.top_eigenvalue(pendulum, q, np.zeros_like(q))
    assert top == pytest.approx(-np.cos(q[:, 0]))


def test_condition_margin(pendulum):
    state = CotangentState([np.pi], [0.0])
    assert curvature.condition_margin(pendulum, state, 3.0) == \
        pytest.approx(1.25)


@pytest.mark.parametrize('alpha, passed', [
    (3.0, True), (2.0, False), (1.5, False)])
def test_pendulum_condition(pendulum, alpha, passed):
    report = curvature.check_condition(pendulum, alpha)
    assert report.lambda_max == pytest.approx(1.0, abs=1e-9)
    assert report.alpha_critical == pytest.approx(2.0, abs=1e-8)
    assert report.passed is passed
    assert report.margin == pytest.approx(alpha ** 2 / 4 - 1.0, abs=1e-9)
    out = report.to_dict()
    assert out['pass'] is passed
    assert out['argmax_state']['q'][0] == pytest.approx(np.pi, abs=1e-4)


def test_condition_requires_positive_alpha(pendulum):
    with pytest.raises(ConfigError):
        curvature.check_condition(pendulum, 0.0)


def test_sample_B_H(pendulum):
    samples = curvature.sample_B_H(pendulum, 16, radii=4)
    assert len(samples) == 16 * (1 + 3 * 2)
    energy = 0.5 * samples.xi[:, 0] ** 2 + np.cos(samples.q[:, 0])
    assert np.all(energy <= 1.0 + 1e-12)
    with pytest.raises(ConfigError):
        curvature.sample_B_H(pendulum, 0)


def test_corollary_bound(pendulum, sphere):
    bound = curvature.corollary_bound(pendulum, 3.0)
    assert bound.passed
    assert bound.rhs == pytest.approx(2.25)
    assert bound.hessian_max == pytest.approx(1.0)
    assert not curvature.corollary_bound(pendulum, 1.5).passed
    # the sphere pays 2 r (max U - min U) for its curvature
    assert curvature.corollary_bound(sphere, 3.0).rhs == pytest.approx(
        2.25 - 2 * 0.6, abs=1e-6)


def test_corollary_implies_condition(sphere):
    alpha = 4.0
    assert curvature.corollary_bound(sphere, alpha, density=32).passed
    assert curvature.check_condition(sphere, alpha, density=32).passed
