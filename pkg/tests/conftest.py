#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Shared fixtures for the synthesol tests."""

import pytest

from synthesol.geometry import ManifoldSpec, MechanicalSystem, PotentialSpec


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    """Keep the worker pool serial inside tests."""
    monkeypatch.setenv('SYNTHESOL_THREADS', '1')


@pytest.fixture
def pendulum():
    """U = cos(theta) on the circle."""
    return MechanicalSystem.pendulum()


@pytest.fixture
def free_circle():
    return MechanicalSystem(ManifoldSpec.circle())


@pytest.fixture
def torus():
    """U = cos q1 + cos q2 on the flat 2-torus."""
    return MechanicalSystem(
        ManifoldSpec.torus(2),
        PotentialSpec(cos_coeffs=(((1, 0), 1.0), ((0, 1), 1.0))))


@pytest.fixture
def sphere():
    """Round sphere with the height potential U = 0.3 z."""
    return MechanicalSystem(ManifoldSpec.sphere(), PotentialSpec(
        sphere={'z': 0.3}))


@pytest.fixture
def write_config(tmp_path):
    """Write configuration text and return its path."""
    def write(text, name='run.conf'):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write
