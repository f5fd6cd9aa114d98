#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.config`."""

import math

import pytest

from synthesol import config
from synthesol.exceptions import ConfigError

PENDULUM = """\
# U = cos(theta)
manifold.kind = circle
manifold.periods = 2*pi
potential.cos_coeffs = [(1, 1.0)]
alpha = 3          # discount rate
tau_schedule = (2, 4, 8)
output_dir = "runs/#1"
"""


@pytest.mark.parametrize('text, value', [
    ('2*pi', 2 * math.pi),
    ('-inf', -math.inf),
    ('1e-6', 1e-6),
    ('circle', 'circle'),
    ('out/run-1', 'out/run-1'),
    ('true', True),
    ('[(1, 1.0), (2, -0.5)]', ((1, 1.0), (2, -0.5))),
    ('{z: 0.3, xx: 0.5}', {'z': 0.3, 'xx': 0.5}),
])
def test_parse_value(text, value):
    assert config.parse_value(text) == value


def test_parse_config():
    entries = config.parse_config(PENDULUM, 'pendulum.conf')
    assert entries['alpha'] == (3, 5, 9)
    assert entries['output_dir'][0] == 'runs/#1'
    assert entries['manifold.periods'][0] == pytest.approx(2 * math.pi)


@pytest.mark.parametrize('text, line', [
    ('alpha = 3\nbogus = 1\n', 2),
    ('alpha 3\n', 1),
    ('alpha =\n', 1),
    ('\n\nalpha = (1, \n', 3),
    ('alpha = 3\nalpha = 4\n', 2),
    ('alpha = 2 * circle\n', 1),
])
def test_parse_errors_are_located(text, line):
    with pytest.raises(ConfigError) as info:
        config.parse_config(text, 'run.conf')
    assert info.value.line == line
    assert info.value.column >= 1
    assert str(info.value).startswith('run.conf:{}:'.format(line))


def test_defaults():
    cfg = config.build_config(config.parse_config('alpha = 3\n'))
    assert cfg.manifold.kind == 'circle'
    assert cfg.system.potential.cos_coeffs == ()
    assert cfg.grid_density == 256
    assert cfg.tau_schedule == (2.0, 4.0, 8.0, 16.0, 32.0)
    assert cfg.tolerances.horizon == 1e-6
    assert cfg.oracle_knots == 2000
    assert cfg.control.rtol == 1e-10
    assert cfg.control.max_step == 1e-2


def test_pendulum_config(write_config):
    cfg = config.load_config(write_config(PENDULUM))
    assert cfg.alpha == 3.0
    assert cfg.system.potential.cos_coeffs == (((1,), 1.0),)
    assert cfg.tau_schedule == (2.0, 4.0, 8.0)
    assert cfg.require_positive_alpha() is cfg


def test_sphere_config():
    cfg = config.build_config(config.parse_config(
        'manifold.kind = sphere\npotential.sphere = {z: 0.3}\nalpha = 3\n'))
    assert cfg.manifold.dim == 2
    assert cfg.system.potential.sphere == (('z', 0.3),)


@pytest.mark.parametrize('text, density', [
    ('alpha = 3\n', 256),
    ('alpha = 3\nmanifold.kind = flat_torus\nmanifold.dim = 2\n', 48),
    ('alpha = 3\nmanifold.kind = sphere\n', 48),
    ('alpha = 3\nmanifold.kind = flat_torus\nmanifold.dim = 2\n'
     'grid_density = 64\n', 64),
])
def test_grid_density_follows_dimension(text, density):
    cfg = config.build_config(config.parse_config(text))
    assert cfg.grid_density == density


@pytest.mark.parametrize('text, line', [
    ('alpha = 3\ngrid_density = 8\n', 2),
    ('alpha = 3\ntau_schedule = (4, 2)\n', 2),
    ('alpha = -1\n', 1),
    ('alpha = 3\noracle.knots = 10\n', 2),
    ('alpha = 3\nmanifold.kind = sphere\npotential.cos_coeffs = [(1, 1)]\n',
     3),
    ('alpha = 3\nmanifold.kind = moebius\n', 2),
])
def test_invalid_settings(text, line):
    with pytest.raises(ConfigError) as info:
        config.build_config(config.parse_config(text))
    assert info.value.line == line


def test_alpha_is_required():
    with pytest.raises(ConfigError):
        config.build_config(config.parse_config('grid_density = 32\n'))


def test_zero_alpha_only_for_conservative_commands():
    cfg = config.build_config(config.parse_config('alpha = 0\n'))
    assert cfg.alpha == 0.0
    with pytest.raises(ConfigError):
        cfg.require_positive_alpha()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(str(tmp_path / 'absent.conf'))
