#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Run configuration.

A configuration is a flat text file of ``key = value`` lines with dotted
keys and ``#`` comments::

    manifold.kind = circle
    potential.cos_coeffs = [(1, 1.0)]
    alpha = 3
    tau_schedule = (2, 4, 8, 16, 32)

Values are Python literals; arithmetic on numbers and the names ``pi``
and ``inf`` are accepted (``manifold.periods = 2*pi``). A bare word is
read as a string.
"""

import ast
import logging
import math
import operator
import re
from dataclasses import dataclass

from .exceptions import ConfigError
from .flow import StepControl
from .geometry import ManifoldSpec, MechanicalSystem, PotentialSpec

log = logging.getLogger(__name__)

DEFAULTS = {
    'manifold.kind': 'circle',
    'manifold.dim': None,
    'manifold.periods': None,
    'manifold.sphere_chart_switch': math.pi / 3.0,
    'potential.const': 0.0,
    'potential.cos_coeffs': (),
    'potential.sin_coeffs': (),
    'potential.sphere': {},
    'alpha': None,
    'grid_density': None,
    'tau_schedule': (2.0, 4.0, 8.0, 16.0, 32.0),
    'seed': 0,
    'output_dir': '.',
    'threads': None,
    'tolerances.integrate_rel': 1e-10,
    'tolerances.shooting': 1e-10,
    'tolerances.horizon': 1e-6,
    'tolerances.validation': 1e-5,
    'condition.density': 64,
    'condition.safety_margin': 1e-6,
    'integrate.max_step': 1e-2,
    'integrate.atol': 1e-12,
    'portrait.window': ((0.0, 2.0 * math.pi), (-3.0, 3.0)),
    'portrait.count': 24,
    'portrait.span': 20.0,
    'validate.samples': 16,
    'validate.invariance_time': 5.0,
    'oracle.points': (),
    'oracle.tau': 10.0,
    'oracle.knots': 2000,
    'oracle.restarts': 2,
}

# default grid density by manifold dimension
GRID_DENSITY = {1: 256, 2: 48}

NAMES = {'pi': math.pi, 'inf': math.inf, 'nan': math.nan, 'True': True,
         'False': False, 'None': None, 'true': True, 'false': False,
         'none': None}

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub,
           ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_BARE = re.compile(r'^[A-Za-z_][\w.\-/]*$')


def _evaluate(node):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body)
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in NAMES:
            return NAMES[node.id]
        raise ValueError('unknown name {!r}'.format(node.id))
    if isinstance(node, (ast.Tuple, ast.List)):
        return tuple(_evaluate(e) for e in node.elts)
    if isinstance(node, ast.Dict):
        return {_key(k): _evaluate(v) for k, v in zip(node.keys, node.values)}
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_number(_evaluate(node.operand)))
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_number(_evaluate(node.left)),
                                      _number(_evaluate(node.right)))
    raise ValueError('unsupported expression')


def _key(node):
    # bare dict keys: {z: 1.0, xx: 0.5}
    if isinstance(node, ast.Name) and node.id not in NAMES:
        return node.id
    return _evaluate(node)


def _number(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError('arithmetic on a non-number')
    return value


def parse_value(text, line=None, column=None, source=None):
    """Value of one configuration entry."""
    try:
        return _evaluate(ast.parse(text, mode='eval'))
    except SyntaxError as exc:
        if _BARE.match(text):
            return text
        offset = (exc.offset or 1) - 1
        raise ConfigError('invalid value: {}'.format(exc.msg), line,
                          None if column is None else column + offset, source)
    except ValueError as exc:
        if _BARE.match(text):
            return text
        raise ConfigError('invalid value {!r}: {}'.format(text, exc), line,
                          column, source)


def _strip_comment(raw):
    quote = None
    for i, ch in enumerate(raw):
        if quote:
            if ch == quote:
                quote = None
        elif ch in '\'"':
            quote = ch
        elif ch == '#':
            return raw[:i]
    return raw


def parse_config(text, source=None):
    """Parse configuration text into ``{key: (value, line, column)}``."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        start = len(line) - len(line.lstrip()) + 1
        if '=' not in line:
            raise ConfigError('expected key = value', lineno, start, source)
        key, _, value = line.partition('=')
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError('unknown key {!r}'.format(key), lineno, start,
                              source)
        if key in entries:
            raise ConfigError('duplicate key {!r}'.format(key), lineno, start,
                              source)
        column = line.index('=') + 2 + len(value) - len(value.lstrip())
        if not value.strip():
            raise ConfigError('missing value for {!r}'.format(key), lineno,
                              column, source)
        entries[key] = (parse_value(value.strip(), lineno, column, source),
                        lineno, column)
    return entries


@dataclass(frozen=True)
class Tolerances:
    integrate_rel: float = 1e-10
    shooting: float = 1e-10
    horizon: float = 1e-6
    validation: float = 1e-5


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one run.

    ``alpha`` may be zero only for the conservative portrait and
    equilibrium tables; ``require_positive_alpha`` guards the others.
    """

    system: MechanicalSystem
    alpha: float
    grid_density: int = 256
    tau_schedule: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)
    tolerances: Tolerances = Tolerances()
    seed: int = 0
    output_dir: str = '.'
    threads: int = None
    condition_density: int = 64
    safety_margin: float = 1e-6
    max_step: float = 1e-2
    atol: float = 1e-12
    portrait_window: tuple = ((0.0, 2.0 * math.pi), (-3.0, 3.0))
    portrait_count: int = 24
    portrait_span: float = 20.0
    validate_samples: int = 16
    invariance_time: float = 5.0
    oracle_points: tuple = ()
    oracle_tau: float = 10.0
    oracle_knots: int = 2000
    oracle_restarts: int = 2
    source: str = None

    @property
    def manifold(self):
        return self.system.manifold

    @property
    def control(self):
        return StepControl(rtol=self.tolerances.integrate_rel, atol=self.atol,
                           max_step=self.max_step)

    def require_positive_alpha(self):
        if not self.alpha > 0:
            raise ConfigError('alpha must be positive for this command, got '
                              '{}'.format(self.alpha), source=self.source)
        return self


class _Reader(object):
    """Typed access to parsed entries with located errors."""

    def __init__(self, entries, source):
        self.entries = entries
        self.source = source

    def where(self, key):
        if key in self.entries:
            return self.entries[key][1:]
        return None, None

    def fail(self, key, message):
        line, column = self.where(key)
        raise ConfigError('{}: {}'.format(key, message), line, column,
                          self.source)

    def raw(self, key):
        if key in self.entries:
            return self.entries[key][0]
        return DEFAULTS[key]

    def number(self, key, minimum=None, strict=False):
        value = self.raw(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(key, 'expected a number, got {!r}'.format(value))
        if minimum is not None and (value <= minimum if strict
                                    else value < minimum):
            self.fail(key, 'must be {} {}'.format('>' if strict else '>=',
                                                  minimum))
        return float(value)

    def integer(self, key, minimum=None):
        value = self.raw(key)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(key, 'expected an integer, got {!r}'.format(value))
        if minimum is not None and value < minimum:
            self.fail(key, 'must be >= {}'.format(minimum))
        return value

    def sequence(self, key):
        value = self.raw(key)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return (value,)
        if not isinstance(value, tuple):
            self.fail(key, 'expected a list, got {!r}'.format(value))
        return value


def _system(reader):
    kind = reader.raw('manifold.kind')
    dim = reader.raw('manifold.dim')
    if dim is None:
        dim = 1 if kind == 'circle' else 2
    periods = reader.raw('manifold.periods')
    try:
        manifold = ManifoldSpec(kind, dim, periods,
                                reader.number('manifold.sphere_chart_switch'))
    except (ConfigError, TypeError, ValueError) as exc:
        reader.fail('manifold.kind', str(exc))
    sphere = reader.raw('potential.sphere')
    if not isinstance(sphere, dict):
        reader.fail('potential.sphere', 'expected a dict of amplitudes')
    try:
        potential = PotentialSpec(reader.number('potential.const'),
                                  reader.sequence('potential.cos_coeffs'),
                                  reader.sequence('potential.sin_coeffs'),
                                  sphere)
        return MechanicalSystem(manifold, potential)
    except (ConfigError, TypeError, ValueError) as exc:
        key = next((k for k in ('potential.sphere', 'potential.cos_coeffs',
                                'potential.sin_coeffs')
                    if k in reader.entries), 'potential.const')
        reader.fail(key, str(exc))


def _window(reader):
    window = reader.sequence('portrait.window')
    try:
        (q0, q1), (x0, x1) = window
        return ((float(q0), float(q1)), (float(x0), float(x1)))
    except (TypeError, ValueError):
        reader.fail('portrait.window', 'expected ((q_min, q_max), '
                    '(xi_min, xi_max))')


def _density(reader, system):
    if reader.raw('grid_density') is None:
        return GRID_DENSITY[system.dim]
    return reader.integer('grid_density', 16)


def build_config(entries, source=None):
    """Validated RunConfig from parsed entries."""
    reader = _Reader(entries, source)
    if reader.raw('alpha') is None:
        raise ConfigError('alpha is required', source=source)
    schedule = tuple(float(t) for t in reader.sequence('tau_schedule'))
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) \
            or schedule[0] <= 0:
        reader.fail('tau_schedule', 'must be positive and increasing')
    threads = reader.raw('threads')
    if threads is not None:
        threads = reader.integer('threads', 1)
    points = tuple(reader.sequence('oracle.points'))
    output_dir = reader.raw('output_dir')
    if not isinstance(output_dir, str):
        reader.fail('output_dir', 'expected a path')
    system = _system(reader)
    return RunConfig(
        system=system,
        alpha=reader.number('alpha', 0.0),
        grid_density=_density(reader, system),
        tau_schedule=schedule,
        tolerances=Tolerances(
            reader.number('tolerances.integrate_rel', 0.0, strict=True),
            reader.number('tolerances.shooting', 0.0, strict=True),
            reader.number('tolerances.horizon', 0.0, strict=True),
            reader.number('tolerances.validation', 0.0, strict=True)),
        seed=reader.integer('seed', 0),
        output_dir=output_dir,
        threads=threads,
        condition_density=reader.integer('condition.density', 16),
        safety_margin=reader.number('condition.safety_margin', 0.0),
        max_step=reader.number('integrate.max_step', 0.0, strict=True),
        atol=reader.number('integrate.atol', 0.0, strict=True),
        portrait_window=_window(reader),
        portrait_count=reader.integer('portrait.count', 1),
        portrait_span=reader.number('portrait.span', 0.0, strict=True),
        validate_samples=reader.integer('validate.samples', 1),
        invariance_time=reader.number('validate.invariance_time', 0.0,
                                      strict=True),
        oracle_points=points,
        oracle_tau=reader.number('oracle.tau', 0.0, strict=True),
        oracle_knots=reader.integer('oracle.knots', 100),
        oracle_restarts=reader.integer('oracle.restarts', 0),
        source=source)


def load_config(path):
    """Read and validate a configuration file.

    Raises
    ------
    ConfigError
        With the 1-based line and column of the offending entry.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError('cannot read configuration: {}'.format(exc),
                          source=str(path))
    config = build_config(parse_config(text, str(path)), str(path))
    log.debug('loaded %s: %s alpha=%g', path, config.manifold.kind,
              config.alpha)
    return config
