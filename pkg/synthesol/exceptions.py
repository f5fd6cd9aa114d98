#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Exceptions raised by synthesol.

Every exception carries the process exit code the command line maps it to:
2 for input the run cannot use, 3 when the curvature condition fails, 4 for
numerical failures of a construction and 5 for failed diagnostics.
"""


class SynthesolError(Exception):
    """Base class of all synthesol errors."""

    exit_code = 4


class ConfigError(SynthesolError):
    """Malformed or inconsistent run configuration."""

    exit_code = 2

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        if line is not None:
            where = '{}:{}:{}'.format(source or '<config>', line,
                                      column if column is not None else 1)
            message = '{}: {}'.format(where, message)
        super(ConfigError, self).__init__(message)


class ChartDomainError(SynthesolError):
    """A point lies outside the domain of the requested chart."""


class IntegrationError(SynthesolError):
    """The ODE solver could not complete a step."""


class BlowupError(SynthesolError):
    """The covector left every bounded region: the trajectory escapes.

    Attributes
    ----------
    time : float
        Time at which the escape bound was crossed.
    state : CotangentState or None
        State at that time.
    trajectory : Trajectory or None
        Samples up to the crossing, when available.
    """

    def __init__(self, message, time=None, state=None, trajectory=None):
        super(BlowupError, self).__init__(message)
        self.time = time
        self.state = state
        self.trajectory = trajectory


class DegenerateError(SynthesolError):
    """Critical point with a singular Hessian (U is not Morse there)."""

    exit_code = 2


class TransversalityError(SynthesolError):
    """Two subspaces expected to be transversal intersect."""


class StepTooSmall(SynthesolError):
    """Finite-difference step below the noise floor."""

    exit_code = 2


class NotOnLocusError(SynthesolError):
    """State does not belong to the set of bounded extremals."""

    exit_code = 5


class ConvergenceError(SynthesolError):
    """An iterative limit did not settle within its cap."""

    exit_code = 4


class NewtonDivergence(SynthesolError):
    """Newton iteration for a shooting problem failed."""

    exit_code = 4

    def __init__(self, message, iterations=None, residual=None):
        super(NewtonDivergence, self).__init__(message)
        self.iterations = iterations
        self.residual = residual


class NoConvergenceError(SynthesolError):
    """Horizon continuation did not converge.

    ``field`` holds the last (possibly partial) field for export.
    """

    exit_code = 4

    def __init__(self, message, field=None):
        super(NoConvergenceError, self).__init__(message)
        self.field = field


class NonConvergence(SynthesolError):
    """Direct minimization stopped before the gradient vanished."""

    exit_code = 4

    def __init__(self, message, path=None):
        super(NonConvergence, self).__init__(message)
        self.path = path


class ConditionFailed(SynthesolError):
    """Curvature condition does not hold for the requested discount."""

    exit_code = 3


class ValidationFailed(SynthesolError):
    """At least one diagnostic exceeded its tolerance."""

    exit_code = 5
