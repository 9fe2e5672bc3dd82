"""
Exception hierarchy shared by the pose estimation pipeline.
The command line maps each class to its own exit code.
"""


class PipelineError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 3


class ConfigError(PipelineError, ValueError):
    """Invalid configuration value or command usage."""

    exit_code = 1


class DataError(PipelineError, ValueError):
    """Input data is missing, malformed or violates an operation precondition."""

    exit_code = 2


class InvariantError(PipelineError):
    """An internal invariant did not hold."""

    exit_code = 3
