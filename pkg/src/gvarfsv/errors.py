"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GvarError(Exception):
    exit_code = 1


class ConfigError(GvarError):
    exit_code = 2


class DataError(GvarError):
    exit_code = 3


class NumericalError(GvarError):
    exit_code = 4


class IdentificationError(GvarError):
    exit_code = 5


class CheckpointError(ConfigError):
    """Checkpoint file is unreadable, corrupted or belongs to another run."""
