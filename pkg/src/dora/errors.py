"""Exception types shared across the package.

Each carries the process exit code the CLI maps it to.
"""


class DoraError(Exception):
    exit_code = 1


class ConfigError(DoraError, ValueError):
    """Invalid or missing configuration value. ``key`` names the offending field."""

    exit_code = 2

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DimensionError(DoraError, ValueError):
    exit_code = 1


class ContractError(DoraError, ValueError):
    exit_code = 1


class CheckpointError(DoraError, IOError):
    exit_code = 3


class NumericalError(DoraError, FloatingPointError):
    """Non-finite value encountered during training."""

    exit_code = 4

    def __init__(self, step: int, where: str, message: str = "non-finite loss"):
        super().__init__(f"step {step}: {message} (first non-finite site: {where})")
        self.step = step
        self.where = where
