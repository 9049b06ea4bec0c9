"""Exception hierarchy shared across the toolkit.

Each class carries a distinct process exit code so the CLI can map
failures to machine-readable results.
"""


class BsrError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(BsrError):
    """Bad configuration: unknown keys, wrong schema version, invalid values."""

    exit_code = 2


class DimensionError(BsrError):
    """Shape, divisibility, or broadcasting violation."""

    exit_code = 3


class FormatError(BsrError):
    """Unsupported or corrupt file contents (PNG, .bft, manifests)."""

    exit_code = 4


class TransformError(BsrError):
    """Singular or otherwise invalid geometric transform."""

    exit_code = 5


class ConvergenceError(BsrError):
    """Iterative estimation diverged. Carries the last valid estimate."""

    exit_code = 6

    def __init__(self, message, last_result=None):
        super().__init__(message)
        self.last_result = last_result


class DegenerateInputError(BsrError):
    """Input lacks the structure the algorithm needs (e.g. zero variance)."""

    exit_code = 7


class TrainingError(BsrError):
    """Non-finite gradients or loss during optimization."""

    exit_code = 8


class NumericError(BsrError):
    """A public operation produced NaN or Inf."""

    exit_code = 9


class ContractError(BsrError):
    """API misuse, e.g. backward on a non-scalar."""

    exit_code = 10
