"""Exception hierarchy shared by the library and the CLI."""


class TTError(Exception):
    """Base class for every error raised deliberately by this package."""

    exit_code = 1


class DimensionError(TTError, ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(TTError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(TTError, ValueError):
    """Invalid model configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NonFiniteError(TTError, FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"non-finite values produced by op '{op}'")


class TrainingDivergedError(TTError):
    """Loss became non-finite; parameters were restored to the last good step."""

    def __init__(self, step, cause=None):
        self.step = step
        super().__init__(f"training diverged at step {step}" + (f": {cause}" if cause else ""))


class CheckpointError(TTError):
    """Base for checkpoint decoding failures. ``code`` is stable across releases."""

    code = "checkpoint"
    exit_code = 2


class BadMagicError(CheckpointError):
    code = "bad-magic"


class VersionMismatchError(CheckpointError):
    code = "version"


class TruncatedCheckpointError(CheckpointError):
    code = "truncated"


class ShapeMismatchError(CheckpointError):
    code = "shape"


class CorruptCheckpointError(CheckpointError):
    code = "corrupt"


class DataError(TTError, OSError):
    """An input file (image, dataset folder, config) could not be read or parsed."""

    exit_code = 2


class ConfigMismatchError(CheckpointError):
    code = "config"
