class ConfigError(ValueError):
    """Invalid model, training, or command configuration."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A call violated an operation's preconditions."""


class FormatError(ValueError):
    """Malformed file contents."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class RecordError(FormatError):
    """A well-framed record carries an invalid value."""


class GenerationError(RuntimeError):
    """Synthetic data could not satisfy its construction constraints."""


class MeasurementError(ValueError):
    """Benchmark requested with too few iterations to report spread."""


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, step, lr, grad_norm, loss):
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (lr={lr:.3e}, grad_norm={grad_norm:.3e})"
        )
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
        self.loss = loss
