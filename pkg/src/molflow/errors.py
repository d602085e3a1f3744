"""Exception types shared across the package."""


class MolflowError(Exception):
    """Base class for all package errors."""


class UserError(MolflowError):
    """Bad input from the caller: config, paths, shapes, checkpoints."""


class ConfigError(UserError):
    pass


class ShapeError(UserError, ValueError):
    pass


class CheckpointError(UserError):
    pass


class WavError(UserError):
    """Raised by the WAV reader/writer. ``code`` is a short stable identifier."""

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


class NumericalError(MolflowError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConvergenceError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass
