"""Exception hierarchy shared by every module of the package."""


class NeuralDuelingError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NeuralDuelingError, ValueError):
    """A configuration value is outside its admissible range."""


class InputError(NeuralDuelingError, ValueError):
    """An argument has the wrong shape, dimension or a non-finite value."""


class TrainingDivergedError(NeuralDuelingError, ArithmeticError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss!r})")


class NumericalError(NeuralDuelingError, ArithmeticError):
    """A linear-algebra routine returned a non-finite or degenerate result."""


class NumericalDegeneracyError(NumericalError):
    """A quadratic form that must be non-negative evaluated clearly negative."""
