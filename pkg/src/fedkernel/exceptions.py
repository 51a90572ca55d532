"""Exception hierarchy shared across the package."""


class FedKernelError(Exception):
    """Base class for all errors raised by fedkernel."""


class InputShapeError(FedKernelError, ValueError):
    """Array arguments have incompatible shapes or dimensions."""


class EmptyInputError(FedKernelError, ValueError):
    """An operation received an empty point set or selection."""


class EmptySelectionError(EmptyInputError):
    """A table filter matched no rows."""


class ConfigurationError(FedKernelError, ValueError):
    """Invalid algorithm, scenario or experiment configuration."""


class UnsupportedRepresentationError(FedKernelError, TypeError):
    """The kernel has no explicit finite-rank feature map."""


class StabilityError(FedKernelError, ValueError):
    """FedAvg local iterations are unstable (gamma >= 1)."""


class NumericError(FedKernelError, ArithmeticError):
    """A dense linear-algebra routine failed to converge."""


class DegeneracyError(NumericError):
    """I - A is numerically singular: some feature direction is unobserved."""


class DegenerateRunError(FedKernelError, ArithmeticError):
    """A Monte-Carlo ratio has a zero denominator."""
