"""
Exception types raised across the BayeSMG modules.
"""


class BayesmgError(Exception):
    """Base class for every error raised by this package."""


class InputDomainError(BayesmgError, ValueError):
    """Input outside the domain of an operation (non-finite, non-positive, off-support)."""


class DimensionMismatchError(BayesmgError, ValueError):
    pass


class IndexOutOfGridError(BayesmgError, IndexError):
    pass


class NumericalError(BayesmgError, ArithmeticError):
    """A factorisation or solve failed."""

    def __init__(self, message: str, condition: float = float("nan")):
        super().__init__(f"{message} (condition number ~ {condition:.3e})")
        self.condition = condition


class SamplerError(BayesmgError, RuntimeError):
    pass


class ChainAbortedError(BayesmgError, RuntimeError):
    def __init__(self, chain: int, iteration: int, cause: Exception):
        super().__init__(f"chain {chain} aborted at iteration {iteration}: {cause}")
        self.chain = chain
        self.iteration = iteration


class ConfigError(BayesmgError, ValueError):
    pass


class MatrixFormatError(BayesmgError, ValueError):
    pass


class MaskError(BayesmgError, ValueError):
    pass


class TooFewSamplesError(BayesmgError, ValueError):
    pass
