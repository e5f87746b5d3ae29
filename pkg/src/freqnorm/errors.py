"""Exception types shared across the package.

The CLI maps these onto process exit codes; library code raises them
directly.
"""


class FreqnormError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FreqnormError, ValueError):
    """Invalid or mismatched tensor/grid shapes."""


class DomainError(FreqnormError, ValueError):
    """Argument outside its mathematical domain (negative amplitude,
    ratio outside [0,1], division producing non-finite values, ...)."""


class NonRealSignalError(FreqnormError, ArithmeticError):
    """Inverse transform of a spectrum that is not conjugate-symmetric.

    Signals an upstream bug: every spectrum fed to the inverse transform
    should originate from a real signal.
    """


class ConfigError(FreqnormError, ValueError):
    """Invalid model/dataset/protocol configuration."""


class UnknownModuleError(FreqnormError, KeyError):
    """A module id does not name any adjustable module in the model."""


class AbortedRunError(FreqnormError, RuntimeError):
    """Training diverged (non-finite loss); carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class VerificationError(FreqnormError, AssertionError):
    """A derivation/self-test check exceeded its tolerance."""
