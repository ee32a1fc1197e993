"""Exception types shared across the package."""

from __future__ import annotations

__all__ = ["ConfigurationError", "NumericalGuardError"]


class ConfigurationError(ValueError):
    """A run configuration is internally inconsistent or incomplete.

    Raised when inputs that individually validate cannot be combined:
    a truncation plan built for a different model, a query horizon the
    model does not cover, a config file missing required keys.  Maps to
    exit code 2 in the command-line driver.
    """


class NumericalGuardError(ArithmeticError):
    """A computed quantity violates a certified accuracy guarantee.

    Raised instead of silently returning a value whose error bound no
    longer holds (for example a retained-mass check that fails, or a
    summary requested from a distribution that lost too much mass).
    Maps to exit code 3 in the command-line driver.
    """
