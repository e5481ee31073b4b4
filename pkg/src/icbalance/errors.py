"""Exception types shared across the package."""


class IcbalanceError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(IcbalanceError):
    """Invalid dimensions, weights, tolerances, or experiment settings."""


class DegenerateStreamError(IcbalanceError):
    """A substream's direct gain vanished (v nulls the desired signal)."""


class InfeasibleTargetsError(IcbalanceError):
    """SINR targets admit no fixed point (spectral radius >= 1)."""
