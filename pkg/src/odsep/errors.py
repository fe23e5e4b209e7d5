"""Error types shared across the toolkit."""


class OdsepError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(OdsepError, ValueError):
    """Invalid configuration value or malformed run parameters."""


class GeometryError(OdsepError, ValueError):
    """Array shapes or signal geometry do not match the operation contract."""


class DegenerateInputError(OdsepError, ValueError):
    """Input is formally valid but numerically degenerate (e.g. all-zero mixture)."""


class NumericalError(OdsepError, RuntimeError):
    """A numerical procedure failed (singular system, diverging iteration)."""
