"""Exception types shared across the package."""


class SkelfitError(Exception):
    """Base class for package errors."""


class TopologyError(SkelfitError, ValueError):
    """Invalid skeleton topology."""


class FormatError(SkelfitError, ValueError):
    """Malformed serialized data (SKIM images, pose files, topology files)."""


class ConfigError(SkelfitError, ValueError):
    """Invalid configuration value or unknown config key."""


class ProjectionError(SkelfitError, ValueError):
    """Point cannot be projected (at or behind the camera plane)."""


class DivergenceError(SkelfitError, RuntimeError):
    """Optimization produced a non-finite loss or parameter."""


class GenerationError(SkelfitError, RuntimeError):
    """Synthetic sample could not be placed inside the frame."""
