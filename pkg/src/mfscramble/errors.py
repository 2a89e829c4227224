"""Exception types shared by the package."""


class SpaceMismatchError(ValueError):
    """Two objects that must live on the same mode space do not."""


class BackendError(ValueError):
    """An operation is not available on the backend of a mode space."""


class NormalizationError(ValueError):
    """A wave function that must be normalized is not."""


class TrajectoryRangeError(ValueError):
    """A requested time is not covered by a Hartree trajectory."""


class NormDriftError(RuntimeError):
    """The Hartree integrator lost normalization beyond tolerance."""


class ResourceCapError(RuntimeError):
    """A problem size exceeds a configured resource limit."""


class ConfigError(ValueError):
    """An experiment configuration is malformed.

    ``line`` is the 1-based line number in the config file when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ToleranceError(RuntimeError):
    """A pipeline produced numbers outside its declared tolerance."""
