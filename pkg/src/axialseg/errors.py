"""Exception hierarchy shared by all axialseg modules."""


class AxialsegError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AxialsegError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(AxialsegError, ValueError):
    """An argument or configuration value is out of its valid range."""


class ContractError(AxialsegError, ValueError):
    """A caller violated an API precondition that is not shape- or value-related."""


class UndefinedValueError(AxialsegError, ValueError):
    """A quantity is mathematically undefined for the given input (e.g. constant image)."""


class NumericalError(AxialsegError, RuntimeError):
    """A computation produced NaN/Inf or otherwise failed numerically."""


class NiftiParseError(AxialsegError, ValueError):
    """A NIfTI-1 file could not be parsed.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(AxialsegError, ValueError):
    """A dataset manifest is malformed or inconsistent."""


class LeakageError(ManifestError):
    """Test-set entries would leak into training."""
