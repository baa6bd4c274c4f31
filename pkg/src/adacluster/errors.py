"""Exception hierarchy shared across the library and the CLI.

The CLI maps these onto exit codes: validation problems exit 1,
I/O and file-format problems exit 2, anything else exits 3.
"""


class AdaClusterError(Exception):
    """Base class for all library errors."""


class DimensionError(AdaClusterError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(AdaClusterError, ValueError):
    """A scalar argument is out of its allowed range."""


class ValidationError(AdaClusterError, ValueError):
    """A configuration object violates its schema."""


class FormatError(AdaClusterError, ValueError):
    """A file on disk does not conform to the expected format."""


class ContractError(AdaClusterError, RuntimeError):
    """Inputs violate a cross-call contract (e.g. shape drift across steps)."""
