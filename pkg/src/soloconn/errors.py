"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (usage=1, numeric=2, io=3), and the
service maps them onto HTTP error categories, so raise the most specific
class available.
"""


class SoloError(Exception):
    """Base class for all package errors."""


class ConfigError(SoloError):
    """Invalid configuration value or malformed config input."""


class DimensionError(SoloError):
    """Tensor shape mismatch; message names the offending shapes."""


class InputError(SoloError):
    """Invalid runtime input, e.g. a token id outside the vocabulary."""


class ContractError(SoloError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class NumericError(SoloError):
    """Non-finite values or numerical divergence; message names the tensor/coordinate."""


class CheckpointError(SoloError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint container."""


class CheckpointVersionError(CheckpointError):
    """Container version is not supported by this build."""


class CheckpointChecksumError(CheckpointError):
    """Stored checksum does not match the file contents."""


class CheckpointGeometryError(CheckpointError):
    """Checkpoint geometry is incompatible with the target model."""
