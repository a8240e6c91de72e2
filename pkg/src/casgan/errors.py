"""Exception hierarchy shared across the package."""


class CasganError(Exception):
    """Base class for all package errors."""


class ConfigError(CasganError):
    """Invalid configuration value or combination."""


class DataError(CasganError):
    """Problem with a dataset directory or its contents."""


class PairingError(DataError):
    """Source/target/manifest entries do not pair up; carries orphan ids."""

    def __init__(self, message: str, orphan_ids=()):
        super().__init__(message)
        self.orphan_ids = tuple(orphan_ids)


class ImageFormatError(DataError):
    """An image file has the wrong mode, bit depth, or size."""


class ShapeError(CasganError):
    """Tensor shape incompatible with the requested operation."""


class CheckpointError(CasganError):
    """Base class for checkpoint archive problems."""


class CheckpointCorruptError(CheckpointError):
    """Archive digest mismatch, truncation, or malformed container."""


class CheckpointIncompatibleError(CheckpointError):
    """Stored tensors do not match the target architecture; names the tensor."""


class TrainingDivergedError(CasganError):
    """A loss term became non-finite; carries the term name and step."""

    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"non-finite loss term '{term}' (value {value}) at step {step}")
        self.term = term
        self.step = step
        self.value = value
