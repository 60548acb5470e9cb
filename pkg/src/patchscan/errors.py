"""Exception types shared across the package."""


class PatchScanError(Exception):
    """Base class for all patchscan errors."""


class ParameterError(PatchScanError, ValueError):
    """An argument violates a precondition (bad size, range, or mode)."""


class BoundsError(ParameterError):
    """A rectangle or coordinate falls outside its host image."""


class DatasetError(PatchScanError):
    """Dataset-level problem: missing class, unplaceable primitive, bad labels."""


class FormatError(PatchScanError):
    """A file does not match its declared on-disk format."""


class EmbeddingLookupError(PatchScanError, KeyError):
    """An embedding patch key is not present in the loaded manifest."""
