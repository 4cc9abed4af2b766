"""Exception types surfaced to CLI users as data errors (exit code 1)."""


class DataError(Exception):
    """Invalid or inconsistent input data."""


class ManifestError(DataError):
    """Manifest fails schema validation or references missing files."""


class FormatError(DataError):
    """A binary payload file is malformed."""


class GenerationError(DataError):
    """Synthetic corpus configuration cannot be realized."""
