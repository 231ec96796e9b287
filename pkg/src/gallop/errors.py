"""Exception types shared across the package."""


class GallopError(Exception):
    """Base class for package-specific errors."""


class FormatError(GallopError):
    """A serialized artifact violates its format contract.

    ``field`` names the offending header field when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class TruncatedFileError(FormatError):
    """A feature file ends mid-record; ``record_index`` is where reading stopped."""

    def __init__(self, message, record_index):
        super().__init__(message)
        self.record_index = record_index


class DataError(GallopError):
    """Stored values violate data invariants (non-finite entries, bad norms, bad labels)."""

    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class ConfigError(GallopError):
    """Configuration rejected before any work starts."""
