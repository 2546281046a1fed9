"""Exception hierarchy for venue_pulse."""


class VenuePulseError(Exception):
    """Base class for all user-facing errors raised by the toolkit."""


class ConfigError(VenuePulseError):
    pass


class OutOfWindowError(VenuePulseError):
    """An event falls before the origin of the time grid."""


class TaxonomyError(VenuePulseError):
    pass


class IngestError(VenuePulseError):
    """Raised when an input file cannot be parsed within the reject budget."""

    def __init__(self, message, samples=()):
        super().__init__(message)
        self.samples = list(samples)


class ProfileError(VenuePulseError):
    pass


class GPError(VenuePulseError):
    pass


class SelectionError(VenuePulseError):
    pass
