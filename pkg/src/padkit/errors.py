"""Exception hierarchy shared across the toolkit.

Every error raised on purpose derives from PadkitError so the CLI can
catch one type, print the message, and exit nonzero.
"""


class PadkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PadkitError):
    """Invalid configuration value; the message names the offending field."""


class NumericError(PadkitError):
    """Non-finite value encountered; the message identifies where."""


class WeightLoadError(PadkitError):
    """Weight archive does not match the target model."""


class ScheduleError(PadkitError):
    """Learning-rate schedule queried outside its valid step range."""


class PolicyError(PadkitError):
    """Freeze policy refers to blocks the model does not have."""


class UndefinedMetricError(PadkitError):
    """A metric was requested on a prediction set where it is undefined."""


class IngestionError(PadkitError):
    """Dataset ingestion failed (empty video, bad bbox, unreadable file)."""
