"""Exception types shared across the package."""


class TustinNetError(Exception):
    """Base class for all package errors."""


class ConfigError(TustinNetError, ValueError):
    """Invalid configuration value or combination."""


class DimensionError(TustinNetError, ValueError):
    """Array or sequence shape does not match the declared dimensions."""


class DivergenceError(TustinNetError, RuntimeError):
    """A simulation or training run produced non-finite or runaway values.

    ``step`` is the first offending step index (or epoch, for training-level
    failures); ``stage`` tags which procedure raised it.
    """

    def __init__(self, message, step=None, stage=None):
        super().__init__(message)
        self.step = step
        self.stage = stage


class DataFormatError(TustinNetError, ValueError):
    """An experiment file is malformed (missing columns, bad cells)."""


class GridError(DataFormatError):
    """The time column is not a uniform grid at the expected sampling time."""


class TooShortError(DataFormatError):
    """The experiment has fewer samples than velocity estimation needs."""


class DatasetError(TustinNetError, ValueError):
    """No usable experiments remain for a dataset build."""


class ConstraintError(TustinNetError, ValueError):
    """A parameter set violates its box constraints."""


class IdentificationError(TustinNetError, RuntimeError):
    """Grey-box identification could not produce a finite-loss estimate."""


class NumericError(TustinNetError, RuntimeError):
    """A numerically singular or otherwise unusable intermediate occurred."""
