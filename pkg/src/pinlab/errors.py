"""Exception types shared across the package."""


class PinlabError(Exception):
    """Base class for all package errors."""


class GridRangeError(PinlabError, ValueError):
    """A tabulated quantity was queried outside its grid."""


class ConstructionError(PinlabError, ValueError):
    """An object could not be built from the given parameters."""


class UnsupportedError(PinlabError, ValueError):
    """The requested operation is outside the supported parameter range."""


class BudgetError(PinlabError, RuntimeError):
    """The requested computation exceeds the configured size budget."""


class BracketingError(PinlabError, RuntimeError):
    """A scan grid does not bracket the quantity being located."""


class ConfigError(PinlabError, ValueError):
    """Invalid experiment configuration; the message starts with the field path."""
