"""Exception hierarchy shared by all spdiag modules."""


class SpdiagError(Exception):
    """Base class for all errors raised by spdiag."""


class SchemaError(SpdiagError):
    """A referenced column or feature does not exist."""


class ParseError(SpdiagError):
    """A cell could not be parsed as the expected type."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateGeometryError(SpdiagError):
    """All points share one location, so no neighbour distance exists."""


class ExhaustedBufferError(SpdiagError):
    """The exclusion buffer removed every training observation."""


class EstimationError(SpdiagError):
    """Too little data to estimate a variogram, profile or error measure."""


class KrigingError(SpdiagError):
    """The kriging system could not be assembled or solved."""


class FitError(SpdiagError):
    """A model could not be trained on the supplied data."""


class ConfigError(SpdiagError):
    """An experiment or diagnostics configuration is invalid."""
