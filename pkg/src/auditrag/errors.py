"""Exception hierarchy shared by the library and the CLI."""


class AuditragError(Exception):
    """Base class for all errors raised by auditrag."""


class DataError(AuditragError, ValueError):
    """Malformed or inconsistent input data (files, ids, dimensions)."""


class GraphError(DataError):
    pass


class EmbeddingError(DataError):
    pass


class ConfigError(AuditragError, ValueError):
    pass


class NumericError(AuditragError, ArithmeticError):
    """A loss or gradient became non-finite."""
