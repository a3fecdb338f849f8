"""Exception hierarchy shared by every pipeline stage."""


class AuditError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AuditError, ValueError):
    """Input data violates a documented invariant."""


class ConfigError(AuditError, ValueError):
    """A configuration parameter is outside its documented band."""


class SchemaError(ValidationError):
    """A data file (taxonomy, label export, fixture) has the wrong shape."""


class ClientError(AuditError):
    """A provider client failed."""


class TransientClientError(ClientError):
    """Transport-level failure; the request may be retried."""


class QuotaExceededError(ClientError):
    """Provider quota exhausted; retrying will not help."""
