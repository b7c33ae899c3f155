"""Shared exception types."""


class OpmodenetError(Exception):
    """Base class for all package errors."""


class ParseError(OpmodenetError):
    """Input document is not well-formed."""


class ValidationError(OpmodenetError):
    """Input parsed but violates a structural invariant."""


class DomainError(OpmodenetError):
    """Numeric argument outside the operation's domain."""


class ConfigurationError(OpmodenetError):
    """Missing or inconsistent configuration."""


class MissingDependencyError(OpmodenetError):
    """An upstream pipeline artifact has not been produced yet."""
