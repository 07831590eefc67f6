"""Exception types shared across the package."""


class MissbenchError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(MissbenchError):
    """Schema definition or header mismatch problems."""


class ParseError(MissbenchError):
    """Cell-level parsing failures during ingestion."""


class ValidationError(MissbenchError):
    """Data that violates a declared schema constraint."""


class ConfigurationError(MissbenchError):
    """Invalid run or scenario configuration."""


class InjectionError(MissbenchError):
    """Missingness simulation failures (e.g. null conditional cells)."""


class EvaluationError(MissbenchError):
    """Metric or group-resolution failures."""


class UnfittableError(MissbenchError):
    """An imputer cannot be fit on the given training data."""


class EmptyResultError(MissbenchError):
    """An operation produced an empty dataset (e.g. deletion removed every row)."""


class ContractError(MissbenchError):
    """A fit/transform or preprocessing contract was violated."""


class TrainingError(MissbenchError):
    """Model training cannot proceed (e.g. single-class training set)."""


class IntegrityError(MissbenchError):
    """Result-store corruption, e.g. one GUID with two different payloads."""
