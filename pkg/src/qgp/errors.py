"""Exception types shared across the engine."""


class QgpError(Exception):
    """Base class for engine errors."""


class ConfigurationError(QgpError):
    """A component was wired with unusable inputs (bad paths, family mismatch)."""


class GenerationError(QgpError):
    """Task or backlog generation could not satisfy its feasibility constraints."""


class TerminatedRunError(QgpError):
    """An operation was applied to a ledger whose outcome is already set."""


class ActionParseError(QgpError):
    """A serialized action or observation could not be decoded."""


class AdapterError(QgpError):
    """The external policy subprocess failed in a way that aborts the run."""


class AnalysisError(QgpError):
    """Metric aggregation or paired analysis received unusable inputs."""
