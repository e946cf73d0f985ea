"""Exception hierarchy shared by every stage of the pipeline."""


class PCFCError(Exception):
    """Base class for all package errors."""


class ParseError(PCFCError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class ConfigError(PCFCError, ValueError):
    pass


class VfUnreachable(PCFCError):
    pass


class SingularJacobian(PCFCError):
    pass


class SolverFailure(PCFCError):
    pass


class EmptyRegion(PCFCError, ValueError):
    pass


class NoValidCandidate(PCFCError):
    pass


class EmptySurface(PCFCError, ValueError):
    pass


class EmptyCloud(PCFCError, ValueError):
    pass


class DimensionMismatch(PCFCError, ValueError):
    pass


class KTooLarge(PCFCError, ValueError):
    pass


class EmptyTestSet(PCFCError, ValueError):
    pass


class CaseFailure(PCFCError):
    """A load case of the failure-surface batch failed; wraps the cause."""

    def __init__(self, rve_id, run_id, cause):
        self.rve_id = rve_id
        self.run_id = run_id
        self.cause = cause
        super().__init__(f"{rve_id}:{run_id}: {type(cause).__name__}: {cause}")
