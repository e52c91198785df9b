"""Exception types shared across the toolkit."""


class DatasetParseError(ValueError):
    """A dataset file could not be parsed. Carries the offending line number."""

    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""


class FormatError(ValueError):
    """A binary container has a bad magic, version, or inconsistent shape."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class InsufficientDataError(ValueError):
    """Not enough samples or tokens to satisfy the request."""


class DegenerateEmbeddingError(ValueError):
    """An embedding centroid collapsed to the zero vector."""


class NumericalError(RuntimeError):
    """A linear solve failed even after ridge damping."""


class PipelineError(RuntimeError):
    """A pipeline stage failed. Carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
