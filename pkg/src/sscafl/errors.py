"""Exception types shared across the toolkit."""


class SscaflError(Exception):
    """Base class for toolkit-specific errors."""


class NumericError(SscaflError, ArithmeticError):
    """A computation produced a non-finite value.

    `coordinate` identifies the offending coordinate when known.
    """

    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


class DecodeError(SscaflError):
    """Malformed wire bytes. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class IngestionError(SscaflError):
    """Bad dataset file. Carries the path and byte offset of the problem."""

    def __init__(self, message: str, path: str, offset: int):
        super().__init__(f"{path}: {message} (at byte offset {offset})")
        self.path = path
        self.offset = offset


class SolverError(SscaflError):
    """Iterative solver failed to reach its tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ProtocolError(SscaflError):
    """A well-formed frame arrived out of protocol (wrong kind, round, or shape)."""


class RoundAbortError(SscaflError):
    """A federated round could not complete (missing or malformed reply)."""

    def __init__(self, message: str, round_index: int):
        super().__init__(f"round {round_index}: {message}")
        self.round_index = round_index


class ConfigError(SscaflError):
    """Invalid run configuration."""
