"""Exception taxonomy shared by all tenfact modules."""


class TenfactError(Exception):
    """Base class for all package errors."""


class UsageError(TenfactError):
    """Caller violated a precondition (bad dims, zero vector, bad flag)."""


class DegenerateStateError(TenfactError):
    """Tensor entries exceeded the configured magnitude cap."""


class GenerationError(TenfactError):
    """Demo generation could not produce a valid (or filter-clean) sample."""


class FormatError(TenfactError):
    """A file or token stream does not match its declared format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptionError(TenfactError):
    """Data parsed cleanly but failed re-verification."""


class IncompatibleError(TenfactError):
    """A checkpoint or certificate does not match the requested problem size."""


class BudgetError(TenfactError):
    """The oracle search space exceeds the configured budget."""


class SearchError(TenfactError):
    """MCTS could not produce a valid candidate move."""


class TrainingError(TenfactError):
    """Training hit a non-finite loss or update."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
