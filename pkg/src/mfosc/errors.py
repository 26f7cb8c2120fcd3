"""Exception hierarchy shared by every layer of the package."""


class MFError(Exception):
    """Base class for all package errors."""


class ContractError(MFError):
    """A documented precondition of an operation was violated."""


class RangeError(ContractError):
    """An index fell outside the sieved range of a table."""


class ConfigError(MFError):
    """Invalid experiment configuration."""


class ResourceError(MFError):
    """A request would exceed a configured memory or enumeration budget."""


class FormatError(MFError):
    """A binary table file is corrupt or does not match its rule."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SearchError(MFError):
    """A constructive search came up empty."""


class GapError(SearchError):
    """Matched products exist but their minimal gap exceeds the cap."""

    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


class ChainError(SearchError):
    """The alpha chain could not be completed or violated an invariant."""


class NonTerminationError(MFError):
    """The greedy approximation exceeded its iteration cap."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class BudgetError(MFError):
    """A constructed product falls outside the admissible ratio set."""


class InternalError(MFError):
    """A state that the underlying mathematics rules out was reached."""
