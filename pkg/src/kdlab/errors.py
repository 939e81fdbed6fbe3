"""Exception taxonomy shared across the package."""


class KdlabError(Exception):
    """Base class for all package errors."""


class ShapeError(KdlabError, ValueError):
    """Operand shapes are inconsistent (e.g. matmul inner dims)."""


class ParameterError(KdlabError, ValueError):
    """A configuration or call parameter violates its contract."""


class ContractError(KdlabError, ValueError):
    """An inter-module contract was violated (wrong loss kind, domain
    mismatch, non-scalar loss, ...)."""


class InputError(KdlabError, ValueError):
    """Bad user-facing input: out-of-vocab ids, empty datasets, ..."""


class MaskError(KdlabError, ValueError):
    """A sparsity mask references units that do not exist."""


class RewindError(KdlabError, ValueError):
    """Checkpoint digest does not match the active configuration."""


class NonFiniteError(KdlabError, FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class UnreliableCheckError(KdlabError, ValueError):
    """grad_check was handed a non-deterministic function."""


class DataError(KdlabError, ValueError):
    """Dataset file is unreadable or yields zero valid rows."""
