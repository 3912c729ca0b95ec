"""Exception hierarchy shared by the solvers and the command line."""


class QBDError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class StructuralError(QBDError, ValueError):
    """Blocks are missing or have inconsistent dimensions."""

    exit_code = 4


class InputError(QBDError, ValueError):
    """A model description or parameter is malformed."""

    exit_code = 4


class ApplicabilityError(QBDError):
    """The requested algorithm cannot be applied to this chain."""

    exit_code = 2


class DESViolationError(ApplicabilityError):
    """A down block has more than one nonzero column."""

    def __init__(self, levels, message=None):
        self.levels = tuple(levels)
        if message is None:
            message = (
                "successive lumping requires every down block D_m to have a single "
                f"nonzero column (entrance state); violated at level(s) {list(self.levels)}"
            )
        super().__init__(message)


class LPCViolationError(ApplicabilityError):
    """The chain is not lattice path countable in the stage direction."""


class NotStageQBDError(LPCViolationError):
    """A within-level transition spans two or more stages."""


class HomogeneityError(LPCViolationError):
    """Interior rates are not identical across states."""


class NumericalError(QBDError):
    """A computation produced an invalid or unreliable result."""


class SingularMatrixError(NumericalError):
    pass


class InstabilityError(NumericalError):
    """The chain appears unstable (transient or null recurrent)."""


class DivergenceError(NumericalError):
    """A truncated series failed to converge."""
