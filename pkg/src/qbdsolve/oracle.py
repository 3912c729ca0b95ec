"""Reference engines: direct sparse solve, fixed-point rate matrix, and
distribution comparison."""
from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import SteadyState, generator_residual, split_levels
from .errors import DivergenceError, NumericalError, SingularMatrixError

RESIDUAL_WARN = 1e-10


class AccuracyWarning(UserWarning):
    """A reference solution has a larger residual than expected."""


def direct_steady_state(Q, level_sizes: Sequence[int] | None = None) -> SteadyState:
    """Solve pi Q = 0, pi 1' = 1 by sparse LU with one balance equation
    replaced by the normalisation.

    ``level_sizes`` splits the result into per-level vectors; by default the
    whole vector is a single level.
    """
    Q = sp.csr_matrix(Q, dtype=float)
    n = Q.shape[0]
    if Q.shape != (n, n) or n == 0:
        raise ValueError(f"generator must be square and nonempty, got {Q.shape}")
    A = Q.T.tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            lu = spla.splu(A.tocsc())
            pi = lu.solve(b)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularMatrixError(f"generator is reducible or singular: {exc}") from exc
    if not np.all(np.isfinite(pi)):
        raise SingularMatrixError("generator is reducible or singular")
    if pi.min() < -1e-10:
        raise NumericalError(f"direct solve produced negative probability {pi.min():.3e}")
    pi = np.where(pi < 0, 0.0, pi)
    pi = pi / pi.sum()
    residual = generator_residual(pi, Q)
    info = {"method": "direct"}
    if residual > RESIDUAL_WARN:
        msg = f"direct solve residual {residual:.3e} exceeds {RESIDUAL_WARN:g}"
        info["accuracy_warning"] = msg
        warnings.warn(msg, AccuracyWarning, stacklevel=2)
    sizes = [n] if level_sizes is None else list(level_sizes)
    if sum(sizes) != n:
        raise ValueError("level sizes do not add up to the generator dimension")
    vectors = split_levels(pi, sizes)
    return SteadyState(vectors, residual, float(vectors[-1].sum()), info)


def fixed_point_R(A0, A1, A2, tol: float = 1e-14, max_iter: int = 100_000, check_monotone: bool = True) -> np.ndarray:
    """Minimal nonnegative solution of A0 + R A1 + R^2 A2 = 0.

    Iterates R <- -(A0 + R^2 A2) A1^-1 from R = 0 until the max-norm change
    drops below ``tol``.  The iterates must be entrywise nondecreasing;
    a violation beyond rounding raises :class:`NumericalError`.
    """
    A0, A1, A2 = (np.asarray(a.toarray() if sp.issparse(a) else a, dtype=float) for a in (A0, A1, A2))
    A0, A1, A2 = (np.atleast_2d(a) for a in (A0, A1, A2))
    N = -np.linalg.inv(A1)
    R = np.zeros_like(A0)
    step = np.inf
    for it in range(1, max_iter + 1):
        R_new = (A0 + R @ R @ A2) @ N
        if check_monotone:
            drop = np.max(R - R_new)
            if drop > 1e-12 * max(1.0, np.max(np.abs(R_new))):
                raise NumericalError(f"fixed-point iterates decreased by {drop:.3e} at iteration {it}")
        step = float(np.max(np.abs(R_new - R)))
        R = R_new
        if step < tol:
            return R
    residual = float(np.max(np.abs(A0 + R @ A1 + R @ R @ A2)))
    raise DivergenceError(
        f"fixed-point iteration did not converge in {max_iter} iterations "
        f"(last step {step:.3e}, residual {residual:.3e})"
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Elementwise disagreement between two stationary distributions."""

    linf_error: float
    l1_error: float
    per_level_max: tuple[float, ...]
    tolerance: float | None = None

    @property
    def passed(self) -> bool | None:
        if self.tolerance is None:
            return None
        return self.linf_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "linf_error": self.linf_error,
            "l1_error": self.l1_error,
            "per_level_max": list(self.per_level_max),
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def compare_distributions(a, b, permutation=None, tol: float | None = None) -> ComparisonReport:
    """Compare two distributions (SteadyState or flat arrays).

    ``permutation`` maps positions of ``b`` onto ``a``: the comparison is
    ``a[k]`` against ``b[permutation[k]]``.  Per-level maxima follow the
    level layout of ``a``.
    """
    va = a.to_array() if isinstance(a, SteadyState) else np.asarray(a, dtype=float).ravel()
    vb = b.to_array() if isinstance(b, SteadyState) else np.asarray(b, dtype=float).ravel()
    if va.shape != vb.shape:
        raise ValueError(f"state counts differ: {va.size} vs {vb.size}")
    if permutation is not None:
        permutation = np.asarray(permutation)
        if permutation.shape != vb.shape:
            raise ValueError("permutation length does not match the state count")
        vb = vb[permutation]
    diff = np.abs(va - vb)
    sizes = a.level_sizes if isinstance(a, SteadyState) else (va.size,)
    per_level = tuple(float(d.max()) if d.size else 0.0 for d in split_levels(diff, sizes))
    return ComparisonReport(
        linf_error=float(diff.max()) if diff.size else 0.0,
        l1_error=float(diff.sum()),
        per_level_max=per_level,
        tolerance=tol,
    )
