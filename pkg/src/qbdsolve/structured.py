"""O(n^2) inversion of "tridiagonal plus one full column" matrices.

The matrices B = W + U~ produced by successive lumping of a birth-death
level have nonzeros only on the three central diagonals and in the entrance
column c.  Writing B = T + z e_c' with T tridiagonal, the inverse follows
from the explicit tridiagonal inverse and a Sherman-Morrison update:

    B^-1 = T^-1 - (T^-1 z)(e_c' T^-1) / (1 + e_c' T^-1 z)

Every entry of T^-1 costs O(1) once the forward (LU) and backward (UL)
pivots are known, so the whole inverse costs Theta(n^2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import NumericalError

PIVOT_TOL = 1e-300
RANK_ONE_TOL = 1e-12


class FallbackToDense(NumericalError):
    """Structured inversion is numerically unsafe; use dense LU instead."""


@dataclass(frozen=True)
class StructuredB:
    """Band and entrance-column rates of a structured B matrix.

    ``b_down[i] = B[i, i-1]``, ``b_up[i] = B[i, i+1]``, ``b_diag[i] = -B[i, i]``
    and ``b_z[i] = B[i, c]`` for rows more than one step away from the
    entrance column ``c`` (zero elsewhere).  With ``c = 0`` the row-1 entry
    ``b_down[1]`` is the combined rate b^d_1 + b^z_1.
    """

    b_up: np.ndarray
    b_down: np.ndarray
    b_z: np.ndarray
    b_diag: np.ndarray
    entrance: int = 0
    element_homogeneous: bool = False

    @property
    def size(self) -> int:
        return len(self.b_diag)

    def to_dense(self) -> np.ndarray:
        n = self.size
        B = np.diag(-self.b_diag.astype(float))
        idx = np.arange(n - 1)
        B[idx + 1, idx] += self.b_down[1:]
        B[idx, idx + 1] += self.b_up[:-1]
        B[:, self.entrance] += self.b_z
        return B

    @classmethod
    def from_rates(cls, b_up, b_down, b_z, entrance: int = 0, leak=None) -> StructuredB:
        """Build a structured generator-like B from its off-diagonal rates.

        Row sums are zero except for an optional extra ``leak`` vector
        (outflow not represented in B); ``b_z`` entries within one step of the
        entrance are folded into the band.
        """
        b_up = np.asarray(b_up, dtype=float).copy()
        b_down = np.asarray(b_down, dtype=float).copy()
        b_z = np.asarray(b_z, dtype=float).copy()
        n = len(b_up)
        b_up[-1] = 0.0
        b_down[0] = 0.0
        for i in range(max(entrance - 1, 0), min(entrance + 2, n)):
            if i == entrance - 1:
                b_up[i] += b_z[i]
            elif i == entrance + 1:
                b_down[i] += b_z[i]
            b_z[i] = 0.0
        b_diag = b_up + b_down + b_z
        if leak is not None:
            b_diag = b_diag + np.asarray(leak, dtype=float)
        return cls(b_up, b_down, b_z, b_diag, entrance, _homogeneous(b_up, b_down, b_z, b_diag, entrance))


def _as_csr(block) -> sp.csr_matrix:
    return block if sp.isspmatrix_csr(block) else sp.csr_matrix(block)


def _interior_rows(n: int, c: int) -> np.ndarray:
    rows = np.arange(1, n - 1)
    return rows[np.abs(rows - c) > 1]


def _homogeneous(b_up, b_down, b_z, b_diag, c) -> bool:
    rows = _interior_rows(len(b_diag), c)
    if len(rows) == 0:
        return False
    return all(np.all(v[rows] == v[rows[0]]) for v in (b_up, b_down, b_z, b_diag))


def structure_of(B, entrance: int, extra_column=None) -> StructuredB | None:
    """Classify ``B`` as tridiagonal plus entrance column, or return ``None``.

    ``extra_column`` (a dense vector) is added to column ``entrance`` first,
    so B = W + U~ can be classified without assembling it.
    """
    B = _as_csr(B)
    n = B.shape[0]
    rows = np.repeat(np.arange(n), np.diff(B.indptr))
    cols = B.indices
    vals = B.data
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    offset = cols - rows
    if not np.all((np.abs(offset) <= 1) | (cols == entrance)):
        return None
    diag = -np.bincount(rows[offset == 0], vals[offset == 0], minlength=n)
    up = np.bincount(rows[offset == 1], vals[offset == 1], minlength=n)
    down = np.bincount(rows[offset == -1], vals[offset == -1], minlength=n)
    far = np.abs(offset) > 1
    z = np.bincount(rows[far], vals[far], minlength=n)
    if extra_column is not None:
        extra = np.asarray(extra_column, dtype=float)
        near = np.zeros(n, dtype=bool)
        near[max(entrance - 1, 0):min(entrance + 2, n)] = True
        z = z + np.where(near, 0.0, extra)
        diag[entrance] -= extra[entrance]
        if entrance > 0:
            up[entrance - 1] += extra[entrance - 1]
        if entrance + 1 < n:
            down[entrance + 1] += extra[entrance + 1]
    return StructuredB(up, down, z, diag, entrance, _homogeneous(up, down, z, diag, entrance))


@njit(cache=True)
def _pivots(a, b, c, delta, eps):
    n = a.shape[0]
    delta[0] = a[0]
    for i in range(1, n):
        if abs(delta[i - 1]) < PIVOT_TOL:
            return False
        delta[i] = a[i] - b[i] * c[i - 1] / delta[i - 1]
    eps[n - 1] = a[n - 1]
    for i in range(n - 2, -1, -1):
        if abs(eps[i + 1]) < PIVOT_TOL:
            return False
        eps[i] = a[i] - c[i] * b[i + 1] / eps[i + 1]
    return True


@njit(cache=True)
def _pivots_constant(a, b, c, delta, eps):
    # Same recurrences, but once the coefficients repeat and the pivot has
    # reached its fixed point the remaining pivots are copied, not recomputed.
    n = a.shape[0]
    delta[0] = a[0]
    settled = False
    for i in range(1, n):
        same = a[i] == a[i - 1] and b[i] * c[i - 1] == b[i - 1] * c[i - 2] if i >= 2 else False
        if settled and same:
            delta[i] = delta[i - 1]
            continue
        if abs(delta[i - 1]) < PIVOT_TOL:
            return False
        delta[i] = a[i] - b[i] * c[i - 1] / delta[i - 1]
        settled = same and abs(delta[i] - delta[i - 1]) <= 1e-16 * abs(delta[i])
    eps[n - 1] = a[n - 1]
    settled = False
    for i in range(n - 2, -1, -1):
        same = a[i] == a[i + 1] and c[i] * b[i + 1] == c[i + 1] * b[i + 2] if i <= n - 3 else False
        if settled and same:
            eps[i] = eps[i + 1]
            continue
        if abs(eps[i + 1]) < PIVOT_TOL:
            return False
        eps[i] = a[i] - c[i] * b[i + 1] / eps[i + 1]
        settled = same and abs(eps[i] - eps[i + 1]) <= 1e-16 * abs(eps[i])
    return True


@njit(cache=True)
def _fill_tridiagonal_inverse(a, b, c, delta, eps, out):
    n = a.shape[0]
    for i in range(n):
        s = delta[i] + eps[i] - a[i]
        if abs(s) < PIVOT_TOL:
            return False
        out[i, i] = 1.0 / s
    # rows above the diagonal: x_i = -c_i x_{i+1} / delta_i
    for i in range(n - 2, -1, -1):
        g = -c[i] / delta[i]
        for j in range(i + 1, n):
            out[i, j] = g * out[i + 1, j]
    # rows below the diagonal: x_i = -b_i x_{i-1} / eps_i
    for i in range(1, n):
        h = -b[i] / eps[i]
        for j in range(i):
            out[i, j] = h * out[i - 1, j]
    return True


@njit(cache=True)
def _column_update(X, z, col):
    n = X.shape[0]
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += X[i, k] * z[k]
        y[i] = acc
    denom = 1.0 + y[col]
    if abs(denom) < RANK_ONE_TOL:
        return denom
    r = X[col, :].copy()
    for i in range(n):
        f = y[i] / denom
        if f != 0.0:
            for j in range(n):
                X[i, j] -= f * r[j]
    return denom


def tridiagonal_inverse(diag, sub, sup, constant_coefficients: bool = False) -> np.ndarray:
    """Full inverse of a tridiagonal matrix in Theta(n^2).

    ``sub[i] = T[i, i-1]`` (``sub[0]`` unused), ``sup[i] = T[i, i+1]``
    (``sup[-1]`` unused).  Raises :class:`FallbackToDense` on a vanishing
    pivot.
    """
    a = np.ascontiguousarray(diag, dtype=float)
    b = np.ascontiguousarray(sub, dtype=float)
    c = np.ascontiguousarray(sup, dtype=float)
    n = a.shape[0]
    delta = np.empty(n)
    eps = np.empty(n)
    pivots = _pivots_constant if constant_coefficients else _pivots
    if not pivots(a, b, c, delta, eps):
        raise FallbackToDense("vanishing pivot in tridiagonal factorisation")
    out = np.empty((n, n))
    if not _fill_tridiagonal_inverse(a, b, c, delta, eps, out):
        raise FallbackToDense("vanishing diagonal of tridiagonal inverse")
    if not np.all(np.isfinite(out)):
        raise FallbackToDense("non-finite entries in tridiagonal inverse")
    return out


def invert_B_structured(B: StructuredB) -> np.ndarray:
    """Inverse of a structured B in Theta(n^2) operations.

    Element-homogeneous inputs use the constant-coefficient pivot
    recurrences.  Raises :class:`FallbackToDense` when a pivot or the
    rank-one denominator ``1 + e_c' T^-1 z`` is (near) zero.
    """
    X = tridiagonal_inverse(-B.b_diag, B.b_down, B.b_up, constant_coefficients=B.element_homogeneous)
    z = np.ascontiguousarray(B.b_z, dtype=float)
    if np.any(z):
        denom = _column_update(X, z, B.entrance)
        if abs(denom) < RANK_ONE_TOL:
            raise FallbackToDense(f"rank-one denominator {denom:.3e} too small")
        if not np.all(np.isfinite(X)):
            raise FallbackToDense("non-finite entries after rank-one update")
    return X
