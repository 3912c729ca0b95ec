"""Successive-lumping solution of QBD chains with a down entrance state.

For a chain whose down blocks D_m each have a single nonzero column (the
entrance stage of level m-1), the level vectors satisfy

    pi^m = pi^{m-1} R_m,        R_m = -U^{m-1} (B^m)^-1,
    B^m  = W^m + U~^m,          U~^m = (U^m 1') e_c,

and pi^0 solves pi^0 [S e_c - B^0] = e_c with S = 1' + sum_m R_1...R_m 1'.
The B inverse is computed in O(l^2) when W^m is birth-death.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .core import (
    LevelBlockChain,
    SteadyState,
    assemble_full_generator,
    blocks_equal,
    generator_residual,
    require_des,
    split_levels,
)
from .errors import ApplicabilityError, DivergenceError, InstabilityError, NumericalError, SingularMatrixError
from .structured import FallbackToDense, StructuredB, _as_csr, invert_B_structured, structure_of

log = logging.getLogger(__name__)

QDESA = "QDESA"
QDESA_PLUS = "QDESA+"
QDESA_PLUS_PLUS = "QDESA++"
VARIANTS = (QDESA, QDESA_PLUS, QDESA_PLUS_PLUS)

NEGATIVE_TOL = 1e-12
DEFAULT_TAIL_TOL = 1e-12


def build_u_tilde(U, entrance: int | None, size: int | None = None) -> sp.csr_matrix:
    """Row sums of ``U`` placed in the entrance column, zeros elsewhere."""
    if U is None:
        return sp.csr_matrix((size, size))
    U = sp.csr_matrix(U)
    n = U.shape[0]
    rows = np.asarray(U.sum(axis=1)).ravel()
    if entrance is None:
        if np.any(rows):
            raise ApplicabilityError("level has upward transitions but no entrance state to return through")
        return sp.csr_matrix((n, n))
    nz = np.flatnonzero(rows)
    return sp.csr_matrix((rows[nz], (nz, np.full(nz.size, entrance))), shape=(n, n))


def build_B(W, U, entrance: int | None) -> tuple[sp.csr_matrix, StructuredB | None]:
    """B = W + U~, and its structured form when W is birth-death."""
    W = sp.csr_matrix(W)
    B = (W + build_u_tilde(U, entrance, W.shape[0])).tocsr()
    B.eliminate_zeros()
    sb = structure_of(B, entrance if entrance is not None else 0)
    return B, sb


class _LevelB:
    """B^m of one level: structured form up front, sparse matrix on demand."""

    def __init__(self, W, U, entrance: int | None):
        self.W = _as_csr(W)
        self.U = U
        self.entrance = entrance
        if U is not None and entrance is None:
            build_u_tilde(U, entrance)
        rowsums = None if U is None else np.asarray(U @ np.ones(U.shape[1])).ravel()
        self.sb = structure_of(self.W, entrance if entrance is not None else 0, rowsums)

    @property
    def matrix(self) -> sp.csr_matrix:
        B = (self.W + build_u_tilde(self.U, self.entrance, self.W.shape[0])).tocsr()
        B.eliminate_zeros()
        return B


def _is_birth_death(block) -> bool:
    block = _as_csr(block)
    rows = np.repeat(np.arange(block.shape[0]), np.diff(block.indptr))
    return bool(np.all(np.abs(rows - block.indices)[block.data != 0] <= 1))


def _level_B(chain: LevelBlockChain, m: int) -> _LevelB:
    U = chain.U[m] if m < chain.num_levels - 1 else None
    return _LevelB(chain.W[m], U, chain.entrance_of_level(m))


def classify_variant(chain: LevelBlockChain, _interior_B=None) -> str:
    """Most efficient successive-lumping variant for ``chain``.

    QDESA++ needs birth-death W on every level and an element-homogeneous
    interior B shared by all interior levels; QDESA+ only birth-death W.
    """
    require_des(chain)
    if not all(_is_birth_death(w) for w in chain.W):
        return QDESA
    if chain.level_homogeneous:
        sb = (_interior_B if _interior_B is not None else _level_B(chain, 1)).sb
        if sb is not None and sb.element_homogeneous:
            return QDESA_PLUS_PLUS
    return QDESA_PLUS


def invert_B(B, sb: StructuredB | None, variant: str) -> tuple[np.ndarray, str]:
    """Invert B with the route matching ``variant``; returns (inverse, route).

    ``B`` may be a matrix or a zero-argument callable producing it; it is
    only needed for the dense route.
    """
    if variant != QDESA and sb is not None:
        if variant == QDESA_PLUS and sb.element_homogeneous:
            sb = StructuredB(sb.b_up, sb.b_down, sb.b_z, sb.b_diag, sb.entrance, False)
        try:
            return invert_B_structured(sb), "structured"
        except FallbackToDense as exc:
            log.info("structured inversion fell back to dense LU: %s", exc)
    if callable(B):
        B = B()
    dense = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    try:
        lu = la.lu_factor(dense, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise SingularMatrixError(str(exc)) from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-300):
        raise SingularMatrixError("B is singular")
    return la.lu_solve(lu, np.eye(dense.shape[0])), "dense"


@dataclass(frozen=True)
class RateMatrixSet:
    """Rate matrices R_1..R_M with pi^m = pi^{m-1} R_m.

    Levels with identical blocks share the same array object, so a
    level-homogeneous chain holds one interior R.  ``routes[m-1]`` records
    how B^m was inverted.
    """

    matrices: tuple[np.ndarray, ...]
    variant: str
    routes: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, m: int) -> np.ndarray:
        """R_m for m = 1..M."""
        if m < 1:
            raise IndexError("rate matrices are indexed from 1")
        return self.matrices[m - 1]

    @property
    def distinct(self) -> int:
        return len({id(r) for r in self.matrices})

    @property
    def interior(self) -> np.ndarray:
        """The rate matrix shared by interior levels (R_2, or R_1 for short chains)."""
        return self.matrices[1] if len(self.matrices) > 2 else self.matrices[0]


def _clip_negative(R: np.ndarray, m: int) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(R))) if R.size else 1.0)
    worst = float(R.min()) if R.size else 0.0
    if worst < -NEGATIVE_TOL * scale:
        raise NumericalError(f"R_{m} has a negative entry {worst:.3e}")
    if worst < 0:
        R = np.where(R < 0, 0.0, R)
    return R


def compute_rate_matrices(chain: LevelBlockChain, variant: str | None = None) -> RateMatrixSet:
    """R_m = -U^{m-1} (B^m)^-1 for every level m >= 1.

    ``variant`` selects the inversion route (defaults to
    :func:`classify_variant`); asking for a variant the chain does not
    support raises :class:`ApplicabilityError`.
    """
    n_levels = chain.num_levels
    level_B = {1: _level_B(chain, 1)} if n_levels > 1 else {}
    best = classify_variant(chain, level_B.get(1))
    if variant is None:
        variant = best
    elif VARIANTS.index(variant) > VARIANTS.index(best):
        raise ApplicabilityError(f"{variant} is not applicable to this chain (best available: {best})")
    matrices: list[np.ndarray] = []
    routes: list[str] = []
    prev_key = None
    for m in range(1, n_levels):
        U_above = chain.U[m] if m < n_levels - 1 else None
        key = (chain.W[m], U_above, chain.entrance_of_level(m), chain.U[m - 1])
        if prev_key is not None and _same_key(key, prev_key):
            matrices.append(matrices[-1])
            routes.append(routes[-1])
            continue
        lb = level_B[m] if m in level_B else _level_B(chain, m)
        try:
            C, route = invert_B(lambda: lb.matrix, lb.sb, variant)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"B^{m} is singular: {exc}") from exc
        R = -(sp.csr_matrix(chain.U[m - 1]) @ C)
        R = _clip_negative(np.asarray(R), m)
        matrices.append(R)
        routes.append(route)
        prev_key = key
    return RateMatrixSet(tuple(matrices), variant, tuple(routes))


def _same_key(a, b) -> bool:
    return (
        blocks_equal(a[0], b[0])
        and blocks_equal(a[1], b[1])
        and a[2] == b[2]
        and blocks_equal(a[3], b[3])
    )


def spectral_radius(R: np.ndarray, tol: float = 1e-10, max_iter: int = 5000) -> float:
    """Perron root of a nonnegative matrix by power iteration."""
    n = R.shape[0]
    if n == 0 or not np.any(R):
        return 0.0
    x = np.ones(n) / n
    rho = 0.0
    for _ in range(max_iter):
        y = R @ x
        norm = np.abs(y).sum()
        if norm == 0.0:
            return 0.0
        if abs(norm - rho) <= tol * max(norm, 1.0):
            return float(norm)
        rho = norm
        x = y / norm
    return float(rho)


def compute_S(
    rates: RateMatrixSet | list, M2: int | None = None, tail_tol: float = DEFAULT_TAIL_TOL, window: int = 50
) -> np.ndarray:
    """Column vector 1' + sum_{m=1}^{M2} R_1...R_m 1'.

    With a finite ``M2`` the sum is evaluated by nested (Horner) products.
    With ``M2=None`` the chain is taken to be infinite with R_m = R_2 for
    m >= 2 (R_1 alone if only one matrix is given), and the series is cut
    once the added term drops below ``tail_tol`` in the max norm.
    """
    mats = rates.matrices if isinstance(rates, RateMatrixSet) else tuple(rates)
    if not mats:
        raise ValueError("empty rate matrix set")
    if M2 is not None:
        if M2 > len(mats):
            raise ValueError(f"M2={M2} exceeds the {len(mats)} available rate matrices")
        if M2 == 0:
            return np.ones(mats[0].shape[0])
        v = np.ones(mats[M2 - 1].shape[1])
        for m in range(M2, 0, -1):
            v = 1.0 + mats[m - 1] @ v
        return v
    R1 = mats[0]
    R = mats[1] if len(mats) > 1 else mats[0]
    w = np.ones(R.shape[1])
    total = np.zeros(R.shape[1])
    norms = []
    for _ in range(1_000_000):
        total += w
        term = R1 @ w
        size = float(np.max(np.abs(term)))
        if size < tail_tol:
            break
        norms.append(size)
        if len(norms) > window and norms[-1] >= norms[-1 - window]:
            raise DivergenceError("S series terms are not decreasing; spectral radius of R is not below 1")
        w = R @ w
    else:
        raise DivergenceError("S series did not converge")
    return 1.0 + R1 @ total


def compute_pi0(B0, S: np.ndarray, entrance: int | None = 0) -> np.ndarray:
    """pi^0 = e_c [S e_c - B^0]^-1, the entrance row of the inverse."""
    c = 0 if entrance is None else entrance
    B0 = B0.toarray() if sp.issparse(B0) else np.asarray(B0, dtype=float)
    A = -B0.copy()
    A[:, c] += S
    rhs = np.zeros(A.shape[0])
    rhs[c] = 1.0
    try:
        pi0 = la.solve(A.T, rhs)
    except la.LinAlgError as exc:
        raise SingularMatrixError(
            "S e_c - B^0 is singular; the chain may be non-ergodic or badly truncated"
        ) from exc
    if not np.all(np.isfinite(pi0)):
        raise SingularMatrixError("S e_c - B^0 is singular")
    return _clip_vector(pi0, "pi^0")


def _clip_vector(v: np.ndarray, name: str) -> np.ndarray:
    worst = float(v.min()) if v.size else 0.0
    if worst < -NEGATIVE_TOL * max(1.0, float(np.abs(v).max())):
        raise NumericalError(f"{name} has a negative entry {worst:.3e}")
    return np.where(v < 0, 0.0, v)


def propagate_pi(
    pi0: np.ndarray, rates: RateMatrixSet, M: int, chain: LevelBlockChain | None = None
) -> SteadyState:
    """pi^m = pi^{m-1} R_m for m = 1..M, normalised to total mass 1.

    When ``chain`` is given the residual max |pi Q| is computed against its
    assembled generator.
    """
    vectors = [np.asarray(pi0, dtype=float)]
    for m in range(1, M + 1):
        nxt = vectors[-1] @ rates[m]
        vectors.append(_clip_vector(nxt, f"pi^{m}"))
    flat = np.concatenate(vectors)
    flat = flat / flat.sum()
    sizes = [len(v) for v in vectors]
    residual = float("nan")
    if chain is not None:
        residual = generator_residual(flat, assemble_full_generator(chain))
    vecs = split_levels(flat, sizes)
    return SteadyState(vecs, residual, float(vecs[-1].sum()), {"variant": rates.variant})


def level_balance_residual(chain: LevelBlockChain, state: SteadyState) -> float:
    """max over levels of |pi^{m-1} U + pi^m W + pi^{m+1} D|."""
    pi = state.level_vectors
    worst = 0.0
    for m in range(chain.num_levels):
        r = pi[m] @ chain.W[m]
        if m > 0:
            r = r + pi[m - 1] @ chain.U[m - 1]
        if m + 1 < chain.num_levels:
            r = r + pi[m + 1] @ chain.D[m]
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def quadratic_residual(R: np.ndarray, U, W, D) -> float:
    """max |U + R W + R^2 D| for a level-homogeneous interior."""
    U = sp.csr_matrix(U)
    W = sp.csr_matrix(W)
    D = sp.csr_matrix(D)
    RW = (W.T @ R.T).T
    RRD = (D.T @ (R @ R).T).T
    return float(np.max(np.abs(U.toarray() + RW + RRD)))


def check_truncation(chain: LevelBlockChain, state: SteadyState) -> None:
    """Raise when mass piles up against a level cap (an unstable chain)."""
    meta = chain.truncation_meta
    if meta is None or not meta.levels_truncated:
        return
    marginal = state.level_marginal()
    if len(marginal) > 1 and marginal[-1] > marginal[0]:
        raise InstabilityError(
            f"mass on the last retained level ({marginal[-1]:.3g}) exceeds the mass on level 0 "
            f"({marginal[0]:.3g}); the parameters look unstable"
        )


def solve_qdesa(
    chain: LevelBlockChain,
    variant: str | None = None,
    tail_tol: float = DEFAULT_TAIL_TOL,
    check_stability: bool = True,
    diagnostics: bool = True,
) -> SteadyState:
    """Stationary distribution by successive lumping.

    Runs classification, B construction and inversion, the rate matrices,
    S, pi^0 and the level recursion.  The returned ``info`` records the
    variant, the inversion routes and all residuals.
    """
    require_des(chain)
    rates = compute_rate_matrices(chain, variant)
    n_levels = chain.num_levels
    info: dict = {"variant": rates.variant, "routes": sorted(set(rates.routes)), "distinct_rate_matrices": rates.distinct}
    if check_stability and chain.level_homogeneous and n_levels > 2:
        rho = spectral_radius(rates.interior)
        info["spectral_radius"] = rho
        if rho >= 1.0 - 1e-9:
            raise InstabilityError(f"spectral radius of R is {rho:.6f} >= 1; the chain is unstable")
    if n_levels > 1:
        S = compute_S(rates, n_levels - 1, tail_tol)
    else:
        S = np.ones(chain.level_sizes[0])
    B0 = _level_B(chain, 0).matrix
    pi0 = compute_pi0(B0, S, chain.entrance_of_level(0))
    state = propagate_pi(pi0, rates, n_levels - 1, chain)
    if diagnostics:
        info["level_balance_residual"] = level_balance_residual(chain, state)
        if chain.level_homogeneous and n_levels > 3 and chain.level_sizes[1] <= 1500:
            info["quadratic_residual"] = quadratic_residual(rates.interior, chain.U[1], chain.W[2], chain.D[2])
    info["residual_inf"] = state.residual_inf
    state = SteadyState(state.level_vectors, state.residual_inf, state.truncation_mass, info)
    if check_stability:
        check_truncation(chain, state)
    return state
