"""Lattice path counting (LPC) rate matrix for stage-homogeneous QBDs.

In the stage view a chain is lattice path countable when every interior
state (stage >= 1) jumps only in the five directions (e1, e2) with
e1 in {0, 1} (level) and e2 in {-1, 0, 1} (stage), with rates that do not
depend on the state.  The stage rate matrix is then upper-triangular
Toeplitz with first row r_0, r_1, ... given in closed form through the
first-passage weights G_h of weighted lattice paths.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from numba import njit

from .core import (
    StageBlockChain,
    SteadyState,
    assemble_full_generator,
    generator_residual,
    split_levels,
    stage_major_order,
)
from .errors import DivergenceError, HomogeneityError, InstabilityError, LPCViolationError, NumericalError, SingularMatrixError

DIRECTIONS = ((0, 1), (0, -1), (1, 0), (1, 1), (1, -1))
COMPASS = {
    (0, 1): "N",
    (0, -1): "S",
    (1, 0): "E",
    (1, 1): "NE",
    (1, -1): "SE",
    (-1, 0): "W",
    (-1, 1): "NW",
    (-1, -1): "SW",
}
DEFAULT_SERIES_TOL = 1e-14
HOMOGENEITY_RTOL = 1e-12


@dataclass(frozen=True)
class JumpProbabilities:
    """Jump probabilities of the homogeneous interior, keyed by (level, stage) step."""

    phi: Mapping[tuple[int, int], float]
    exit_rate: float = 1.0

    def __post_init__(self):
        phi = {d: float(self.phi.get(d, 0.0)) for d in DIRECTIONS}
        extra = set(self.phi) - set(DIRECTIONS)
        if extra:
            raise LPCViolationError(f"directions {sorted(extra)} are not allowed")
        if any(v < 0 for v in phi.values()):
            raise ValueError("jump probabilities must be nonnegative")
        total = sum(phi.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"jump probabilities sum to {total}, not 1")
        object.__setattr__(self, "phi", phi)

    def __getitem__(self, direction) -> float:
        return self.phi[tuple(direction)]

    @property
    def special_case(self) -> bool:
        """No diagonal level moves: the G series reduces to one summation."""
        return self.phi[(1, 1)] == 0.0 and self.phi[(1, -1)] == 0.0

    def stage_blocks(self, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Leading size x size sections of the interior stage blocks (rates)."""
        d = self.exit_rate
        eye = np.eye(size)
        shift = np.eye(size, k=1)
        A0 = d * (self.phi[(0, 1)] * eye + self.phi[(1, 1)] * shift)
        A1 = d * (-eye + self.phi[(1, 0)] * shift)
        A2 = d * (self.phi[(0, -1)] * eye + self.phi[(1, -1)] * shift)
        return A0, A1, A2


def _outflows(stage_chain: StageBlockChain):
    """Yield (stage, level, {direction: rate}) for every retained state."""
    chain = stage_chain.blocks
    n_stages = chain.num_levels
    for i in range(n_stages):
        blocks = [(0, chain.W[i])]
        if i + 1 < n_stages:
            blocks.append((1, chain.U[i]))
        if i > 0:
            blocks.append((-1, chain.D[i - 1]))
        rows: dict[int, dict] = {}
        for dstage, block in blocks:
            coo = block.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                if v == 0 or (dstage == 0 and r == c):
                    continue
                key = (int(c - r), dstage)
                out = rows.setdefault(int(r), {})
                out[key] = out.get(key, 0.0) + float(v)
        for level in range(chain.level_sizes[i]):
            yield i, level, rows.get(level, {})


def jump_probabilities(stage_chain: StageBlockChain) -> JumpProbabilities:
    """Embedded jump chain probabilities of the homogeneous interior.

    Interior states are those in stage >= 1, excluding states that touch a
    truncation boundary (last retained stage or level).  Raises
    :class:`LPCViolationError` naming a forbidden direction and
    :class:`HomogeneityError` when interior rates differ between states.
    """
    chain = stage_chain.blocks
    meta = chain.truncation_meta
    if meta is None or not meta.levels_truncated:
        raise LPCViolationError(
            "the number of stages must be infinite: the chain is finite in the stage direction"
        )
    n_stages = chain.num_levels
    n_levels = chain.level_sizes[0]
    last_stage = n_stages - 1
    last_level = n_levels - 1 if meta.stages_truncated else None
    reference = None
    ref_state = None
    for i, level, out in _outflows(stage_chain):
        if i == 0:
            continue
        for (e1, e2), rate in out.items():
            if (e1, e2) not in DIRECTIONS:
                name = COMPASS.get((e1, e2), f"jump {e1, e2}")
                raise LPCViolationError(
                    f"interior state (level {level}, stage {i}) has a transition to {name} "
                    f"(level step {e1}, stage step {e2}); only N, S, E, NE, SE are allowed "
                    "(no transitions to NW, W, SW)"
                )
        if i == last_stage or level == last_level:
            continue
        if reference is None:
            reference, ref_state = out, (level, i)
            continue
        keys = set(out) | set(reference)
        for k in keys:
            a, b = out.get(k, 0.0), reference.get(k, 0.0)
            if abs(a - b) > HOMOGENEITY_RTOL * max(abs(a), abs(b)):
                raise HomogeneityError(
                    f"interior rates differ between states {ref_state} and {(level, i)} "
                    f"in direction {COMPASS[k]}: {b} vs {a}; the chain is not element homogeneous "
                    "and cannot be uniformized to a zero-self-loop jump chain"
                )
    if reference is None:
        raise LPCViolationError("chain has no interior states; need at least 3 stages and 2 levels")
    d = sum(reference.values())
    if d <= 0:
        raise LPCViolationError("interior states are absorbing")
    phi = {k: v / d for k, v in reference.items()}
    total = sum(phi.values())
    phi = {k: v / total for k, v in phi.items()}
    return JumpProbabilities(phi, exit_rate=d)


# ---------------------------------------------------------------------------
# G_h series
# ---------------------------------------------------------------------------


@njit(cache=True)
def _log_or_zero(x, power):
    if power == 0:
        return 0.0
    return power * math.log(x)


@njit(cache=True)
def _series(h, s, u, p_se, p_e, p_ne, p_n, p_s, tol, max_terms):
    """Sum over m of L_h(s, u, m) P_h(s, u, m); returns (sum, terms, ok)."""
    t = h - s - u
    m = max(u, s - 1)
    if p_n == 0.0 and m > u:
        return 0.0, 0, True
    # log of the first term
    lt = (
        math.lgamma(2 * m + 1) - 2.0 * math.lgamma(m + 1) - math.log(m + 1)
        + math.lgamma(m + 2) - math.lgamma(s + 1) - math.lgamma(m + 2 - s)
        + math.lgamma(m + 1) - math.lgamma(u + 1) - math.lgamma(m - u + 1)
        + math.lgamma(2 * m + t + 1) - math.lgamma(t + 1) - math.lgamma(2 * m + 1)
    )
    lt += _log_or_zero(p_se, s) + _log_or_zero(p_e, t) + _log_or_zero(p_ne, u)
    lt += _log_or_zero(p_n, m - u) + _log_or_zero(p_s, m + 1 - s)
    if p_n == 0.0:
        return math.exp(lt), 1, True
    x = p_n * p_s
    log_x = math.log(x)
    acc = 0.0
    n = 0
    while n < max_terms:
        term = math.exp(lt)
        acc += term
        n += 1
        # ratio of consecutive terms in m: a Catalan factor that increases
        # towards 4 times binomial factors that decrease towards 1, so
        # 4 x (binomial factors) bounds every later ratio
        falling = (m + 2.0) / (m + 2 - s) * (m + 1.0) / (m + 1 - u) * (
            (2 * m + t + 1.0) * (2 * m + t + 2.0) / ((2 * m + 1.0) * (2 * m + 2.0))
        )
        step = math.log(2.0 * (2 * m + 1) / (m + 2) * falling) + log_x
        q = 4.0 * falling * x
        if q < 1.0 and term * q / (1.0 - q) <= tol * acc:
            return acc, n, True
        lt += step
        m += 1
    return acc, n, False


@njit(cache=True)
def _g_value(h, p_se, p_e, p_ne, p_n, p_s, tol, max_terms):
    total = 0.0
    terms = 0
    s_max = h if p_se > 0.0 else 0
    for s in range(s_max + 1):
        u_max = h - s if p_ne > 0.0 else 0
        for u in range(u_max + 1):
            t = h - s - u
            if t > 0 and p_e == 0.0:
                continue
            val, n, ok = _series(h, s, u, p_se, p_e, p_ne, p_n, p_s, tol, max_terms)
            terms += n
            if not ok:
                return total, terms, False
            total += val
    return total, terms, True


@njit(cache=True)
def _g_all(h_count, p_se, p_e, p_ne, p_n, p_s, tol, max_terms, out):
    terms = 0
    for h in range(h_count):
        val, n, ok = _g_value(h, p_se, p_e, p_ne, p_n, p_s, tol, max_terms)
        terms += n
        if not ok:
            return terms, h
        out[h] = val
    return terms, -1


def _check_series_phi(phi: JumpProbabilities) -> None:
    x = 4.0 * phi[(0, 1)] * phi[(0, -1)]
    if x >= 1.0 - 1e-12:
        raise DivergenceError(
            f"4 phi(0,1) phi(0,-1) = {x:.6f}; the path series does not converge (unstable stage drift)"
        )
    if phi[(0, -1)] == 0.0:
        raise DivergenceError("phi(0,-1) = 0: the stage process never moves down")


def compute_G(phi: JumpProbabilities, h: int, series_tol: float = DEFAULT_SERIES_TOL, max_terms: int = 1_000_000) -> float:
    """First-passage weight G_h: probability that the first step below the
    starting stage happens exactly ``h`` levels higher.

    The inner sum over m stops once the terms are decreasing and a geometric
    bound on the remaining tail falls below ``series_tol`` times the sum.
    """
    if h < 0:
        raise ValueError("h must be nonnegative")
    _check_series_phi(phi)
    val, _, ok = _g_value(
        h, phi[(1, -1)], phi[(1, 0)], phi[(1, 1)], phi[(0, 1)], phi[(0, -1)], series_tol, max_terms
    )
    if not ok:
        raise DivergenceError(f"G_{h} series did not converge within {max_terms} terms")
    return val


def compute_G_sequence(phi: JumpProbabilities, h_max: int, series_tol: float = DEFAULT_SERIES_TOL) -> np.ndarray:
    return np.array([compute_G(phi, h, series_tol) for h in range(h_max + 1)])


def catalan_G0(phi: JumpProbabilities) -> float:
    """G_0 in closed form: phi(0,-1) times the Catalan generating function."""
    up, down = phi[(0, 1)], phi[(0, -1)]
    x = up * down
    if x == 0.0:
        return down
    return down * (1.0 - math.sqrt(1.0 - 4.0 * x)) / (2.0 * x)


def compute_kappa(phi: JumpProbabilities, G, h_max: int) -> np.ndarray:
    """kappa_0 .. kappa_{h_max}, seeded with kappa_0 = 1 and kappa_{-1} = 0."""
    G = np.asarray(G, dtype=float)
    if len(G) < h_max + 1:
        raise ValueError(f"need G_0..G_{h_max}")
    denom = 1.0 - phi[(0, 1)] * G[0]
    if abs(denom) < 1e-14:
        raise SingularMatrixError("1 - phi(0,1) G_0 vanishes")
    kappa = np.zeros(h_max + 1)
    kappa[0] = 1.0
    p_e, p_n, p_ne = phi[(1, 0)], phi[(0, 1)], phi[(1, 1)]
    for h in range(1, h_max + 1):
        # G[h - j] for j = 0..h-1 is G[h..1]; G[h - j - 1] is G[h-1..0]
        num = p_e * kappa[h - 1]
        num += p_n * np.dot(G[h:0:-1], kappa[:h])
        num += p_ne * np.dot(G[h - 1::-1], kappa[:h])
        kappa[h] = num / denom
    return kappa


@dataclass(frozen=True)
class LpcRateMatrix:
    """Upper-triangular Toeplitz stage rate matrix given by its first row."""

    first_row: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.first_row)

    def to_dense(self) -> np.ndarray:
        M = self.dimension
        out = np.zeros((M, M))
        for h, r in enumerate(self.first_row):
            idx = np.arange(M - h)
            out[idx, idx + h] = r
        return out

    @property
    def spectral_radius(self) -> float:
        return float(self.first_row[0]) if self.dimension else 0.0


def compute_rhat(phi: JumpProbabilities, M: int, series_tol: float = DEFAULT_SERIES_TOL) -> LpcRateMatrix:
    """First row r_0..r_{M-1} of the LPC stage rate matrix.

    When phi(1,1) = phi(1,-1) = 0 only the s = u = 0 series is evaluated for
    each G_h, so the cost drops from O(M^4) to O(M^2).
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    _check_series_phi(phi)
    G = np.empty(M)
    args = (phi[(1, -1)], phi[(1, 0)], phi[(1, 1)], phi[(0, 1)], phi[(0, -1)])
    terms, failed = _g_all(M, *args, series_tol, 1_000_000, G)
    if failed >= 0:
        raise DivergenceError(f"G_{failed} series did not converge")
    kappa = compute_kappa(phi, G, M - 1)
    root = 1.0 + math.sqrt(1.0 - 4.0 * phi[(0, 1)] * phi[(0, -1)])
    kappa_prev = np.concatenate([[0.0], kappa[:-1]])
    row = 2.0 * (phi[(0, 1)] * kappa + phi[(1, 1)] * kappa_prev) / root
    if np.any(row < 0):
        raise NumericalError("negative rate matrix diagonal")
    return LpcRateMatrix(row, {"series_terms": terms, "special_case": phi.special_case, "G": G, "kappa": kappa})


def lpc_residual(rhat: LpcRateMatrix, A0, A1, A2) -> float:
    R = rhat.to_dense()
    A0, A1, A2 = (np.asarray(a.toarray() if sp.issparse(a) else a) for a in (A0, A1, A2))
    return float(np.max(np.abs(A0 + R @ A1 + R @ R @ A2)))


# ---------------------------------------------------------------------------
# stationary distribution
# ---------------------------------------------------------------------------


def lpc_steady_state(stage_chain: StageBlockChain, rhat: LpcRateMatrix) -> SteadyState:
    """Stationary distribution from the LPC rate matrix and a boundary solve.

    Unknowns are the stage-0 and stage-1 vectors; stages beyond follow
    pi_{i+1} = pi_i R.  Normalisation includes the infinite geometric tail
    pi_1 (I - R)^-1 1'.  The returned vectors are indexed by stage
    (``level_vectors[i]`` is stage i) up to the retained stage count.
    """
    if rhat.spectral_radius >= 1.0:
        raise InstabilityError(f"spectral radius of the stage rate matrix is {rhat.spectral_radius:.6f} >= 1")
    chain = stage_chain.blocks
    n = stage_chain.num_levels
    if rhat.dimension != n:
        raise ValueError(f"rate matrix has dimension {rhat.dimension}, chain has {n} levels")
    if stage_chain.num_stages < 3:
        raise LPCViolationError("need at least three retained stages")
    R = rhat.to_dense()
    B1 = stage_chain.B1.toarray()
    B0 = stage_chain.B0.toarray()
    A1 = chain.W[1].toarray()
    A2 = chain.D[0].toarray()
    A2_next = chain.D[1].toarray()
    # columns of stage 0 and stage 1 in pi Q = 0
    top = np.hstack([B1, B0])
    bottom = np.hstack([A2, A1 + R @ A2_next])
    system = np.vstack([top, bottom])
    I = np.eye(n)
    try:
        tail = la.solve(I - R, np.ones(n))
    except la.LinAlgError as exc:
        raise SingularMatrixError("I - R is singular") from exc
    norm = np.concatenate([np.ones(n), tail])
    A = system.copy()
    A[:, 0] = norm
    rhs = np.zeros(2 * n)
    rhs[0] = 1.0
    try:
        x = la.solve(A.T, rhs)
    except la.LinAlgError as exc:
        raise SingularMatrixError("boundary system is singular") from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("boundary system is singular")
    vectors = [x[:n], x[n:]]
    for _ in range(2, stage_chain.num_stages):
        vectors.append(vectors[-1] @ R)
    flat = np.concatenate(vectors)
    if flat.min() < -1e-12:
        raise NumericalError(f"negative stationary probability {flat.min():.3e}")
    flat = np.where(flat < 0, 0.0, flat)
    Q = assemble_full_generator(chain)
    vecs = split_levels(flat, chain.level_sizes)
    level_mass = np.sum(np.vstack(vecs), axis=0)
    info = {
        "method": "LPCA",
        "tail_mass": float(1.0 - flat.sum()),
        "spectral_radius": rhat.spectral_radius,
    }
    state = SteadyState(vecs, generator_residual(flat, Q), float(level_mass[-1]), info)
    if chain.truncation_meta is not None and chain.truncation_meta.stages_truncated and level_mass[-1] > level_mass[0]:
        raise InstabilityError(
            f"mass on the last retained level ({level_mass[-1]:.3g}) exceeds the mass on level 0; "
            "the parameters look unstable"
        )
    return state


def to_level_layout(state: SteadyState, num_levels: int, num_stages: int) -> np.ndarray:
    """Flatten a stage-indexed LPC solution into level-major order."""
    flat_stage = state.to_array()
    p = stage_major_order(num_levels, num_stages)
    out = np.empty_like(flat_stage)
    out[p] = flat_stage
    return out
