"""Level-partitioned QBD chains.

A chain is stored as its generator blocks: ``W[m]`` (within level m),
``U[m]`` (level m to m+1) and ``D[m-1]`` (level m to m-1).  States are laid
out level-major: level varies slowest, the stage index within a level
fastest.  Blocks are kept as CSR matrices and never mutated after
construction.
"""
from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .errors import DESViolationError, HomogeneityError, InputError, NotStageQBDError, StructuralError

ROW_SUM_TOL = 1e-12

State = tuple


def _csr(block) -> sp.csr_matrix:
    out = sp.csr_matrix(block, dtype=float)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _canonical(block) -> sp.csr_matrix:
    if sp.isspmatrix_csr(block) and block.has_canonical_format:
        return block
    return _csr(sp.csr_matrix(block, copy=True))


def blocks_equal(a: sp.spmatrix | None, b: sp.spmatrix | None) -> bool:
    """Exact equality of two sparse blocks (shape and every entry)."""
    if a is None or b is None:
        return a is b
    if a.shape != b.shape:
        return False
    if a is b:
        return True
    a, b = _canonical(a), _canonical(b)
    return (
        np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


@dataclass(frozen=True)
class TruncationMeta:
    """Record of how an infinite chain was cut down to a finite one.

    ``removed_outflow[m][k]`` is the total rate out of state ``(m, k)`` that
    pointed outside the retained box and was deleted; the diagonal was
    re-balanced by the same amount.
    """

    level_cap: int
    stage_cap: int
    level_extent: int | None
    stage_extent: int | None
    removed_outflow: tuple[np.ndarray, ...]

    @property
    def levels_truncated(self) -> bool:
        return self.level_extent is None or self.level_cap < self.level_extent

    @property
    def stages_truncated(self) -> bool:
        return self.stage_extent is None or self.stage_cap < self.stage_extent


@dataclass(frozen=True)
class LevelBlockChain:
    """Block-tridiagonal generator with per-level entrance metadata.

    Use :meth:`from_blocks` rather than the raw constructor; it normalises
    the blocks, checks dimensions and fills in the derived fields.
    """

    W: tuple[sp.csr_matrix, ...]
    U: tuple[sp.csr_matrix, ...]
    D: tuple[sp.csr_matrix, ...]
    entrance_column: tuple[int | None, ...]
    level_homogeneous: bool
    truncation_meta: TruncationMeta | None = None
    state_labels: tuple[tuple[State, ...], ...] | None = None

    @classmethod
    def from_blocks(
        cls,
        W: Sequence,
        U: Sequence,
        D: Sequence,
        truncation_meta: TruncationMeta | None = None,
        state_labels=None,
    ) -> LevelBlockChain:
        W = tuple(_csr(w) for w in W)
        U = tuple(_csr(u) for u in U)
        D = tuple(_csr(d) for d in D)
        _check_dimensions(W, U, D)
        entrance = tuple(_single_nonzero_column(d) for d in D)
        if state_labels is not None:
            state_labels = tuple(tuple(level) for level in state_labels)
        return cls(
            W=W,
            U=U,
            D=D,
            entrance_column=entrance,
            level_homogeneous=_interior_homogeneous(W, U, D),
            truncation_meta=truncation_meta,
            state_labels=state_labels,
        )

    @property
    def num_levels(self) -> int:
        return len(self.W)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.W)

    @property
    def stages_per_level(self) -> int | None:
        """Common level size, or ``None`` when levels differ in size."""
        sizes = set(self.level_sizes)
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def num_states(self) -> int:
        return int(sum(self.level_sizes))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.level_sizes)])

    def entrance_of_level(self, m: int) -> int | None:
        """Stage through which level ``m`` is entered from level ``m+1``."""
        if m >= self.num_levels - 1:
            return None
        return self.entrance_column[m]


def _check_dimensions(W, U, D) -> None:
    n_levels = len(W)
    if n_levels < 1:
        raise StructuralError("chain needs at least one level")
    if len(U) != n_levels - 1 or len(D) != n_levels - 1:
        raise StructuralError(
            f"expected {n_levels - 1} up and down blocks for {n_levels} levels, "
            f"got {len(U)} and {len(D)}"
        )
    sizes = []
    for m, w in enumerate(W):
        if w.shape[0] != w.shape[1]:
            raise StructuralError(f"W[{m}] is not square: shape {w.shape}")
        sizes.append(w.shape[0])
    for m, u in enumerate(U):
        if u.shape != (sizes[m], sizes[m + 1]):
            raise StructuralError(f"U[{m}] has shape {u.shape}, expected {(sizes[m], sizes[m + 1])}")
    for k, d in enumerate(D):
        m = k + 1
        if d.shape != (sizes[m], sizes[m - 1]):
            raise StructuralError(f"D[{m}] has shape {d.shape}, expected {(sizes[m], sizes[m - 1])}")


def _nonzero_columns(block: sp.csr_matrix) -> np.ndarray:
    return np.unique(block.indices[block.data != 0])


def _single_nonzero_column(block: sp.csr_matrix) -> int | None:
    cols = _nonzero_columns(block)
    return int(cols[0]) if len(cols) == 1 else None


def _interior_homogeneous(W, U, D) -> bool:
    n_levels = len(W)
    if n_levels < 3:
        return False
    same_w = all(blocks_equal(W[1], W[m]) for m in range(2, n_levels - 1))
    same_u = all(blocks_equal(U[1], U[m]) for m in range(2, n_levels - 1))
    same_d = all(blocks_equal(D[0], D[k]) for k in range(1, n_levels - 1))
    return same_w and same_u and same_d


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    kind: str
    level: int
    stage: int
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at level {self.level}, stage {self.stage}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...]

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.issues)


def validate_generator(chain: LevelBlockChain, tol: float = ROW_SUM_TOL) -> ValidationReport:
    """List every violated generator invariant with its (level, stage).

    Raises :class:`StructuralError` when block dimensions are inconsistent.
    """
    _check_dimensions(chain.W, chain.U, chain.D)
    issues: list[Issue] = []
    n_levels = chain.num_levels
    for m in range(n_levels):
        w = chain.W[m]
        row_sum = np.asarray(w.sum(axis=1)).ravel()
        if m < n_levels - 1:
            row_sum += np.asarray(chain.U[m].sum(axis=1)).ravel()
        if m > 0:
            row_sum += np.asarray(chain.D[m - 1].sum(axis=1)).ravel()
        for i in np.flatnonzero(np.abs(row_sum) > tol):
            issues.append(Issue("row_sum", m, int(i), f"row sums to {row_sum[i]:.3e}"))

        coo = w.tocoo()
        off = coo.row != coo.col
        for i, j, v in zip(coo.row[off], coo.col[off], coo.data[off]):
            if v < 0:
                issues.append(Issue("negative_rate", m, int(i), f"W[{m}][{i},{j}] = {v}"))
        diag = w.diagonal()
        for i in np.flatnonzero(diag > 0):
            issues.append(Issue("positive_diagonal", m, int(i), f"W[{m}][{i},{i}] = {diag[i]}"))
        for name, block in (("U", chain.U[m] if m < n_levels - 1 else None), ("D", chain.D[m - 1] if m > 0 else None)):
            if block is None:
                continue
            coo = block.tocoo()
            for i, j, v in zip(coo.row, coo.col, coo.data):
                if v < 0:
                    issues.append(Issue("negative_rate", m, int(i), f"{name}[{m}][{i},{j}] = {v}"))
    return ValidationReport(tuple(issues))


@dataclass(frozen=True)
class DesReport:
    """Entrance stage per level; ``entrance[m]`` is where D_{m+1} enters level m."""

    entrance: tuple[int | None, ...]
    violations: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_des_columns(chain: LevelBlockChain) -> DesReport:
    """Report the entrance column of every level, flagging multi-column down blocks.

    ``violations`` lists the levels ``m`` whose block ``D_m`` has two or more
    nonzero columns.
    """
    entrance = []
    violations = []
    for k, d in enumerate(chain.D):
        cols = _nonzero_columns(d)
        if len(cols) > 1:
            violations.append(k + 1)
            entrance.append(None)
        else:
            entrance.append(int(cols[0]) if len(cols) else None)
    return DesReport(tuple(entrance), tuple(violations))


def require_des(chain: LevelBlockChain) -> DesReport:
    report = check_des_columns(chain)
    if report.violations:
        raise DESViolationError(report.violations)
    return report


# ---------------------------------------------------------------------------
# permutations
# ---------------------------------------------------------------------------


def permute_levels(chain: LevelBlockChain, perms: Sequence[Sequence[int]]) -> LevelBlockChain:
    """Relabel stages within each level.

    ``perms[m][k]`` is the old stage index placed at new position ``k``.
    """
    perms = [np.asarray(p, dtype=int) for p in perms]
    if len(perms) != chain.num_levels:
        raise StructuralError("need one permutation per level")
    W = [chain.W[m][perms[m]][:, perms[m]] for m in range(chain.num_levels)]
    U = [chain.U[m][perms[m]][:, perms[m + 1]] for m in range(chain.num_levels - 1)]
    D = [chain.D[k][perms[k + 1]][:, perms[k]] for k in range(chain.num_levels - 1)]
    meta = chain.truncation_meta
    if meta is not None:
        meta = TruncationMeta(
            meta.level_cap,
            meta.stage_cap,
            meta.level_extent,
            meta.stage_extent,
            tuple(meta.removed_outflow[m][perms[m]] for m in range(chain.num_levels)),
        )
    labels = None
    if chain.state_labels is not None:
        labels = [[chain.state_labels[m][i] for i in perms[m]] for m in range(chain.num_levels)]
    return LevelBlockChain.from_blocks(W, U, D, meta, labels)


def flat_permutation(perms: Sequence[Sequence[int]], sizes: Sequence[int]) -> np.ndarray:
    """Flattened index map matching :func:`permute_levels`: new[i] = old[p[i]]."""
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return np.concatenate([offsets[m] + np.asarray(p, dtype=int) for m, p in enumerate(perms)])


def entrance_first_permutations(chain: LevelBlockChain) -> list[np.ndarray]:
    report = require_des(chain)
    perms = []
    for m, size in enumerate(chain.level_sizes):
        e = report.entrance[m] if m < len(report.entrance) else None
        order = np.arange(size)
        if e:
            order = np.concatenate([[e], np.arange(e), np.arange(e + 1, size)])
        perms.append(order)
    return perms


def relabel_entrance_first(chain: LevelBlockChain) -> LevelBlockChain:
    """Move each level's entrance stage to position 0.

    The other stages keep their relative order, so a swap results for an
    entrance at stage 1 and a cyclic shift for the last stage of a
    three-stage level.  Raises :class:`DESViolationError` when a down block
    has several nonzero columns.
    """
    return permute_levels(chain, entrance_first_permutations(chain))


# ---------------------------------------------------------------------------
# assembly and the stage view
# ---------------------------------------------------------------------------


def assemble_full_generator(chain: LevelBlockChain) -> sp.csr_matrix:
    """Level-major sparse generator built from the blocks."""
    n = chain.num_levels
    grid: list[list[Any]] = [[None] * n for _ in range(n)]
    for m in range(n):
        grid[m][m] = chain.W[m]
        if m + 1 < n:
            grid[m][m + 1] = chain.U[m]
            grid[m + 1][m] = chain.D[m]
    return sp.bmat(grid, format="csr")


def stage_major_order(num_levels: int, num_stages: int) -> np.ndarray:
    """Index map p with ``stage_vec = level_vec[p]`` for (m, i) -> (i, m)."""
    i, m = np.meshgrid(np.arange(num_stages), np.arange(num_levels), indexing="ij")
    return (m * num_stages + i).ravel()


@dataclass(frozen=True)
class StageBlockChain:
    """The chain re-partitioned by stage.

    ``blocks`` is the full chain in the transposed orientation (its "levels"
    are the original stages).  ``B1``/``B0`` are the boundary blocks of stage
    0 and ``A2``/``A1``/``A0`` the down/within/up blocks of the first
    interior stage.
    """

    blocks: LevelBlockChain
    A0: sp.csr_matrix
    A1: sp.csr_matrix
    A2: sp.csr_matrix
    B0: sp.csr_matrix
    B1: sp.csr_matrix
    num_stages: int
    num_levels: int

    def homogeneous_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior blocks with level-cap truncation undone.

        The truncated chain re-balances the diagonal of the top level; here
        the deleted outflow is restored so the blocks are the leading
        sections of the untruncated interior blocks.
        """
        A1 = self.A1.toarray()
        meta = self.blocks.truncation_meta
        if meta is not None and self.num_stages > 2:
            A1 -= np.diag(meta.removed_outflow[1])
        return self.A0.toarray(), A1, self.A2.toarray()


def transpose_to_stage_view(chain: LevelBlockChain) -> StageBlockChain:
    """Re-partition a level chain by stages, (m, i) -> (i, m).

    Requires equal level sizes, a level-homogeneous interior and nearest
    neighbour moves in the stage direction.
    """
    size = chain.stages_per_level
    if size is None:
        raise HomogeneityError(
            "levels have different sizes; the stage view needs a rectangular, "
            "element-homogeneous state space"
        )
    if chain.num_levels > 2 and not chain.level_homogeneous:
        raise HomogeneityError("interior levels are not identical; no homogeneous stage portion")
    blocks = [(f"W[{m}]", w) for m, w in enumerate(chain.W)]
    blocks += [(f"U[{m}]", u) for m, u in enumerate(chain.U)]
    blocks += [(f"D[{k + 1}]", d) for k, d in enumerate(chain.D)]
    for name, block in blocks:
        coo = block.tocoo()
        span = np.abs(coo.col - coo.row)
        if span.size and span.max() > 1:
            k = int(np.argmax(span))
            raise NotStageQBDError(
                f"{name} moves from stage {coo.row[k]} to stage {coo.col[k]}: "
                "transitions skip stages, so the chain is not a QBD in the stage direction"
            )
    n_levels = chain.num_levels
    Q = assemble_full_generator(chain)
    p = stage_major_order(n_levels, size)
    Qs = Q[p][:, p].tocsr()

    def blk(a, b):
        return Qs[a * n_levels:(a + 1) * n_levels, b * n_levels:(b + 1) * n_levels]

    W = [blk(i, i) for i in range(size)]
    U = [blk(i, i + 1) for i in range(size - 1)]
    D = [blk(i + 1, i) for i in range(size - 1)]
    meta = chain.truncation_meta
    if meta is not None:
        removed = np.concatenate(meta.removed_outflow)[p].reshape(size, n_levels)
        meta = TruncationMeta(meta.stage_cap, meta.level_cap, meta.stage_extent, meta.level_extent, tuple(removed))
    labels = None
    if chain.state_labels is not None:
        flat = [s for level in chain.state_labels for s in level]
        labels = [[flat[j] for j in p[i * n_levels:(i + 1) * n_levels]] for i in range(size)]
    stage_chain = LevelBlockChain.from_blocks(W, U, D, meta, labels)
    zero = sp.csr_matrix((n_levels, n_levels))
    if size >= 2:
        A1 = stage_chain.W[1]
        A2 = stage_chain.D[0]
        A0 = stage_chain.U[1] if size >= 3 else zero
        B0 = stage_chain.U[0]
    else:
        A1 = stage_chain.W[0]
        A0 = A2 = B0 = zero
    return StageBlockChain(
        blocks=stage_chain,
        A0=_csr(A0),
        A1=_csr(A1),
        A2=_csr(A2),
        B0=_csr(B0),
        B1=stage_chain.W[0],
        num_stages=size,
        num_levels=n_levels,
    )


# ---------------------------------------------------------------------------
# truncation of infinite chains
# ---------------------------------------------------------------------------


def grid_levels(num_levels: int, num_stages: int) -> list[list[State]]:
    return [[(n, j) for j in range(num_stages)] for n in range(num_levels)]


@dataclass(frozen=True)
class UnboundedChain:
    """Rule-based description of a possibly infinite QBD.

    ``rates(state)`` yields ``(target, rate)`` pairs.  ``level_sets(L, S)``
    returns the ordered level partition of the retained states for effective
    caps ``L`` (levels) and ``S`` (stages); by default the rectangular grid
    ``{(n, j): n < L, j < S}``.  An extent of ``None`` marks an infinite
    dimension.
    """

    rates: Callable[[State], Iterable[tuple[State, float]]]
    level_extent: int | None = None
    stage_extent: int | None = None
    level_sets: Callable[[int, int], list[list[State]]] = field(default=grid_levels)
    name: str = "chain"


def _effective_cap(cap: int | None, extent: int | None, what: str) -> int:
    if extent is not None and (cap is None or cap >= extent):
        return extent
    if cap is None:
        raise InputError(f"{what} dimension is infinite; a cap is required")
    if cap < 2:
        raise InputError(f"{what} cap must be at least 2, got {cap}")
    return int(cap)


def truncate_chain(spec: UnboundedChain, level_cap: int | None, stage_cap: int | None) -> LevelBlockChain:
    """Cut an unbounded chain to a finite box with reflecting boundaries.

    Transitions leaving the box are deleted and the diagonal re-balanced so
    every row still sums to zero.  Caps only apply to infinite (or larger)
    dimensions and must then be at least 2.
    """
    n_levels = _effective_cap(level_cap, spec.level_extent, "level")
    n_stages = _effective_cap(stage_cap, spec.stage_extent, "stage")
    levels = [lvl for lvl in spec.level_sets(n_levels, n_stages) if lvl]
    index = {}
    for m, lvl in enumerate(levels):
        for k, s in enumerate(lvl):
            index[s] = (m, k)
    sizes = [len(lvl) for lvl in levels]
    entries: dict[tuple[str, int], tuple[list, list, list]] = {}
    removed = [np.zeros(n) for n in sizes]
    out_rate = [np.zeros(n) for n in sizes]

    def put(kind, m, i, j, v):
        rows, cols, vals = entries.setdefault((kind, m), ([], [], []))
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for m, lvl in enumerate(levels):
        for k, s in enumerate(lvl):
            for target, rate in spec.rates(s):
                if rate == 0 or target == s:
                    continue
                if rate < 0:
                    raise InputError(f"negative rate {rate} from {s} to {target}")
                if target not in index:
                    removed[m][k] += rate
                    continue
                m2, k2 = index[target]
                if m2 == m:
                    put("W", m, k, k2, rate)
                elif m2 == m + 1:
                    put("U", m, k, k2, rate)
                elif m2 == m - 1:
                    put("D", m, k, k2, rate)
                else:
                    raise StructuralError(
                        f"transition {s} -> {target} jumps from level {m} to {m2}; not a level QBD"
                    )
                out_rate[m][k] += rate

    def build(kind, m, shape):
        rows, cols, vals = entries.get((kind, m), ([], [], []))
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()

    W = []
    for m, n in enumerate(sizes):
        w = build("W", m, (n, n)) - sp.diags(out_rate[m])
        W.append(w)
    U = [build("U", m, (sizes[m], sizes[m + 1])) for m in range(len(sizes) - 1)]
    D = [build("D", m, (sizes[m], sizes[m - 1])) for m in range(1, len(sizes))]
    meta = TruncationMeta(n_levels, n_stages, spec.level_extent, spec.stage_extent, tuple(removed))
    return LevelBlockChain.from_blocks(W, U, D, meta, levels)


# ---------------------------------------------------------------------------
# stationary distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    """Per-level stationary vectors plus accuracy metadata."""

    level_vectors: tuple[np.ndarray, ...]
    residual_inf: float
    truncation_mass: float
    info: dict = field(default_factory=dict)

    def to_array(self) -> np.ndarray:
        return np.concatenate(self.level_vectors)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.level_vectors)

    def level_marginal(self) -> np.ndarray:
        return np.array([v.sum() for v in self.level_vectors])


def split_levels(flat: np.ndarray, sizes: Sequence[int]) -> tuple[np.ndarray, ...]:
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return tuple(flat[offsets[m]:offsets[m + 1]].copy() for m in range(len(sizes)))


def generator_residual(pi: np.ndarray, Q: sp.spmatrix) -> float:
    return float(np.max(np.abs(Q.T @ pi))) if pi.size else 0.0


def make_steady_state(
    flat: np.ndarray, chain: LevelBlockChain, info: dict | None = None, Q: sp.spmatrix | None = None
) -> SteadyState:
    if Q is None:
        Q = assemble_full_generator(chain)
    vectors = split_levels(flat, chain.level_sizes)
    return SteadyState(
        level_vectors=vectors,
        residual_inf=generator_residual(flat, Q),
        truncation_mass=float(vectors[-1].sum()),
        info=dict(info or {}),
    )
