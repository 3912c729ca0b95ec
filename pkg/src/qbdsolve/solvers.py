"""Method dispatch: solve a model or raw chain with a named algorithm."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LevelBlockChain,
    SteadyState,
    assemble_full_generator,
    check_des_columns,
    split_levels,
    transpose_to_stage_view,
)
from .errors import ApplicabilityError, InputError, QBDError
from .lattice import compute_rhat, jump_probabilities, lpc_residual, lpc_steady_state, to_level_layout
from .lumping import QDESA, QDESA_PLUS, QDESA_PLUS_PLUS, classify_variant, solve_qdesa
from .models import ModelSpec, build_generator
from .oracle import ComparisonReport, compare_distributions, direct_steady_state

METHODS = ("qdesa", "qdesa+", "qdesa++", "lpca", "direct", "auto")
AUTO_ORDER = ("qdesa++", "qdesa+", "qdesa", "lpca", "direct")
_VARIANT_OF = {"qdesa": QDESA, "qdesa+": QDESA_PLUS, "qdesa++": QDESA_PLUS_PLUS}


@dataclass
class Problem:
    """A chain to solve: its level blocks (if it is a level QBD), the full
    generator and a label per state in level-major order."""

    chain: LevelBlockChain | None
    generator: object
    labels: list
    spec: ModelSpec | None = None
    build_seconds: float = 0.0

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> Problem:
        t0 = time.perf_counter()
        Q, labels, chain = build_generator(spec)
        return cls(chain, Q, labels, spec, time.perf_counter() - t0)

    @classmethod
    def from_chain(cls, chain: LevelBlockChain) -> Problem:
        t0 = time.perf_counter()
        Q = assemble_full_generator(chain)
        if chain.state_labels is not None:
            labels = [s for level in chain.state_labels for s in level]
        else:
            labels = [(m, k) for m, n in enumerate(chain.level_sizes) for k in range(n)]
        return cls(chain, Q, labels, None, time.perf_counter() - t0)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        if self.chain is not None:
            return self.chain.level_sizes
        return (len(self.labels),)


@dataclass
class SolveResult:
    method_requested: str
    method_used: str
    state: SteadyState
    labels: list
    seconds: float
    residuals: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def distribution(self) -> np.ndarray:
        return self.state.to_array()


def _need_chain(problem: Problem, method: str) -> LevelBlockChain:
    if problem.chain is None:
        raise ApplicabilityError(
            f"{method} needs a level QBD; this model has transitions that jump several levels "
            "(only the direct solver applies)"
        )
    return problem.chain


def _solve_lpca(chain: LevelBlockChain) -> tuple[SteadyState, dict]:
    stage = transpose_to_stage_view(chain)
    phi = jump_probabilities(stage)
    rhat = compute_rhat(phi, stage.num_levels)
    state_stage = lpc_steady_state(stage, rhat)
    n_levels, n_stages = chain.num_levels, chain.stages_per_level
    flat = to_level_layout(state_stage, n_levels, n_stages)
    state = SteadyState(
        split_levels(flat, chain.level_sizes),
        state_stage.residual_inf,
        float(flat[-n_stages:].sum()),
        dict(state_stage.info),
    )
    A0, A1, A2 = phi.stage_blocks(rhat.dimension)
    info = {
        "phi": {f"{k[0]},{k[1]}": v for k, v in phi.phi.items()},
        "rhat_first_row": rhat.first_row.tolist(),
        "matrix_quadratic_residual": lpc_residual(rhat, A0, A1, A2),
        "series_terms": rhat.info["series_terms"],
        "special_case": phi.special_case,
    }
    return state, info


def applicable_methods(problem: Problem) -> dict[str, str | None]:
    """Map each concrete method to ``None`` (applicable) or the reason it is not."""
    out: dict[str, str | None] = {}
    chain = problem.chain
    if chain is None:
        reason = "transitions jump several levels; not a level QBD"
        for m in ("qdesa++", "qdesa+", "qdesa", "lpca"):
            out[m] = reason
    else:
        des = check_des_columns(chain)
        if not des.ok:
            reason = f"down blocks have several nonzero columns at levels {list(des.violations)}"
            for m in ("qdesa++", "qdesa+", "qdesa"):
                out[m] = reason
        else:
            best = classify_variant(chain)
            rank = {QDESA: 0, QDESA_PLUS: 1, QDESA_PLUS_PLUS: 2}
            for m, v in _VARIANT_OF.items():
                out[m] = None if rank[v] <= rank[best] else f"B matrices do not support {v} (best: {best})"
        try:
            jump_probabilities(transpose_to_stage_view(chain))
            out["lpca"] = None
        except ApplicabilityError as exc:
            out["lpca"] = str(exc)
    out["direct"] = None
    return out


def resolve_auto(problem: Problem) -> str:
    table = applicable_methods(problem)
    for m in AUTO_ORDER:
        if table[m] is None:
            return m
    return "direct"


def solve(problem: Problem | ModelSpec | LevelBlockChain, method: str = "auto") -> SolveResult:
    """Solve with the named method and return the distribution in level-major
    layout together with residuals and timing."""
    if isinstance(problem, ModelSpec):
        problem = Problem.from_spec(problem)
    elif isinstance(problem, LevelBlockChain):
        problem = Problem.from_chain(problem)
    method = method.lower()
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    used = resolve_auto(problem) if method == "auto" else method
    t0 = time.perf_counter()
    extra: dict = {}
    if used in _VARIANT_OF:
        chain = _need_chain(problem, used)
        state = solve_qdesa(chain, _VARIANT_OF[used])
    elif used == "lpca":
        state, extra = _solve_lpca(_need_chain(problem, used))
    else:
        state = direct_steady_state(problem.generator, problem.level_sizes)
    seconds = time.perf_counter() - t0
    residuals = {"generator_residual_inf": state.residual_inf}
    for key in ("level_balance_residual", "quadratic_residual"):
        if key in state.info:
            residuals[key] = state.info[key]
    if "matrix_quadratic_residual" in extra:
        residuals["matrix_quadratic_residual"] = extra.pop("matrix_quadratic_residual")
    info = {k: v for k, v in state.info.items() if k not in residuals and k != "residual_inf"}
    info.update(extra)
    info["truncation_mass"] = state.truncation_mass
    info["build_seconds"] = problem.build_seconds
    return SolveResult(method, used, state, list(problem.labels), seconds, residuals, info)


def compare_results(a: SolveResult, b: SolveResult, tol: float | None = None) -> ComparisonReport:
    """Compare two solutions state by state, matching states by label."""
    if len(a.labels) != len(b.labels):
        raise ValueError(f"state counts differ: {len(a.labels)} vs {len(b.labels)}")
    where = {lab: k for k, lab in enumerate(b.labels)}
    try:
        perm = np.array([where[lab] for lab in a.labels])
    except KeyError as exc:
        raise ValueError(f"state {exc.args[0]} missing from the second solution") from None
    return compare_distributions(a.state, b.state, perm, tol)


def safe_solve(problem: Problem, method: str) -> SolveResult | QBDError:
    try:
        return solve(problem, method)
    except QBDError as exc:
        return exc
