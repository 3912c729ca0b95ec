"""Runtime scaling benchmarks for the structured and lattice-path solvers.

Each (algorithm, size) cell is timed ``repeats`` times after one warm-up
run and summarised by the median.  A least-squares fit of log(seconds)
against log(size) estimates the empirical complexity exponent.
"""
from __future__ import annotations

import csv
import os
import time
import warnings
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .core import UnboundedChain, transpose_to_stage_view, truncate_chain
from .errors import InputError, QBDError
from .lattice import JumpProbabilities, compute_rhat, jump_probabilities, lpc_residual
from .lumping import compute_rate_matrices, quadratic_residual
from .models import longest_rules, priority_rules

WORKERS_ENV = "QBDSOLVE_BENCH_WORKERS"
BENCH_FAMILIES = ("priority", "longest", "general")
BENCH_ALGORITHMS = ("qdesa++", "lpca")
SPREAD_WARN = 0.20
QDESA_LEVELS = 4
LPCA_STAGES = 4

# synthetic chain with all five interior directions in use; level-down
# moves happen only on stage 0, which keeps it a DES process as well
GENERAL_PHI = {(0, 1): 0.15, (0, -1): 0.35, (1, 0): 0.2, (1, 1): 0.1, (1, -1): 0.2}
GENERAL_DOWN_RATE = 3.0


class SpreadWarning(UserWarning):
    """Repeated timings of one cell differ by more than 20%."""


@dataclass(frozen=True)
class BenchRecord:
    algorithm: str
    family: str
    size: int
    seconds: float
    residual_inf: float
    repeats: int
    spread: float
    status: str = "ok"


@dataclass(frozen=True)
class SlopeSummary:
    algorithm: str
    family: str
    slope: float
    points: int
    status: str = "ok"


def general_rules(phi=GENERAL_PHI, down_rate: float = GENERAL_DOWN_RATE) -> UnboundedChain:
    """Level n, stage j.  Interior states move N, S, E, NE, SE with the
    probabilities ``phi`` at unit exit rate; stage 0 cannot move down in
    stage and instead returns one level down at ``down_rate``."""

    def rates(s):
        n, j = s
        for (e1, e2), p in phi.items():
            if p > 0 and j + e2 >= 0:
                yield (n + e1, j + e2), p
        if j == 0 and n > 0:
            yield (n - 1, 0), down_rate

    return UnboundedChain(rates, name="general")


def family_rules(family: str) -> UnboundedChain:
    if family == "priority":
        return priority_rules(0.2, 0.3, 1.0)
    if family == "longest":
        return longest_rules(1.0, 3.0)
    if family == "general":
        return general_rules()
    raise InputError(f"unknown bench family {family!r}; expected one of {', '.join(BENCH_FAMILIES)}")


def _family_phi(family: str) -> JumpProbabilities:
    chain = truncate_chain(family_rules(family), 6, LPCA_STAGES)
    return jump_probabilities(transpose_to_stage_view(chain))


def _time_qdesa(family: str, size: int):
    chain = truncate_chain(family_rules(family), QDESA_LEVELS, size)

    def run():
        return compute_rate_matrices(chain, "QDESA++")

    def residual(rates):
        # interior R against the homogeneous blocks of the truncated chain
        return quadratic_residual(rates[1], chain.U[1], chain.W[1], chain.D[1])

    return run, residual


def _time_lpca(family: str, size: int):
    phi = _family_phi(family)

    def run():
        return compute_rhat(phi, size)

    def residual(rhat):
        return lpc_residual(rhat, *phi.stage_blocks(size))

    return run, residual


_TIMERS = {"qdesa++": _time_qdesa, "lpca": _time_lpca}


def _single_thread_env() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def run_cell(algorithm: str, family: str, size: int, repeats: int) -> BenchRecord:
    """Time one (algorithm, size) cell; failures give a record marked failed."""
    try:
        run, residual = _TIMERS[algorithm](family, size)
        result = run()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            result = run()
            times.append(time.perf_counter() - t0)
        times = np.array(times)
        median = float(np.median(times))
        spread = float((times.max() - times.min()) / median) if median > 0 else 0.0
        return BenchRecord(algorithm, family, size, median, float(residual(result)), repeats, spread)
    except QBDError as exc:
        return BenchRecord(algorithm, family, size, float("nan"), float("nan"), repeats, float("nan"), f"failed: {exc}")


def _run_cell_args(args):
    _single_thread_env()
    return run_cell(*args)


def loglog_slope(sizes: Sequence[float], seconds: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(seconds, float)), 1)
    return float(slope)


def summarize(records: Sequence[BenchRecord]) -> list[SlopeSummary]:
    out = []
    keys = sorted({(r.algorithm, r.family) for r in records})
    for alg, fam in keys:
        ok = [r for r in records if r.algorithm == alg and r.family == fam and r.status == "ok" and r.seconds > 0]
        if len(ok) >= 4:
            out.append(SlopeSummary(alg, fam, loglog_slope([r.size for r in ok], [r.seconds for r in ok]), len(ok)))
        else:
            out.append(SlopeSummary(alg, fam, float("nan"), len(ok), "insufficient points"))
    return out


def check_sizes(sizes: Sequence[int]) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 4:
        raise InputError(f"need at least 4 sizes for a slope estimate, got {len(sizes)}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InputError(f"sizes must be strictly increasing: {sizes}")
    if sizes[0] < 2:
        raise InputError("sizes must be at least 2")
    return sizes


def run_bench(
    family: str,
    sizes: Sequence[int],
    repeats: int = 5,
    algorithms: Sequence[str] = BENCH_ALGORITHMS,
    workers: int | None = None,
) -> tuple[list[BenchRecord], list[SlopeSummary]]:
    """Benchmark each algorithm on each size of ``family``.

    ``workers`` (default from the ``QBDSOLVE_BENCH_WORKERS`` environment
    variable, else 1) spreads independent cells over processes; each cell
    itself runs single-threaded.
    """
    family_rules(family)
    sizes = check_sizes(sizes)
    if repeats < 3:
        raise InputError("repeats must be at least 3")
    for alg in algorithms:
        if alg not in _TIMERS:
            raise InputError(f"unknown bench algorithm {alg!r}; expected one of {', '.join(_TIMERS)}")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    cells = [(alg, family, size, repeats) for alg in algorithms for size in sizes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell_args, cells))
    else:
        records = [run_cell(*cell) for cell in cells]
    for r in records:
        if r.status == "ok" and r.spread > SPREAD_WARN:
            warnings.warn(
                f"{r.algorithm} size {r.size}: timings spread {100 * r.spread:.0f}% around the median",
                SpreadWarning,
                stacklevel=2,
            )
    return records, summarize(records)


CSV_COLUMNS = ("kind", "algorithm", "family", "size", "seconds", "residual_inf", "repeats", "spread", "slope", "status")


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if np.isnan(x) else f"{x:.17g}"
    return "" if x is None else str(x)


def write_bench_csv(path, records: Sequence[BenchRecord], slopes: Sequence[SlopeSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            d = asdict(r)
            d["kind"] = "record"
            w.writerow([_fmt(d.get(c)) for c in CSV_COLUMNS])
        for s in slopes:
            d = asdict(s)
            d.update(kind="slope", size=s.points)
            w.writerow([_fmt(d.get(c)) for c in CSV_COLUMNS])
