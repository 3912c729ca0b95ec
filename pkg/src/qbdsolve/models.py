"""Queueing model zoo: priority, longest queue, batch priority and the
longest queue with unequal arrival rates.

Every builder returns a truncated :class:`LevelBlockChain`.  Caps count the
number of retained values of each coordinate: ``level_cap = 60`` keeps
levels 0..59.
"""
from __future__ import annotations

import json
import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import LevelBlockChain, UnboundedChain, truncate_chain
from .errors import InputError

FAMILIES = ("Priority", "LongestQueue", "BatchPriority", "LongestQueueHetero")
_ALIASES = {
    "priority": "Priority",
    "longestqueue": "LongestQueue",
    "longest": "LongestQueue",
    "longest_queue": "LongestQueue",
    "batchpriority": "BatchPriority",
    "batch": "BatchPriority",
    "batch_priority": "BatchPriority",
    "longestqueuehetero": "LongestQueueHetero",
    "hetero": "LongestQueueHetero",
    "longest_queue_hetero": "LongestQueueHetero",
}
_NON_GOALS = {"feedback", "feedbackqueue", "feedback_queue"}
REQUIRED_PARAMS = {
    "Priority": ("lambda1", "lambda2", "mu"),
    "LongestQueue": ("lambda", "mu"),
    "BatchPriority": ("lambda1", "lambda2", "mu"),
    "LongestQueueHetero": ("lambda1", "lambda2", "mu"),
}
_PARAM_ALIASES = {"λ1": "lambda1", "λ2": "lambda2", "λ": "lambda", "μ": "mu", "lam1": "lambda1", "lam2": "lambda2", "lam": "lambda"}
BATCH_TOL = 1e-12


class StabilityWarning(UserWarning):
    """Model parameters violate the stability condition."""


def normalize_family(name: str) -> str:
    key = str(name).strip()
    if key in FAMILIES:
        return key
    low = key.lower().replace("-", "_")
    if low in _NON_GOALS or low.replace("_", "") in _NON_GOALS:
        raise InputError(
            f"model family {name!r} (feedback queue) is not supported: it is a declared non-goal; "
            "build its blocks directly with LevelBlockChain.from_blocks"
        )
    if low in _ALIASES:
        return _ALIASES[low]
    if low.replace("_", "") in _ALIASES:
        return _ALIASES[low.replace("_", "")]
    raise InputError(f"unknown model family {name!r}; expected one of {', '.join(FAMILIES)}")


def _batch(dist, name: str) -> dict[int, float]:
    if dist is None:
        return {1: 1.0}
    out: dict[int, float] = {}
    for k, v in dict(dist).items():
        try:
            size = int(k)
        except (TypeError, ValueError):
            raise InputError(f"{name}: batch size {k!r} is not an integer") from None
        if size < 1:
            raise InputError(f"{name}: batch size {size} must be at least 1")
        p = float(v)
        if p < 0 or not math.isfinite(p):
            raise InputError(f"{name}: probability of batch size {size} is {v!r}")
        if p > 0:
            out[size] = out.get(size, 0.0) + p
    total = math.fsum(out.values())
    if abs(total - 1.0) > BATCH_TOL:
        raise InputError(f"{name}: batch probabilities sum to {total!r}, not 1")
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class ModelSpec:
    """Scalar description of one of the four queueing models."""

    family: str
    params: Mapping[str, float]
    level_cap: int | None = None
    stage_cap: int | None = None
    batch1: Mapping[int, float] | None = None
    batch2: Mapping[int, float] | None = None
    extra: Mapping = field(default_factory=dict)

    def __post_init__(self):
        family = normalize_family(self.family)
        object.__setattr__(self, "family", family)
        params = {}
        for k, v in dict(self.params).items():
            params[_PARAM_ALIASES.get(k, k)] = v
        errors = []
        for k in REQUIRED_PARAMS[family]:
            if k not in params:
                errors.append(f"params.{k}: missing")
                continue
            try:
                x = float(params[k])
            except (TypeError, ValueError):
                errors.append(f"params.{k}: {params[k]!r} is not a number")
                continue
            if not (x > 0 and math.isfinite(x)):
                errors.append(f"params.{k}: rate must be positive and finite, got {params[k]!r}")
            params[k] = x
        if errors:
            raise InputError("; ".join(errors))
        object.__setattr__(self, "params", {k: params[k] for k in REQUIRED_PARAMS[family]})
        if family == "BatchPriority":
            object.__setattr__(self, "batch1", _batch(self.batch1, "batch1"))
            object.__setattr__(self, "batch2", _batch(self.batch2, "batch2"))
        elif self.batch1 is not None or self.batch2 is not None:
            raise InputError(f"batch distributions are only meaningful for BatchPriority, not {family}")
        for name, key in (("level_cap", "levels"), ("stage_cap", "stages")):
            cap = getattr(self, name)
            if cap is not None:
                if isinstance(cap, bool) or not isinstance(cap, (int, float)) or int(cap) != cap:
                    raise InputError(f"truncation.{key}: {cap!r} is not an integer")
                if cap < 2:
                    raise InputError(f"truncation.{key}: must be at least 2, got {cap}")
                object.__setattr__(self, name, int(cap))

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelSpec:
        if not isinstance(data, Mapping):
            raise InputError("model spec must be a JSON object")
        errors = [f"{k}: missing" for k in ("family", "params") if k not in data]
        if errors:
            raise InputError("; ".join(errors))
        if not isinstance(data["params"], Mapping):
            raise InputError("params: must be an object")
        trunc = data.get("truncation", {}) or {}
        if not isinstance(trunc, Mapping):
            raise InputError("truncation: must be an object")
        known = {"family", "params", "truncation", "batch1", "batch2"}
        return cls(
            family=data["family"],
            params=data["params"],
            level_cap=trunc.get("levels"),
            stage_cap=trunc.get("stages"),
            batch1=data.get("batch1"),
            batch2=data.get("batch2"),
            extra={k: v for k, v in data.items() if k not in known},
        )

    def to_dict(self) -> dict:
        out = {"family": self.family, "params": dict(self.params)}
        if self.family == "BatchPriority":
            out["batch1"] = {str(k): v for k, v in self.batch1.items()}
            out["batch2"] = {str(k): v for k, v in self.batch2.items()}
        out["truncation"] = {"levels": self.level_cap, "stages": self.stage_cap}
        return out

    def with_caps(self, level_cap: int | None, stage_cap: int | None) -> ModelSpec:
        data = self.to_dict()
        data["truncation"] = {"levels": level_cap, "stages": stage_cap}
        return ModelSpec.from_dict(data)


def parse_model_spec(path) -> ModelSpec:
    """Read and validate a JSON model file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read model spec {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return ModelSpec.from_dict(data)


def _warn(condition: bool, message: str) -> None:
    if condition:
        warnings.warn(message, StabilityWarning, stacklevel=3)


def _mean(dist: Mapping[int, float]) -> float:
    return sum(k * p for k, p in dist.items())


def check_stability(spec: ModelSpec) -> bool:
    """True when the model's stability condition holds (warns otherwise)."""
    p = spec.params
    if spec.family == "Priority":
        ok = p["lambda1"] + p["lambda2"] < p["mu"]
        msg = "priority queue needs lambda1 + lambda2 < mu"
    elif spec.family == "BatchPriority":
        ok = p["lambda1"] * _mean(spec.batch1) + p["lambda2"] * _mean(spec.batch2) < p["mu"]
        msg = "batch priority queue needs lambda1 E[Z1] + lambda2 E[Z2] < mu"
    elif spec.family == "LongestQueue":
        ok = p["mu"] > 2 * p["lambda"]
        msg = "longest queue model needs mu > 2 lambda"
    else:
        ok = p["mu"] > p["lambda1"] + p["lambda2"]
        msg = "longest queue model needs mu > lambda1 + lambda2"
    _warn(not ok, f"{msg}; got {dict(p)}")
    return ok


# ---------------------------------------------------------------------------
# unbounded rule descriptions
# ---------------------------------------------------------------------------


def priority_rules(lambda1: float, lambda2: float, mu: float) -> UnboundedChain:
    """Preemptive priority queue.  State (n, j): n low-priority customers
    (level), j high-priority customers (stage)."""

    def rates(s):
        n, j = s
        yield (n + 1, j), lambda2
        yield (n, j + 1), lambda1
        if j > 0:
            yield (n, j - 1), mu
        elif n > 0:
            yield (n - 1, 0), mu

    return UnboundedChain(rates, name="priority")


def batch_priority_rules(lambda1, lambda2, mu, batch1, batch2) -> UnboundedChain:
    """Priority queue with batch arrivals of sizes drawn from ``batch1`` /
    ``batch2``.  Queue-2 batches larger than one jump several levels."""

    def rates(s):
        n, j = s
        for k, p in batch2.items():
            yield (n + k, j), lambda2 * p
        for k, p in batch1.items():
            yield (n, j + k), lambda1 * p
        if j > 0:
            yield (n, j - 1), mu
        elif n > 0:
            yield (n - 1, 0), mu

    return UnboundedChain(rates, name="batch-priority")


def longest_rules(lam: float, mu: float) -> UnboundedChain:
    """Two symmetric queues, server always works on the longest one.
    State (n, j): n = shorter queue length (level), j = length difference."""

    def rates(s):
        n, j = s
        if j == 0:
            yield (n, 1), 2 * lam
            if n > 0:
                yield (n - 1, 1), mu
        else:
            yield (n + 1, j - 1), lam
            yield (n, j + 1), lam
            yield (n, j - 1), mu

    return UnboundedChain(rates, name="longest-queue")


def hetero_rules(lambda1: float, lambda2: float, mu: float) -> UnboundedChain:
    """Longest queue with unequal arrival rates.  State (n, j): n = queue-2
    length, j = queue-1 length.  Ties are served half-and-half."""

    def rates(s):
        n, j = s
        yield (n + 1, j), lambda2
        yield (n, j + 1), lambda1
        if n > j:
            yield (n - 1, j), mu
        elif j > n:
            yield (n, j - 1), mu
        elif n > 0:
            yield (n - 1, j), mu / 2
            yield (n, j - 1), mu / 2

    def level_sets(n_cap: int, j_cap: int):
        # level m >= 1 is the L-shaped set {(n, m-1): n >= m} + {(m, m)} +
        # {(m-1, i): i >= m}, ordered along the L so that W is tridiagonal
        levels = [[(0, 0)]]
        m = 1
        while True:
            arm_a = [(n, m - 1) for n in range(n_cap - 1, m - 1, -1)] if m - 1 < j_cap else []
            tie = [(m, m)] if m < n_cap and m < j_cap else []
            arm_b = [(m - 1, i) for i in range(m, j_cap)] if m - 1 < n_cap else []
            level = arm_a + tie + arm_b
            if not level:
                break
            levels.append(level)
            m += 1
        return levels

    return UnboundedChain(rates, level_sets=level_sets, name="longest-queue-hetero")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _caps(spec: ModelSpec, level_cap, stage_cap):
    lc = spec.level_cap if level_cap is None else level_cap
    sc = spec.stage_cap if stage_cap is None else stage_cap
    if lc is None or sc is None:
        raise InputError("truncation caps are required: both dimensions of the model are infinite")
    return lc, sc


def _require(spec: ModelSpec, family: str) -> None:
    if spec.family != family:
        raise InputError(f"expected a {family} spec, got {spec.family}")


def build_priority(spec: ModelSpec, level_cap=None, stage_cap=None) -> LevelBlockChain:
    """Priority queue.  W tridiagonal with diagonal -(lambda1 + lambda2 + mu)
    (level 0 row 0: -(lambda1 + lambda2)); U = lambda2 I; D = mu at (0, 0)."""
    _require(spec, "Priority")
    check_stability(spec)
    p = spec.params
    return truncate_chain(priority_rules(p["lambda1"], p["lambda2"], p["mu"]), *_caps(spec, level_cap, stage_cap))


def build_longest(spec: ModelSpec, level_cap=None, stage_cap=None) -> LevelBlockChain:
    """Longest queue model; entrance stage 1 on every level."""
    _require(spec, "LongestQueue")
    check_stability(spec)
    p = spec.params
    return truncate_chain(longest_rules(p["lambda"], p["mu"]), *_caps(spec, level_cap, stage_cap))


def build_batch_priority(spec: ModelSpec, level_cap=None, stage_cap=None) -> LevelBlockChain:
    """Batch priority queue as a level QBD.

    Queue-1 batches spread over a band of W.  Queue-2 batches must have size
    one here because larger ones jump several levels; use
    :func:`batch_priority_generator` for the full model.
    """
    _require(spec, "BatchPriority")
    if set(spec.batch2) != {1}:
        raise InputError(
            "queue-2 batches larger than one jump several levels and leave the QBD frame; "
            "only batch2 = {1: 1.0} is supported for the level chain (use the direct solver "
            "on batch_priority_generator for general batch2)"
        )
    lc, sc = _caps(spec, level_cap, stage_cap)
    if max(spec.batch1) >= sc:
        raise InputError(f"batch1 support {max(spec.batch1)} does not fit in stage cap {sc}")
    check_stability(spec)
    p = spec.params
    rules = batch_priority_rules(p["lambda1"], p["lambda2"], p["mu"], spec.batch1, spec.batch2)
    return truncate_chain(rules, lc, sc)


def batch_priority_generator(spec: ModelSpec, level_cap=None, stage_cap=None) -> sp.csr_matrix:
    """Full truncated generator of the batch priority queue with arbitrary
    batch distributions (level-major order, ``stage_cap`` stages per level).
    Arrivals that would leave the box are dropped."""
    _require(spec, "BatchPriority")
    lc, sc = _caps(spec, level_cap, stage_cap)
    if max(spec.batch1) >= sc or max(spec.batch2) >= lc:
        raise InputError("batch support does not fit inside the truncation caps")
    check_stability(spec)
    p = spec.params
    rules = batch_priority_rules(p["lambda1"], p["lambda2"], p["mu"], spec.batch1, spec.batch2)
    n_states = lc * sc
    rows, cols, vals = [], [], []
    for n in range(lc):
        for j in range(sc):
            i = n * sc + j
            for (n2, j2), rate in rules.rates((n, j)):
                if n2 < lc and j2 < sc and rate > 0:
                    rows.append(i)
                    cols.append(n2 * sc + j2)
                    vals.append(rate)
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n_states, n_states)).tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def build_longest_hetero(spec: ModelSpec, level_cap=None, stage_cap=None) -> LevelBlockChain:
    """Longest queue with unequal arrival rates on L-shaped levels.

    ``level_cap`` bounds the queue-2 length, ``stage_cap`` the queue-1
    length.  Level sizes vary, and the entrance state of each level is the
    tie (m, m) in the middle of the L.
    """
    _require(spec, "LongestQueueHetero")
    check_stability(spec)
    p = spec.params
    lc, sc = _caps(spec, level_cap, stage_cap)
    return truncate_chain(hetero_rules(p["lambda1"], p["lambda2"], p["mu"]), lc, sc)


BUILDERS = {
    "Priority": build_priority,
    "LongestQueue": build_longest,
    "BatchPriority": build_batch_priority,
    "LongestQueueHetero": build_longest_hetero,
}


def build_chain(spec: ModelSpec, level_cap=None, stage_cap=None) -> LevelBlockChain:
    return BUILDERS[spec.family](spec, level_cap, stage_cap)


def build_generator(spec: ModelSpec, level_cap=None, stage_cap=None):
    """Full generator and per-state labels for the direct solver.

    Returns ``(Q, labels, chain)``; ``chain`` is ``None`` when the model does
    not fit a level QBD (batch model with queue-2 batches).
    """
    from .core import assemble_full_generator

    if spec.family == "BatchPriority" and set(spec.batch2) != {1}:
        lc, sc = _caps(spec, level_cap, stage_cap)
        Q = batch_priority_generator(spec, lc, sc)
        labels = [(n, j) for n in range(lc) for j in range(sc)]
        return Q, labels, None
    chain = build_chain(spec, level_cap, stage_cap)
    labels = [s for level in chain.state_labels for s in level]
    return assemble_full_generator(chain), labels, chain
