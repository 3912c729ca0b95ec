import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbdsolve.core import check_des_columns, transpose_to_stage_view
from qbdsolve.errors import HomogeneityError, InputError
from qbdsolve.lumping import QDESA, QDESA_PLUS, QDESA_PLUS_PLUS, build_B, classify_variant
from qbdsolve.models import (
    ModelSpec,
    StabilityWarning,
    build_chain,
    build_generator,
    check_stability,
    parse_model_spec,
)
from qbdsolve.solvers import solve

SPECS = {
    "priority": ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, 60, 60),
    "longest": ModelSpec("LongestQueue", {"lambda": 1.0, "mu": 3.0}, 60, 60),
    "batch": ModelSpec("BatchPriority", {"lambda1": 0.2, "lambda2": 0.2, "mu": 1.0}, 60, 60, {1: 0.5, 2: 0.5}, {1: 1.0}),
    "hetero": ModelSpec("LongestQueueHetero", {"lambda1": 0.3, "lambda2": 0.5, "mu": 1.0}, 60, 60),
    "batch_multi_level": ModelSpec(
        "BatchPriority", {"lambda1": 0.1, "lambda2": 0.1, "mu": 1.0}, 30, 30, {1: 0.5, 2: 0.5}, {1: 0.5, 3: 0.5}
    ),
}


def grid(result, caps):
    g = np.zeros(caps)
    for (n, j), p in zip(result.labels, result.distribution()):
        g[n, j] = p
    return g


@pytest.mark.parametrize("name", list(SPECS))
def test_matches_frozen_dense_oracle(reference, name):
    ref = reference["stationary"][name]
    g = grid(solve(SPECS[name]), tuple(ref["caps"]))
    assert abs(g[0, 0] - ref["pi00"]) < 1e-12
    np.testing.assert_allclose(g.sum(axis=1)[:10], ref["level_marginal_head"], atol=1e-12)
    np.testing.assert_allclose(g.sum(axis=0)[:10], ref["stage_marginal_head"], atol=1e-12)


def test_priority_B_first_entry():
    chain = build_chain(ModelSpec("Priority", {"lambda1": 1, "lambda2": 1, "mu": 3}, 6, 6))
    B, _ = build_B(chain.W[1], chain.U[1], 0)
    assert B[0, 0] == -4.0


def test_longest_entrance_columns():
    # priority re-enters a level at stage 0, longest queue at difference 1
    priority = build_chain(SPECS["priority"].with_caps(8, 8))
    longest = build_chain(SPECS["longest"].with_caps(8, 8))
    assert all(priority.entrance_of_level(m) == 0 for m in range(7))
    assert all(longest.entrance_of_level(m) == 1 for m in range(7))
    assert longest.entrance_of_level(7) is None
    assert check_des_columns(longest).ok


def test_classification_per_family():
    assert classify_variant(build_chain(SPECS["priority"])) == QDESA_PLUS_PLUS
    assert classify_variant(build_chain(SPECS["longest"])) == QDESA_PLUS_PLUS
    assert classify_variant(build_chain(SPECS["batch"])) == QDESA
    assert classify_variant(build_chain(SPECS["hetero"])) == QDESA_PLUS


def test_point_mass_batches_reduce_to_priority():
    p = {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}
    a = build_chain(ModelSpec("BatchPriority", p, 20, 20, {1: 1.0}, {1: 1.0}))
    b = build_chain(ModelSpec("Priority", p, 20, 20))
    for m in range(20):
        assert (a.W[m] != b.W[m]).nnz == 0
    for m in range(19):
        assert (a.U[m] != b.U[m]).nnz == 0 and (a.D[m] != b.D[m]).nnz == 0


def test_multi_level_batches_have_no_level_chain():
    Q, labels, chain = build_generator(SPECS["batch_multi_level"])
    assert chain is None
    assert Q.shape == (900, 900)
    with pytest.raises(InputError):
        build_chain(SPECS["batch_multi_level"])


def test_hetero_swap_symmetry():
    r = solve(ModelSpec("LongestQueueHetero", {"lambda1": 0.4, "lambda2": 0.4, "mu": 1.0}, 30, 30))
    g = grid(r, (30, 30))
    assert np.max(np.abs(g - g.T)) < 1e-14


def test_hetero_is_not_stage_homogeneous():
    chain = build_chain(SPECS["hetero"].with_caps(10, 10))
    with pytest.raises(HomogeneityError):
        transpose_to_stage_view(chain)


def test_hetero_levels_are_L_shaped():
    chain = build_chain(SPECS["hetero"].with_caps(6, 6))
    assert tuple(chain.state_labels[0]) == ((0, 0),)
    level2 = chain.state_labels[2]
    assert (2, 2) == level2[chain.entrance_of_level(2)]
    assert {(n, 1) for n in range(2, 6)} <= set(level2)
    assert {(1, i) for i in range(2, 6)} <= set(level2)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec("Priority", {"lambda1": 0.6, "lambda2": 0.5, "mu": 1.0}),
        ModelSpec("LongestQueue", {"lambda": 0.6, "mu": 1.0}),
        ModelSpec("LongestQueueHetero", {"lambda1": 0.6, "lambda2": 0.6, "mu": 1.0}),
    ],
)
def test_unstable_parameters_warn(spec):
    with pytest.warns(StabilityWarning):
        assert not check_stability(spec)


def test_stable_parameters_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for spec in SPECS.values():
            assert check_stability(spec)


@given(l1=st.floats(0.05, 0.4), l2=st.floats(0.05, 0.4))
@settings(max_examples=10, deadline=None)
def test_builders_are_deterministic(l1, l2):
    spec = ModelSpec("Priority", {"lambda1": l1, "lambda2": l2, "mu": 1.0}, 12, 12)
    a, b = build_chain(spec), build_chain(spec)
    for x, y in zip(a.W + a.U + a.D, b.W + b.U + b.D):
        assert np.array_equal(x.toarray(), y.toarray())


@pytest.mark.parametrize(
    "data, message",
    [
        ({"family": "Priority", "params": {"lambda1": 1, "mu": 3}}, "params.lambda2"),
        ({"family": "Nope", "params": {}}, "unknown"),
        ({"family": "Feedback", "params": {}}, "feedback"),
        ({"family": "Priority", "params": {"lambda1": -1, "lambda2": 1, "mu": 3}}, "positive"),
        (
            {"family": "BatchPriority", "params": {"lambda1": 1, "lambda2": 1, "mu": 5}, "batch1": {"1": 0.5, "2": 0.4}, "batch2": {"1": 1}},
            "batch1",
        ),
        ({"family": "Priority", "params": {"lambda1": 1, "lambda2": 1, "mu": 3}, "truncation": {"levels": 1}}, "levels"),
    ],
)
def test_invalid_specs(data, message):
    with pytest.raises(InputError, match=f"(?i){message}"):
        ModelSpec.from_dict(data)


def test_parse_and_round_trip(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(SPECS["batch"].to_dict()))
    assert parse_model_spec(path) == SPECS["batch"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputError):
        parse_model_spec(bad)


def test_variant_labels_constant():
    assert (QDESA, QDESA_PLUS, QDESA_PLUS_PLUS) == ("QDESA", "QDESA+", "QDESA++")
