import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qbdsolve.core import (
    LevelBlockChain,
    UnboundedChain,
    assemble_full_generator,
    check_des_columns,
    flat_permutation,
    permute_levels,
    relabel_entrance_first,
    stage_major_order,
    transpose_to_stage_view,
    truncate_chain,
    validate_generator,
)
from qbdsolve.errors import DESViolationError, HomogeneityError, InputError, NotStageQBDError, StructuralError
from qbdsolve.models import ModelSpec, build_longest, build_priority, priority_rules


def two_level_chain():
    W0 = [[-1.0, 1.0], [0.5, -1.5]]
    U0 = [[0.0, 0.0], [1.0, 0.0]]
    D1 = [[2.0, 0.0], [2.0, 0.0]]
    W1 = [[-2.0, 0.0], [0.0, -2.0]]
    return LevelBlockChain.from_blocks([W0, W1], [U0], [D1])


def test_from_blocks_records_entrance_and_sizes():
    chain = two_level_chain()
    assert chain.level_sizes == (2, 2)
    assert chain.entrance_column == (0,)
    assert chain.entrance_of_level(0) == 0
    assert chain.entrance_of_level(1) is None
    assert validate_generator(chain).ok


def test_dimension_mismatch_is_structural_error():
    with pytest.raises(StructuralError):
        LevelBlockChain.from_blocks([np.zeros((2, 2)), np.zeros((3, 3))], [np.zeros((2, 2))], [np.zeros((3, 2))])
    with pytest.raises(StructuralError):
        LevelBlockChain.from_blocks([np.zeros((2, 2)), np.zeros((2, 2))], [], [])


def test_validate_generator_reports_location():
    W0 = [[-1.0, 0.5], [0.5, -0.5]]
    chain = LevelBlockChain.from_blocks([W0, [[-1.0]]], [[[0.5], [0.0]]], [[[1.0, 0.0]]])
    assert validate_generator(chain).ok
    # level 1 loses mass: its only row sums to -0.5
    leaky = LevelBlockChain.from_blocks([W0, [[-1.5]]], [[[0.5], [0.0]]], [[[1.0, 0.0]]])
    (issue,) = validate_generator(leaky).issues
    assert (issue.kind, issue.level, issue.stage) == ("row_sum", 1, 0)


def test_negative_rate_reported():
    chain = LevelBlockChain.from_blocks([[[-1.0, -0.5], [0.5, -0.5]]], [], [])
    issues = validate_generator(chain).issues
    assert any(i.kind == "negative_rate" and i.level == 0 and i.stage == 0 for i in issues)


def test_des_detection():
    chain = two_level_chain()
    assert check_des_columns(chain).ok
    W = [[[-1.0, 0.5], [0.5, -1.0]], [[-2.0, 0.0], [0.0, -2.0]]]
    U = [[[0.5, 0.0], [0.0, 0.5]]]
    D = [[[2.0, 0.0], [0.0, 2.0]]]
    report = check_des_columns(LevelBlockChain.from_blocks(W, U, D))
    assert report.violations == (1,)
    with pytest.raises(DESViolationError):
        relabel_entrance_first(LevelBlockChain.from_blocks(W, U, D))


def test_relabel_entrance_first_preserves_generator():
    spec = ModelSpec("LongestQueue", {"lambda": 1.0, "mu": 3.0}, 6, 5)
    chain = build_longest(spec)
    assert set(chain.entrance_column) == {1}
    moved = relabel_entrance_first(chain)
    assert set(moved.entrance_column) == {0}
    assert validate_generator(moved).ok
    # the top level is never entered from above and keeps its order
    perms = [[1, 0, 2, 3, 4]] * (chain.num_levels - 1) + [[0, 1, 2, 3, 4]]
    p = flat_permutation(perms, chain.level_sizes)
    Q = assemble_full_generator(chain).toarray()
    Qm = assemble_full_generator(moved).toarray()
    np.testing.assert_array_equal(Qm, Q[np.ix_(p, p)])


@given(seed=st.integers(0, 10_000), levels=st.integers(2, 6), size=st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_permute_levels_is_similarity(seed, levels, size):
    chain = build_priority(ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, max(levels, 2), max(size, 2)))
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n) for n in chain.level_sizes]
    moved = permute_levels(chain, perms)
    p = flat_permutation(perms, chain.level_sizes)
    Q = assemble_full_generator(chain).toarray()
    np.testing.assert_array_equal(assemble_full_generator(moved).toarray(), Q[np.ix_(p, p)])


@given(
    l1=st.floats(0.01, 2), l2=st.floats(0.01, 2), mu=st.floats(0.01, 5),
    levels=st.integers(2, 8), stages=st.integers(2, 8),
)
@settings(max_examples=40, deadline=None)
def test_truncated_chain_is_generator(l1, l2, mu, levels, stages):
    chain = truncate_chain(priority_rules(l1, l2, mu), levels, stages)
    Q = assemble_full_generator(chain)
    np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    assert validate_generator(chain).ok
    assert chain.num_states == levels * stages


def test_caps_must_be_at_least_two_for_infinite_dimensions():
    with pytest.raises(InputError):
        truncate_chain(priority_rules(0.2, 0.3, 1.0), 1, 5)
    with pytest.raises(InputError):
        truncate_chain(priority_rules(0.2, 0.3, 1.0), None, 5)


def test_finite_extent_allows_single_stage():
    def rates(s):
        n, _ = s
        yield (n + 1, 0), 1.0
        if n > 0:
            yield (n - 1, 0), 2.0

    chain = truncate_chain(UnboundedChain(rates, stage_extent=1), 10, None)
    assert chain.level_sizes == (1,) * 10
    assert chain.truncation_meta.levels_truncated
    assert not chain.truncation_meta.stages_truncated


def test_level_jump_rejected():
    def rates(s):
        n, j = s
        yield (n + 2, j), 1.0

    with pytest.raises(StructuralError):
        truncate_chain(UnboundedChain(rates), 5, 3)


def test_stage_major_order_is_transpose():
    p = stage_major_order(3, 4)
    level_vec = np.arange(12)
    np.testing.assert_array_equal(level_vec[p].reshape(4, 3), level_vec.reshape(3, 4).T)


def test_stage_view_blocks_of_priority_queue():
    spec = ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, 6, 5)
    stage = transpose_to_stage_view(build_priority(spec))
    A0, A1, A2 = stage.homogeneous_blocks()
    np.testing.assert_allclose(A0, 0.2 * np.eye(6))
    np.testing.assert_allclose(A2, 1.0 * np.eye(6))
    expected = -1.5 * np.eye(6) + 0.3 * np.eye(6, k=1)
    np.testing.assert_allclose(A1, expected)
    labels = stage.blocks.state_labels
    assert labels[2][3] == (3, 2)


def test_stage_view_rejects_stage_skips():
    spec = ModelSpec("BatchPriority", {"lambda1": 0.2, "lambda2": 0.2, "mu": 1.0}, 6, 6, {1: 0.5, 2: 0.5})
    from qbdsolve.models import build_batch_priority

    with pytest.raises(NotStageQBDError):
        transpose_to_stage_view(build_batch_priority(spec))


def test_stage_view_rejects_ragged_levels():
    from qbdsolve.models import build_longest_hetero

    spec = ModelSpec("LongestQueueHetero", {"lambda1": 0.3, "lambda2": 0.5, "mu": 1.0}, 6, 6)
    with pytest.raises(HomogeneityError):
        transpose_to_stage_view(build_longest_hetero(spec))


def test_blocks_are_csr_and_canonical():
    chain = two_level_chain()
    for block in chain.W + chain.U + chain.D:
        assert sp.isspmatrix_csr(block)
        assert block.has_canonical_format
