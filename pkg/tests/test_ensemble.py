"""Score fusion rules: adaptive, simple, first-subspace, and misaligned."""

import numpy as np
import pytest

from clens.ensemble import (
    ScoreStack,
    aee_predict,
    misaligned_predict,
    no_ensemble_predict,
    simple_ensemble_predict,
)
from clens.numeric import rng_stream


def two_task_stack(z0, z1):
    return ScoreStack([np.array(z0), np.array(z1)], [(0, 2), (2, 4)])


def test_stack_validation():
    with pytest.raises(ValueError):
        ScoreStack([np.zeros((2, 4)), np.zeros((3, 4))], [(0, 2), (2, 4)])
    with pytest.raises(ValueError):
        ScoreStack([np.zeros((2, 4))], [(0, 2), (2, 5)])
    with pytest.raises(ValueError):
        ScoreStack([np.zeros((2, 4))], [(0, 2), (3, 4)])


def test_adaptive_mean_worked_example():
    # second task's block averages both subspaces: ([0.2,0.8]+[0.6,0.4])/2
    stack = two_task_stack([[0.0, 0.0, 0.2, 0.8]], [[9.0, 9.0, 0.6, 0.4]])
    fused, _ = aee_predict(stack)
    expected = (np.array([0.2, 0.8]) + np.array([0.6, 0.4])) / 2.0
    assert np.array_equal(fused[0, 2:4], expected)
    assert np.allclose(fused[0, 2:4], [0.4, 0.6])


def test_adaptive_first_block_uses_first_subspace_only():
    stack = two_task_stack([[0.7, 0.3, 0.0, 0.0]], [[0.1, 0.9, 0.0, 0.0]])
    fused, _ = aee_predict(stack)
    assert np.array_equal(fused[0, 0:2], np.array([0.7, 0.3]))


def test_adaptive_invariant_to_late_subspace_scores_on_early_blocks():
    # scores of subspace k > t on task t's block must never matter
    rng = rng_stream(0, "inv")
    base = two_task_stack(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    fused_a, pred_a = aee_predict(base)
    perturbed = ScoreStack(
        [base.scores[0], base.scores[1].copy()], list(base.task_ranges)
    )
    perturbed.scores[1][:, 0:2] += 100.0 * rng.normal(size=(3, 2))
    fused_b, pred_b = aee_predict(perturbed)
    assert np.array_equal(fused_a, fused_b)
    assert np.array_equal(pred_a, pred_b)


def test_single_task_all_rules_coincide():
    rng = rng_stream(1, "t1")
    stack = ScoreStack([rng.normal(size=(4, 3))], [(0, 3)])
    fa, pa = aee_predict(stack)
    fs, ps = simple_ensemble_predict(stack)
    fn, pn = no_ensemble_predict(stack)
    assert np.array_equal(fa, fs) and np.array_equal(fs, fn)
    assert np.array_equal(pa, ps) and np.array_equal(ps, pn)


def test_adaptive_vs_simple_disagree_when_late_scores_mislead():
    # late subspace is confidently wrong about an early class: simple
    # averaging follows it, adaptive fusion ignores it
    stack = two_task_stack(
        [[0.7, 0.1, 0.1, 0.1]],
        [[0.0, 0.9, 0.05, 0.05]],
    )
    _, pred_adaptive = aee_predict(stack)
    _, pred_simple = simple_ensemble_predict(stack)
    assert pred_adaptive[0] == 0
    assert pred_simple[0] == 1


def test_no_ensemble_reads_first_subspace():
    stack = two_task_stack([[0.1, 0.2, 0.3, 0.4]], [[9.0, 9.0, 9.0, 9.0]])
    fused, pred = no_ensemble_predict(stack)
    assert np.array_equal(fused, stack.scores[0])
    assert pred[0] == 3


def test_ties_resolve_to_lowest_class_index():
    stack = ScoreStack([np.array([[0.5, 0.5, 0.5]])], [(0, 3)])
    for rule in (aee_predict, simple_ensemble_predict, no_ensemble_predict):
        _, pred = rule(stack)
        assert pred[0] == 0


def test_max_subspaces_caps_the_pool():
    rng = rng_stream(2, "cap")
    scores = [rng.normal(size=(5, 6)) for _ in range(3)]
    stack = ScoreStack(scores, [(0, 2), (2, 4), (4, 6)])
    fused_full, _ = aee_predict(stack)
    fused_one, pred_one = aee_predict(stack, max_subspaces=1)
    _, pred_noe = no_ensemble_predict(stack)
    assert np.array_equal(pred_one, pred_noe)
    assert np.array_equal(fused_one, scores[0])
    with pytest.raises(ValueError):
        aee_predict(stack, max_subspaces=4)
    with pytest.raises(ValueError):
        aee_predict(stack, max_subspaces=0)
    # middle setting averages exactly the first two subspaces on late blocks
    fused_two, _ = aee_predict(stack, max_subspaces=2)
    expect = (scores[0][:, 4:6] + scores[1][:, 4:6]) / 2.0
    assert np.array_equal(fused_two[:, 4:6], expect)


def test_aee_requires_enough_subspaces():
    with pytest.raises(ValueError):
        aee_predict(ScoreStack([np.zeros((2, 4))], [(0, 2), (2, 4)]))


def test_misaligned_concatenates_per_task_heads():
    w0 = np.array([[1.0, 0.0], [0.0, 1.0]])
    w1 = np.array([[2.0, 0.0], [0.0, 2.0]])
    heads = [(w0, np.zeros(2)), (w1, np.zeros(2))]
    feats = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    pred = misaligned_predict(heads, feats, [(0, 2), (2, 4)])
    # head 1's doubled scale dominates the concatenation
    assert pred[0] == 3


def test_misaligned_validates_shapes():
    heads = [(np.zeros((3, 2)), np.zeros(3))]
    with pytest.raises(ValueError):
        misaligned_predict(heads, [np.zeros((1, 2))], [(0, 2)])
    with pytest.raises(ValueError):
        misaligned_predict(heads, [np.zeros((1, 2)), np.zeros((1, 2))], [(0, 3)])
