"""Combining per-subspace classifier scores into one prediction.

A stack holds one score matrix per subspace, each covering all classes seen
so far. The adaptive rule averages, for every task's class block, only the
subspaces that already existed when that task arrived (k <= t); the simple
rule averages all subspaces everywhere; the no-ensemble rule trusts the
first subspace alone. A misaligned baseline concatenates per-task heads
that were never fine-tuned against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoreStack",
    "aee_predict",
    "simple_ensemble_predict",
    "no_ensemble_predict",
    "misaligned_predict",
]


@dataclass
class ScoreStack:
    """Per-subspace score matrices plus the class ranges of each task.

    ``scores[k][i, c]`` scores sample i for class c under subspace k's
    classifier. All matrices share one shape; ``task_ranges`` partitions
    the class axis contiguously.
    """

    scores: list[np.ndarray]
    task_ranges: list[tuple[int, int]]

    def __post_init__(self) -> None:
        if not self.scores:
            raise ValueError("need at least one score matrix")
        self.scores = [np.asarray(s, dtype=np.float64) for s in self.scores]
        shape = self.scores[0].shape
        for s in self.scores:
            if s.shape != shape or s.ndim != 2:
                raise ValueError("score matrices must share one (n, C) shape")
        pos = 0
        for s, e in self.task_ranges:
            if s != pos or e <= s:
                raise ValueError("task ranges must partition the class axis contiguously")
            pos = e
        if pos != shape[1]:
            raise ValueError(
                f"task ranges cover {pos} classes but scores have {shape[1]}"
            )

    @property
    def n_subspaces(self) -> int:
        return len(self.scores)

    @property
    def n_tasks(self) -> int:
        return len(self.task_ranges)


def _fuse_adaptive(stack: ScoreStack, max_subspaces: int | None) -> np.ndarray:
    limit = stack.n_subspaces if max_subspaces is None else int(max_subspaces)
    if not 1 <= limit <= stack.n_subspaces:
        raise ValueError(f"max_subspaces must be in 1..{stack.n_subspaces}")
    fused = np.empty_like(stack.scores[0])
    for t, (s, e) in enumerate(stack.task_ranges):
        use = min(t + 1, limit)  # subspaces trained no later than task t
        block = stack.scores[0][:, s:e].copy()
        for k in range(1, use):
            block += stack.scores[k][:, s:e]
        fused[:, s:e] = block / use
    return fused


def aee_predict(
    stack: ScoreStack, max_subspaces: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive fusion: task t's class block averages subspaces k <= t.

    ``max_subspaces`` caps the pool at its first m subspaces (m = 1 reduces
    to the first-subspace rule). Returns (fused scores, argmax labels);
    ties resolve to the lowest class index.
    """
    if stack.n_subspaces < stack.n_tasks and max_subspaces is None:
        raise ValueError(
            f"{stack.n_tasks} tasks need {stack.n_tasks} subspaces, "
            f"stack has {stack.n_subspaces}"
        )
    fused = _fuse_adaptive(stack, max_subspaces)
    return fused, np.argmax(fused, axis=1)


def simple_ensemble_predict(stack: ScoreStack) -> tuple[np.ndarray, np.ndarray]:
    """Uniform fusion: every class block averages all subspaces."""
    fused = np.mean(stack.scores, axis=0)
    return fused, np.argmax(fused, axis=1)


def no_ensemble_predict(stack: ScoreStack) -> tuple[np.ndarray, np.ndarray]:
    """First-subspace rule: scores of subspace 0 decide everything."""
    fused = stack.scores[0].copy()
    return fused, np.argmax(fused, axis=1)


def misaligned_predict(
    heads: list[tuple[np.ndarray, np.ndarray]],
    feats_per_subspace: list[np.ndarray],
    task_ranges: list[tuple[int, int]],
) -> np.ndarray:
    """Concatenate per-task heads that never saw each other's classes.

    Head t scores only its own class block from subspace-t features; the
    blocks are stitched into one logit matrix and argmaxed. Scale mismatch
    between independently trained heads is exactly what this baseline is
    meant to exhibit.
    """
    if not len(heads) == len(feats_per_subspace) == len(task_ranges):
        raise ValueError("need one head, one feature matrix, one range per task")
    n = feats_per_subspace[0].shape[0]
    n_classes = task_ranges[-1][1]
    logits = np.empty((n, n_classes))
    for (w, b), feats, (s, e) in zip(heads, feats_per_subspace, task_ranges):
        if w.shape[0] != e - s:
            raise ValueError("head size does not match its task's class range")
        logits[:, s:e] = feats @ w.T + b
    return np.argmax(logits, axis=1)
