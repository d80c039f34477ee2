"""Per-subspace incremental classifiers with Gaussian replay.

Each subspace owns one linear softmax classifier whose head grows as tasks
arrive. When a new task is learned, the classifier is fine-tuned on real
features of the current classes mixed with fresh samples drawn from the
stored Gaussians of every old class, which keeps the decision boundaries of
old classes aligned with the new ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .gauss import GaussStore
from .numeric import OptimState, RngStream, optimizer_step, softmax, softmax_cross_entropy

__all__ = [
    "HeadHyper",
    "ReplayPlan",
    "SubspaceClassifier",
    "fit_linear_head",
    "finetune_classifier",
    "save_classifiers",
    "load_classifiers",
]


@dataclass
class HeadHyper:
    """Classifier fine-tuning knobs (plain SGD)."""

    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 64


@dataclass
class ReplayPlan:
    """How many synthetic rows to draw per old class each epoch.

    ``per_class = 0`` means match the current task's per-class density:
    ceil(n_current / n_current_classes).
    """

    per_class: int = 0

    def resolve(self, n_current: int, n_current_classes: int) -> int:
        if self.per_class > 0:
            return self.per_class
        return ceil(n_current / n_current_classes)


@dataclass
class SubspaceClassifier:
    """Growing linear softmax classifier over one subspace's features."""

    subspace: int
    dim: int
    weight: np.ndarray = None
    bias: np.ndarray = None
    task_ranges: list[tuple[int, int]] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.weight is None:
            self.weight = np.zeros((0, self.dim))
        if self.bias is None:
            self.bias = np.zeros(0)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def expand_head(self, n_new: int) -> None:
        """Append zero-initialised rows for a new task's classes."""
        if n_new < 1:
            raise ValueError("must add at least one class")
        start = self.n_classes
        self.weight = np.vstack([self.weight, np.zeros((n_new, self.dim))])
        self.bias = np.concatenate([self.bias, np.zeros(n_new)])
        self.task_ranges.append((start, start + n_new))

    def score(self, feats: np.ndarray, raw: bool = False) -> np.ndarray:
        """Class scores for subspace features: probabilities, or logits if raw."""
        logits = feats @ self.weight.T + self.bias
        return logits if raw else softmax(logits)


def fit_linear_head(
    feats: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    hyper: HeadHyper,
    rng: RngStream,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Minibatch-SGD cross-entropy fit of a single linear head.

    Shared by classifier fine-tuning, the misaligned-head baseline, and the
    offline subspace probe. Returns (weight, bias, per-epoch mean losses).
    """
    n, d = feats.shape
    if init is None:
        w, b = np.zeros((n_classes, d)), np.zeros(n_classes)
    else:
        w, b = init[0].copy(), init[1].copy()
        if w.shape != (n_classes, d):
            raise ValueError("warm-start shape mismatch")
    state = OptimState(kind="sgd", lr=hyper.lr)
    losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            logits = feats[idx] @ w.T + b
            loss, g_logits = softmax_cross_entropy(logits, labels[idx])
            optimizer_step([w, b], [g_logits.T @ feats[idx], g_logits.sum(axis=0)], state)
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / n)
    return w, b, losses


def finetune_classifier(
    clf: SubspaceClassifier,
    feats: np.ndarray,
    labels: np.ndarray,
    store: GaussStore,
    plan: ReplayPlan,
    hyper: HeadHyper,
    rng: RngStream,
) -> None:
    """Fine-tune on real current-task features plus replayed old classes.

    The head must already cover the current classes (call ``expand_head``
    first). Replay rows are drawn fresh every epoch from the effective
    Gaussian of each previously-seen class in this classifier's subspace.
    """
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    current = np.unique(labels)
    if labels.max() >= clf.n_classes:
        raise ValueError("head does not cover the current classes; expand it first")
    old = sorted(set(range(clf.n_classes)) - set(current.tolist()))
    n_replay = plan.resolve(len(labels), len(current)) if old else 0

    state = OptimState(kind="sgd", lr=hyper.lr)
    params = [clf.weight, clf.bias]
    for _ in range(hyper.epochs):
        if old:
            drawn = [
                store.sample_class_features(clf.subspace, c, n_replay, rng) for c in old
            ]
            x = np.vstack([feats] + [f for f, _ in drawn])
            y = np.concatenate([labels] + [l for _, l in drawn])
        else:
            x, y = feats, labels
        order = rng.permutation(len(y))
        epoch_loss = 0.0
        for start in range(0, len(y), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            logits = x[idx] @ clf.weight.T + clf.bias
            loss, g_logits = softmax_cross_entropy(logits, y[idx])
            optimizer_step(
                params, [g_logits.T @ x[idx], g_logits.sum(axis=0)], state
            )
            epoch_loss += loss * len(idx)
        clf.train_losses.append(epoch_loss / len(y))


def save_classifiers(classifiers: list[SubspaceClassifier], path) -> None:
    payload = {}
    for clf in classifiers:
        payload[f"w{clf.subspace}"] = clf.weight
        payload[f"b{clf.subspace}"] = clf.bias
        payload[f"r{clf.subspace}"] = np.array(clf.task_ranges, dtype=np.int64).reshape(-1, 2)
    payload["__subspaces__"] = np.array(
        [clf.subspace for clf in classifiers], dtype=np.int64
    )
    payload["__dim__"] = np.array(
        [classifiers[0].dim if classifiers else 0], dtype=np.int64
    )
    np.savez(path, **payload)


def load_classifiers(path) -> list[SubspaceClassifier]:
    out = []
    with np.load(path) as data:
        dim = int(data["__dim__"][0])
        for k in data["__subspaces__"].tolist():
            out.append(
                SubspaceClassifier(
                    subspace=int(k),
                    dim=dim,
                    weight=data[f"w{k}"],
                    bias=data[f"b{k}"],
                    task_ranges=[tuple(r) for r in data[f"r{k}"].tolist()],
                )
            )
    return out
