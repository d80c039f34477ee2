"""Per-(subspace, class) diagonal Gaussian statistics.

After each task, class-conditional feature statistics are recorded in every
subspace that exists so far. A real entry (k, c) therefore exists exactly
when subspace k was already trained by the time class c arrived, i.e.
k <= task_of(c). Requests for a later subspace fall back to the newest
real entry for that class, flagged as approximated. After T tasks of m
classes each the store holds m * T * (T + 1) / 2 real entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import RngStream, sample_diag_gaussian

__all__ = ["VAR_FLOOR", "ClassGaussian", "fit_class_gaussian", "GaussStore"]

VAR_FLOOR = 1e-6


@dataclass
class ClassGaussian:
    """Diagonal Gaussian over one class's features in one subspace."""

    mean: np.ndarray
    var: np.ndarray
    count: int
    class_id: int
    subspace: int
    is_real: bool = True

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ValueError("mean and var must be matching 1-d arrays")
        if np.any(self.var < VAR_FLOOR):
            raise ValueError("variance below floor")


def fit_class_gaussian(features: np.ndarray, class_id: int, subspace: int) -> ClassGaussian:
    """Mean and unbiased (n-1) per-dimension variance, floored for sampling."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) feature matrix")
    n = features.shape[0]
    mean = features.mean(axis=0)
    if n >= 2:
        var = features.var(axis=0, ddof=1)
    else:
        var = np.zeros(features.shape[1])
    return ClassGaussian(mean, np.maximum(var, VAR_FLOOR), n, class_id, subspace)


class GaussStore:
    """All recorded class Gaussians, keyed by (subspace, class)."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self._entries: dict[tuple[int, int], ClassGaussian] = {}
        self._class_task: dict[int, int] = {}
        self._newest: dict[int, int] = {}  # newest real subspace per class

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def real_keys(self) -> set[tuple[int, int]]:
        return set(self._entries)

    @property
    def known_classes(self) -> list[int]:
        return sorted(self._class_task)

    def task_of(self, class_id: int) -> int:
        if class_id not in self._class_task:
            raise KeyError(f"class {class_id} has no recorded statistics")
        return self._class_task[class_id]

    def record_task_gaussians(
        self, task: int, feats_by_subspace: dict[int, dict[int, np.ndarray]]
    ) -> None:
        """Record statistics for one task's classes in the existing subspaces.

        ``feats_by_subspace[k][c]`` holds class c's training features mapped
        through subspace k. Keys must be the contiguous prefix 0..K-1 of
        subspaces that exist at this point; with one subspace per task that
        is all of 0..task, a capped pool may stop earlier. Every subspace
        must cover the same class set.
        """
        keys = sorted(feats_by_subspace)
        if not keys or keys != list(range(len(keys))) or keys[-1] > task:
            raise ValueError(
                f"expected subspaces 0..K-1 with K-1 <= {task}, got {keys}"
            )
        class_sets = {frozenset(by_class) for by_class in feats_by_subspace.values()}
        if len(class_sets) != 1:
            raise ValueError("subspaces disagree on the task's class set")
        for c in next(iter(class_sets)):
            if c in self._class_task:
                raise ValueError(f"class {c} already recorded (task {self._class_task[c]})")
            self._class_task[c] = task
            self._newest[c] = keys[-1]
        for k, by_class in feats_by_subspace.items():
            for c, rows in by_class.items():
                g = fit_class_gaussian(rows, c, k)
                if g.mean.shape != (self.dim,):
                    raise ValueError(f"features of class {c} are not {self.dim}-dimensional")
                self._entries[(k, c)] = g

    def effective_gaussian(self, subspace: int, class_id: int) -> ClassGaussian:
        """Stored entry when it exists, else the class's newest real entry
        re-flagged as approximated (a later subspace never saw this class's
        data, so its distribution there is unknowable)."""
        newest = self._newest.get(class_id)
        if newest is None:
            raise KeyError(f"class {class_id} has no recorded statistics")
        if subspace <= newest:
            return self._entries[(subspace, class_id)]
        base = self._entries[(newest, class_id)]
        return ClassGaussian(
            base.mean.copy(), base.var.copy(), base.count, class_id, subspace, is_real=False
        )

    def sample_class_features(
        self, subspace: int, class_id: int, n: int, rng: RngStream
    ) -> tuple[np.ndarray, np.ndarray]:
        g = self.effective_gaussian(subspace, class_id)
        feats = sample_diag_gaussian(g.mean, g.var, n, rng)
        return feats, np.full(n, class_id, dtype=np.int64)

    def save(self, path) -> None:
        keys = sorted(self._entries)
        np.savez(
            path,
            subspaces=np.array([k for k, _ in keys], dtype=np.int64),
            classes=np.array([c for _, c in keys], dtype=np.int64),
            means=np.stack([self._entries[key].mean for key in keys])
            if keys
            else np.zeros((0, self.dim)),
            vars=np.stack([self._entries[key].var for key in keys])
            if keys
            else np.zeros((0, self.dim)),
            counts=np.array([self._entries[key].count for key in keys], dtype=np.int64),
            class_ids=np.array(sorted(self._class_task), dtype=np.int64),
            class_tasks=np.array(
                [self._class_task[c] for c in sorted(self._class_task)], dtype=np.int64
            ),
            dim=np.array([self.dim], dtype=np.int64),
        )

    @classmethod
    def load(cls, path) -> "GaussStore":
        with np.load(path) as data:
            store = cls(int(data["dim"][0]))
            store._class_task = dict(
                zip(data["class_ids"].tolist(), data["class_tasks"].tolist())
            )
            for i in range(len(data["subspaces"])):
                k = int(data["subspaces"][i])
                c = int(data["classes"][i])
                store._entries[(k, c)] = ClassGaussian(
                    data["means"][i], data["vars"][i], int(data["counts"][i]), c, k
                )
                store._newest[c] = max(store._newest.get(c, 0), k)
        return store
