"""Datasets and task streams.

Handles IDX-format image ingestion, synthetic vector and image generation,
class-disjoint task splits with seeded shuffling, and the quarter-turn
rotation used by the self-supervised branch.

Task streams carry an access guard: while ``visible_limit`` is set, asking
for data of a later task raises. Every access is appended to ``access_log``
so tests can audit what a run actually touched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import RngStream

__all__ = [
    "LabeledDataset",
    "TaskStream",
    "load_idx",
    "write_idx",
    "build_task_stream",
    "gen_synthetic_stream",
    "gen_pattern_images",
    "rotate90",
]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Inputs with integer class labels drawn from a fixed catalogue.

    ``inputs`` is either an image batch (n, H, W) with values in [0, 1] or a
    feature matrix (n, d). Labels index into a catalogue of ``n_classes``
    classes; a dataset may contain only a subset of them.
    """

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim not in (2, 3):
            raise ValueError(f"inputs must be (n, d) or (n, H, W), got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels do not match input rows")
        if self.n <= 0:
            raise ValueError("empty dataset")
        if self.n_classes < 1:
            raise ValueError("n_classes must be at least 1")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("label outside the class catalogue")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def is_images(self) -> bool:
        return self.inputs.ndim == 3

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.n_classes)


class TaskStream:
    """Ordered class-disjoint tasks, plus an optional pre-training split.

    ``visible_limit = t`` arms the guard: train/test access to any task
    index above ``t`` raises RuntimeError. ``visible_limit = None`` lifts
    the guard (offline diagnostics only).
    """

    def __init__(
        self,
        tasks: list[tuple[LabeledDataset, LabeledDataset]],
        class_to_task: np.ndarray,
        task_class_ranges: list[tuple[int, int]],
        pretrain: LabeledDataset | None = None,
    ) -> None:
        if len(tasks) != len(task_class_ranges):
            raise ValueError("one class range per task required")
        self._tasks = list(tasks)
        self.class_to_task = np.asarray(class_to_task, dtype=np.int64)
        self.task_class_ranges = [(int(s), int(e)) for s, e in task_class_ranges]
        self.pretrain = pretrain
        self.visible_limit: int | None = None
        self.access_log: list[tuple[str, int, int | None]] = []
        self._validate()

    def _validate(self) -> None:
        pos = 0
        for t, (s, e) in enumerate(self.task_class_ranges):
            if s != pos or e <= s:
                raise ValueError("task class ranges must be contiguous and non-empty")
            if np.any(self.class_to_task[s:e] != t):
                raise ValueError("class_to_task disagrees with task ranges")
            pos = e
        if pos != len(self.class_to_task):
            raise ValueError("class_to_task length mismatch")
        for t, (train, test) in enumerate(self._tasks):
            s, e = self.task_class_ranges[t]
            for part in (train, test):
                if part.labels.min() < s or part.labels.max() >= e:
                    raise ValueError(f"task {t} contains labels outside its class range")

    @property
    def num_tasks(self) -> int:
        return len(self._tasks)

    @property
    def n_classes(self) -> int:
        return self.task_class_ranges[-1][1]

    def classes_of(self, t: int) -> range:
        s, e = self.task_class_ranges[t]
        return range(s, e)

    def _guard(self, split: str, t: int) -> None:
        if not 0 <= t < self.num_tasks:
            raise IndexError(f"task index {t} out of range")
        self.access_log.append((split, t, self.visible_limit))
        if self.visible_limit is not None and t > self.visible_limit:
            raise RuntimeError(
                f"continual-learning access violation: task {t} {split} data "
                f"requested while only tasks 0..{self.visible_limit} are visible"
            )

    def train(self, t: int) -> LabeledDataset:
        self._guard("train", t)
        return self._tasks[t][0]

    def test(self, t: int) -> LabeledDataset:
        self._guard("test", t)
        return self._tasks[t][1]


# IDX ingestion -------------------------------------------------------------


def _read_exact(path: Path) -> bytes:
    return Path(path).read_bytes()


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair into a dataset.

    Images: magic 0x00000803, dims (n, H, W), unsigned byte pixels scaled
    to [0, 1]. Labels: magic 0x00000801, dim (n), one byte per label.
    """
    raw = _read_exact(images_path)
    if len(raw) < 16:
        raise ValueError(f"truncated IDX image file {images_path}")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise ValueError(
            f"bad magic 0x{magic:08x} in {images_path}: expected 0x{_IDX_IMAGES_MAGIC:08x}"
        )
    if len(raw) != 16 + n * h * w:
        raise ValueError(f"truncated IDX image file {images_path}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h, w)

    raw_l = _read_exact(labels_path)
    if len(raw_l) < 8:
        raise ValueError(f"truncated IDX label file {labels_path}")
    magic_l, n_l = struct.unpack(">II", raw_l[:8])
    if magic_l != _IDX_LABELS_MAGIC:
        raise ValueError(
            f"bad magic 0x{magic_l:08x} in {labels_path}: expected 0x{_IDX_LABELS_MAGIC:08x}"
        )
    if len(raw_l) != 8 + n_l:
        raise ValueError(f"truncated IDX label file {labels_path}")
    if n_l != n:
        raise ValueError(f"image/label count mismatch: {n} images vs {n_l} labels")
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8).astype(np.int64)
    return LabeledDataset(images.astype(np.float64) / 255.0, labels, int(labels.max()) + 1)


def write_idx(images_u8: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write a (n, H, W) uint8 image batch and its labels as an IDX pair."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels)
    if images_u8.ndim != 3:
        raise ValueError("images must be (n, H, W)")
    n, h, w = images_u8.shape
    if labels.shape != (n,):
        raise ValueError("labels do not match image count")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("IDX labels must fit in one byte")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


# task streams --------------------------------------------------------------


def _task_sizes(n_avail: int, n_tasks: int, first_task_size: int | None) -> list[int]:
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if n_avail < n_tasks:
        raise ValueError(f"too few classes ({n_avail}) for {n_tasks} tasks")
    if first_task_size:
        if n_tasks == 1:
            if first_task_size != n_avail:
                raise ValueError("first task size must cover all classes when T=1")
            return [n_avail]
        rest = n_avail - first_task_size
        if first_task_size < 1 or rest < n_tasks - 1 or rest % (n_tasks - 1) != 0:
            raise ValueError(
                f"cannot split {n_avail} classes into a first task of "
                f"{first_task_size} plus {n_tasks - 1} equal tasks"
            )
        return [first_task_size] + [rest // (n_tasks - 1)] * (n_tasks - 1)
    if n_avail % n_tasks != 0:
        raise ValueError(f"{n_avail} classes do not divide into {n_tasks} equal tasks")
    return [n_avail // n_tasks] * n_tasks


def build_task_stream(
    train: LabeledDataset,
    test: LabeledDataset,
    n_tasks: int,
    shuffle_seed: int,
    first_task_size: int | None = None,
    pretrain_classes: int = 0,
) -> TaskStream:
    """Shuffle the class order by seed, then partition classes contiguously.

    The first ``pretrain_classes`` shuffled classes are carved off into the
    pre-training split (train rows only) and never appear in the stream.
    Remaining classes are relabelled 0..C-1 in shuffled order, so each
    task's classes occupy a contiguous global index range.
    """
    if train.n_classes != test.n_classes:
        raise ValueError("train/test class catalogues differ")
    order = np.random.default_rng(int(shuffle_seed)).permutation(train.n_classes)
    pre_cls = order[:pretrain_classes]
    stream_cls = order[pretrain_classes:]
    sizes = _task_sizes(len(stream_cls), n_tasks, first_task_size)

    relabel = np.full(train.n_classes, -1, dtype=np.int64)
    relabel[stream_cls] = np.arange(len(stream_cls))

    def carve(src: LabeledDataset, lo: int, hi: int) -> LabeledDataset:
        new_labels = relabel[src.labels]
        mask = (new_labels >= lo) & (new_labels < hi)
        if not mask.any():
            raise ValueError(f"no samples for classes {lo}..{hi - 1}")
        return LabeledDataset(src.inputs[mask], new_labels[mask], len(stream_cls))

    tasks = []
    ranges = []
    off = 0
    for size in sizes:
        tasks.append((carve(train, off, off + size), carve(test, off, off + size)))
        ranges.append((off, off + size))
        off += size
    class_to_task = np.concatenate(
        [np.full(size, t, dtype=np.int64) for t, size in enumerate(sizes)]
    )

    pretrain = None
    if pretrain_classes:
        pre_relabel = np.full(train.n_classes, -1, dtype=np.int64)
        pre_relabel[pre_cls] = np.arange(pretrain_classes)
        mask = pre_relabel[train.labels] >= 0
        if not mask.any():
            raise ValueError("no samples for the pre-training classes")
        pretrain = LabeledDataset(
            train.inputs[mask], pre_relabel[train.labels[mask]], pretrain_classes
        )
    return TaskStream(tasks, class_to_task, ranges, pretrain)


def _sign_pattern(index: int, width: int) -> np.ndarray:
    # class index encoded as +/-1 over `width` coordinates via its bits
    bits = (index >> np.arange(width)) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def gen_synthetic_stream(
    n_tasks: int,
    classes_per_task: int,
    input_dim: int,
    disc_dims: int,
    noise: float,
    n_per_class: int,
    rng: RngStream,
    pretrain_classes: int = 0,
) -> TaskStream:
    """Gaussian-cluster stream where each task owns a private coordinate block.

    Class means within task t sit on a +/-1 grid over coordinates
    [t*disc_dims, (t+1)*disc_dims) and are zero elsewhere, so the classes of
    different tasks are separable only along different blocks. Isotropic
    noise of the given scale is added everywhere. Each class is split 80/20
    into train/test rows.
    """
    if input_dim < n_tasks * disc_dims:
        raise ValueError(
            f"input_dim {input_dim} cannot host {n_tasks} blocks of {disc_dims} dims"
        )
    if classes_per_task > 2**disc_dims:
        raise ValueError(
            f"{classes_per_task} classes need more than {disc_dims} discriminative dims"
        )
    if n_per_class < 2:
        raise ValueError("need at least 2 samples per class for an 80/20 split")
    if noise < 0:
        raise ValueError("noise must be non-negative")

    n_train = min(max(int(round(0.8 * n_per_class)), 1), n_per_class - 1)
    tasks = []
    ranges = []
    for t in range(n_tasks):
        tr_x, tr_y, te_x, te_y = [], [], [], []
        block = slice(t * disc_dims, (t + 1) * disc_dims)
        for j in range(classes_per_task):
            mean = np.zeros(input_dim)
            mean[block] = _sign_pattern(j, disc_dims)
            x = mean + noise * rng.normal(size=(n_per_class, input_dim))
            g = t * classes_per_task + j
            tr_x.append(x[:n_train])
            tr_y.append(np.full(n_train, g, dtype=np.int64))
            te_x.append(x[n_train:])
            te_y.append(np.full(n_per_class - n_train, g, dtype=np.int64))
        total = n_tasks * classes_per_task
        tasks.append(
            (
                LabeledDataset(np.vstack(tr_x), np.concatenate(tr_y), total),
                LabeledDataset(np.vstack(te_x), np.concatenate(te_y), total),
            )
        )
        ranges.append((t * classes_per_task, (t + 1) * classes_per_task))

    pretrain = None
    if pretrain_classes:
        # pre-training classes span the whole discriminative region so a
        # pre-trained backbone has a reason to represent every block
        region = slice(0, n_tasks * disc_dims)
        px, py = [], []
        for c in range(pretrain_classes):
            mean = np.zeros(input_dim)
            mean[region] = rng.integers(0, 2, size=n_tasks * disc_dims) * 2.0 - 1.0
            x = mean + noise * rng.normal(size=(n_per_class, input_dim))
            px.append(x)
            py.append(np.full(n_per_class, c, dtype=np.int64))
        pretrain = LabeledDataset(np.vstack(px), np.concatenate(py), pretrain_classes)

    class_to_task = np.repeat(np.arange(n_tasks, dtype=np.int64), classes_per_task)
    return TaskStream(tasks, class_to_task, ranges, pretrain)


def gen_pattern_images(
    n_classes: int,
    size: int,
    n_per_class: int,
    rng: RngStream,
    noise: float = 0.08,
    phase_jitter: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic uint8 image classes: oriented gratings plus a corner ramp.

    Class identity is carried by grating orientation and frequency; each
    image gets pixel noise and a phase perturbation (``phase_jitter`` is the
    fraction of a full cycle the phase may wander; 1.0 erases the phase cue
    entirely, which makes classes much harder for non-spectral features).
    The fixed corner-to-corner luminance ramp breaks the 180-degree symmetry
    of a pure grating, so the quarter-turn orientation of an image stays
    recoverable.
    """
    if size < 4:
        raise ValueError("image size too small")
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    ramp = 40.0 * (ii + jj) / (2.0 * (size - 1))  # ~40 gray levels corner to corner
    images = np.empty((n_classes * n_per_class, size, size), dtype=np.uint8)
    labels = np.empty(n_classes * n_per_class, dtype=np.int64)
    for c in range(n_classes):
        angle = np.pi * (c % 8) / 8.0
        freq = 2.0 * np.pi * (1.0 + c // 8) / 8.0
        kx = freq * np.cos(angle)
        ky = freq * np.sin(angle)
        for s in range(n_per_class):
            phase = phase_jitter * rng.uniform(0.0, 2.0 * np.pi)
            img = (
                110.0
                + 70.0 * np.sin(kx * ii + ky * jj + phase)
                + ramp
                + 255.0 * noise * rng.normal(size=(size, size))
            )
            idx = c * n_per_class + s
            images[idx] = np.clip(img, 0, 255).astype(np.uint8)
            labels[idx] = c
    return images, labels


def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate square images counter-clockwise by ``k`` quarter turns.

    Accepts a single (H, W) image or a batch (n, H, W); the last two axes
    must be equal length.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[-1] != image.shape[-2]:
        raise ValueError(f"rotation requires square images, got {image.shape}")
    return np.ascontiguousarray(np.rot90(image, int(k) % 4, axes=(-2, -1)))
