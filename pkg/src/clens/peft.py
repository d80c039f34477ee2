"""Per-task feature subspaces.

Each task gets its own lightweight residual module on top of the frozen
backbone: either a bottleneck adapter (down-project, tanh, up-project) or a
low-rank update (LoRA). Both start as the identity map because the upward
projection is zero-initialised.

Training minimises cross-entropy of a temporary task head plus, optionally,
an auxiliary rotation-prediction loss: every batch is replicated at all
four quarter-turn orientations and a second temporary head must recover
the rotation. Both heads are discarded after training; only the residual
module is kept. All gradients here are hand-derived closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, extract_features
from .data import LabeledDataset, rotate90
from .numeric import OptimState, RngStream, optimizer_step, params_checksum, softmax_cross_entropy

__all__ = [
    "PeftHyper",
    "PeftModule",
    "init_peft_module",
    "subspace_forward",
    "peft_backward",
    "composite_loss_and_grads",
    "train_peft_module",
    "PeftPool",
]


@dataclass
class PeftHyper:
    """Knobs for one subspace training run."""

    kind: str = "adapter"
    rank: int = 16
    alpha: float = 0.0  # weight of the rotation loss; 0 disables it
    epochs: int = 20
    lr: float = 5e-4
    batch_size: int = 64
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("adapter", "lora"):
            raise ValueError(f"unknown subspace kind {self.kind!r}")
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass
class PeftModule:
    """A trained (or fresh) residual module for one task's subspace."""

    kind: str
    dim: int
    rank: int
    task_index: int
    params: dict[str, np.ndarray]
    train_losses: list[float] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def init_peft_module(kind: str, dim: int, rank: int, rng: RngStream, task_index: int = 0) -> PeftModule:
    """Fresh module; zero-initialised output path makes it the identity."""
    if kind == "adapter":
        params = {
            "down_w": rng.normal(size=(rank, dim)) / np.sqrt(dim),
            "down_b": np.zeros(rank),
            "up_w": np.zeros((dim, rank)),
            "up_b": np.zeros(dim),
        }
    elif kind == "lora":
        params = {
            "a_w": rng.normal(size=(rank, dim)) / np.sqrt(dim),
            "b_w": np.zeros((dim, rank)),
        }
    else:
        raise ValueError(f"unknown subspace kind {kind!r}")
    return PeftModule(kind, dim, rank, task_index, params)


def subspace_forward(module: PeftModule, feats: np.ndarray) -> np.ndarray:
    """Map backbone features into the module's subspace: x + residual(x)."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != module.dim:
        raise ValueError(f"expected (n, {module.dim}) features, got {feats.shape}")
    p = module.params
    if module.kind == "adapter":
        hidden = np.tanh(feats @ p["down_w"].T + p["down_b"])
        return feats + hidden @ p["up_w"].T + p["up_b"]
    return feats + (feats @ p["a_w"].T) @ p["b_w"].T


def peft_backward(
    module: PeftModule, feats: np.ndarray, g_out: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(output); closed-form adjoints."""
    p = module.params
    if module.kind == "adapter":
        hidden = np.tanh(feats @ p["down_w"].T + p["down_b"])
        g_hidden = (g_out @ p["up_w"]) * (1.0 - hidden * hidden)
        return {
            "down_w": g_hidden.T @ feats,
            "down_b": g_hidden.sum(axis=0),
            "up_w": g_out.T @ hidden,
            "up_b": g_out.sum(axis=0),
        }
    u = feats @ p["a_w"].T
    return {
        "a_w": (g_out @ p["b_w"]).T @ feats,
        "b_w": g_out.T @ u,
    }


def _local_labels(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    classes, local = np.unique(labels, return_inverse=True)
    return classes, local.astype(np.int64)


def composite_loss_and_grads(
    module: PeftModule,
    cls_w: np.ndarray,
    cls_b: np.ndarray,
    ssl_w: np.ndarray,
    ssl_b: np.ndarray,
    feats: np.ndarray,
    rot_feats: list[np.ndarray] | None,
    local_labels: np.ndarray,
    alpha: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """One batch of the training objective and all its parameter gradients.

    The objective is CE of the class head over the module's outputs plus,
    when ``alpha > 0``, alpha times the CE of the 4-way rotation head over
    the outputs for all four orientations (``rot_feats`` holds the backbone
    features of the batch at 0, 1, 2, 3 quarter turns). Gradient keys are
    the module's parameter names plus cls_w/cls_b and, with the rotation
    term, ssl_w/ssl_b.
    """
    z = subspace_forward(module, feats)
    logits = z @ cls_w.T + cls_b
    loss, g_logits = softmax_cross_entropy(logits, local_labels)
    grads = peft_backward(module, feats, g_logits @ cls_w)
    grads["cls_w"] = g_logits.T @ z
    grads["cls_b"] = g_logits.sum(axis=0)

    if alpha > 0:
        if rot_feats is None or len(rot_feats) != 4:
            raise ValueError("rotation term needs features for all four turns")
        xr = np.vstack(rot_feats)
        yr = np.repeat(np.arange(4, dtype=np.int64), feats.shape[0])
        zr = subspace_forward(module, xr)
        ssl_logits = zr @ ssl_w.T + ssl_b
        ssl_loss, g_sl = softmax_cross_entropy(ssl_logits, yr)
        loss += alpha * ssl_loss
        grads["ssl_w"] = alpha * (g_sl.T @ zr)
        grads["ssl_b"] = alpha * g_sl.sum(axis=0)
        for k, g in peft_backward(module, xr, alpha * (g_sl @ ssl_w)).items():
            grads[k] += g
    return loss, grads


def train_peft_module(
    dataset: LabeledDataset,
    backbone: Backbone,
    hyper: PeftHyper,
    rng: RngStream,
    task_index: int,
) -> PeftModule:
    """Fit one task's subspace module on that task's training data.

    A temporary linear head over the task's own classes drives the
    classification loss. With ``alpha > 0`` the rotation loss is added: the
    batch is stacked at 0/90/180/270 degrees, features of all four copies
    pass through the module, and a 4-way head must predict the turn count.
    Backbone features for each orientation are precomputed once since the
    backbone is frozen.
    """
    if hyper.alpha > 0 and not dataset.is_images:
        raise ValueError("rotation self-supervision requires image inputs")

    feats = extract_features(backbone, dataset.inputs)
    rot_feats = None
    if hyper.alpha > 0:
        rot_feats = [feats] + [
            extract_features(backbone, rotate90(dataset.inputs, k)) for k in (1, 2, 3)
        ]
    classes, local = _local_labels(dataset.labels)
    n, d = feats.shape

    module = init_peft_module(hyper.kind, d, hyper.rank, rng.child("init"), task_index)
    cls_w = np.zeros((len(classes), d))
    cls_b = np.zeros(len(classes))
    ssl_w = np.zeros((4, d))
    ssl_b = np.zeros(4)

    names = sorted(module.params)
    params = [module.params[k] for k in names] + [cls_w, cls_b]
    if hyper.alpha > 0:
        params += [ssl_w, ssl_b]
    state = OptimState(kind="adam", lr=hyper.lr)

    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            batch_rot = [rf[idx] for rf in rot_feats] if rot_feats else None
            loss, grads = composite_loss_and_grads(
                module, cls_w, cls_b, ssl_w, ssl_b,
                feats[idx], batch_rot, local[idx], hyper.alpha,
            )
            if hyper.weight_decay > 0:
                for k in names:
                    grads[k] = grads[k] + hyper.weight_decay * module.params[k]
            glist = [grads[k] for k in names] + [grads["cls_w"], grads["cls_b"]]
            if hyper.alpha > 0:
                glist += [grads["ssl_w"], grads["ssl_b"]]
            optimizer_step(params, glist, state)
            epoch_loss += loss * len(idx)
        module.train_losses.append(epoch_loss / n)
    return module


class PeftPool:
    """Append-only collection of subspace modules, one per seen task."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.modules: list[PeftModule] = []

    def __len__(self) -> int:
        return len(self.modules)

    def add(self, module: PeftModule) -> None:
        if module.dim != self.dim:
            raise ValueError("module dimension does not match pool")
        if module.task_index != len(self.modules):
            raise ValueError(
                f"expected module for task {len(self.modules)}, got {module.task_index}"
            )
        self.modules.append(module)

    def forward(self, k: int, feats: np.ndarray) -> np.ndarray:
        return subspace_forward(self.modules[k], feats)

    def checksum(self) -> str:
        arrays = []
        for m in self.modules:
            arrays.extend(m.params[k] for k in sorted(m.params))
        return params_checksum(arrays)

    def save(self, path) -> None:
        payload = {}
        kinds = []
        for i, m in enumerate(self.modules):
            kinds.append(f"{m.kind}:{m.rank}")
            for k, v in m.params.items():
                payload[f"m{i}.{k}"] = v
        payload["__kinds__"] = np.frombuffer(
            "|".join(kinds).encode() or b"\x00", dtype=np.uint8
        )
        payload["__dim__"] = np.array([self.dim], dtype=np.int64)
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "PeftPool":
        with np.load(path) as data:
            dim = int(data["__dim__"][0])
            pool = cls(dim)
            raw = bytes(data["__kinds__"]).decode()
            if raw and raw != "\x00":
                for i, entry in enumerate(raw.split("|")):
                    kind, rank = entry.split(":")
                    params = {
                        key.split(".", 1)[1]: data[key]
                        for key in data.files
                        if key.startswith(f"m{i}.")
                    }
                    pool.modules.append(
                        PeftModule(kind, dim, int(rank), i, params)
                    )
        return pool
