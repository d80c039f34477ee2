"""Frozen feature extractors.

Two kinds are supported: a seeded random tanh projection (no training,
useful for fast synthetic runs) and a small two-layer tanh network
pre-trained with a softmax head on a held-out class split, after which the
head is dropped and the weights are frozen. Both expose the same
``extract_features`` contract: a pure, batch-size-independent map from raw
inputs to a (n, out_dim) float64 feature matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .numeric import (
    OptimState,
    RngStream,
    optimizer_step,
    params_checksum,
    softmax_cross_entropy,
)

__all__ = [
    "Backbone",
    "init_random_projection",
    "pretrain_mlp_backbone",
    "extract_features",
    "backbone_checksum",
    "save_backbone",
    "load_backbone",
]


@dataclass
class Backbone:
    """Frozen extractor: ``kind`` selects the forward rule over ``weights``."""

    kind: str
    input_shape: tuple[int, ...]
    out_dim: int
    weights: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("random_projection", "pretrained_mlp"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        for name, w in self.weights.items():
            self.weights[name] = np.asarray(w, dtype=np.float64)


def _flat_dim(input_shape: tuple[int, ...]) -> int:
    return int(np.prod(input_shape))


def init_random_projection(
    input_shape: tuple[int, ...], out_dim: int, rng: RngStream
) -> Backbone:
    """Seeded tanh random-feature map; 1/sqrt(d_in) scaling keeps pre-
    activations O(1) regardless of input width."""
    d_in = _flat_dim(input_shape)
    w = rng.normal(size=(out_dim, d_in)) / np.sqrt(d_in)
    b = 0.1 * rng.normal(size=(out_dim,))
    return Backbone("random_projection", tuple(input_shape), out_dim, {"w": w, "b": b})


def _mlp_forward(weights: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    h = np.tanh(x @ weights["w1"].T + weights["b1"])
    return np.tanh(h @ weights["w2"].T + weights["b2"])


def _rowwise_matmul(x: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    # one matvec per row: the result for row i never depends on how the
    # batch was split, unlike a blocked matrix-matrix product
    out = np.empty((x.shape[0], w_t.shape[1]))
    for i in range(x.shape[0]):
        out[i] = np.ascontiguousarray(x[i]) @ w_t
    return out


def pretrain_mlp_backbone(
    pretrain: LabeledDataset,
    out_dim: int,
    rng: RngStream,
    hidden: int = 128,
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 64,
) -> Backbone:
    """Train flatten -> tanh(hidden) -> tanh(out_dim) -> softmax head on the
    pre-training split, then drop the head and freeze the rest.

    Gradients are written out by hand; for a tanh layer a = tanh(z) the
    pre-activation gradient is g * (1 - a^2).
    """
    x_all = pretrain.inputs.reshape(pretrain.n, -1)
    y_all = pretrain.labels
    d_in = x_all.shape[1]
    n_cls = pretrain.n_classes

    weights = {
        "w1": rng.normal(size=(hidden, d_in)) / np.sqrt(d_in),
        "b1": np.zeros(hidden),
        "w2": rng.normal(size=(out_dim, hidden)) / np.sqrt(hidden),
        "b2": np.zeros(out_dim),
    }
    head_w = np.zeros((n_cls, out_dim))
    head_b = np.zeros(n_cls)

    names = ["w1", "b1", "w2", "b2"]
    params = [weights[k] for k in names] + [head_w, head_b]
    state = OptimState(kind="adam", lr=lr)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(pretrain.n)
        epoch_loss = 0.0
        for start in range(0, pretrain.n, batch_size):
            idx = order[start : start + batch_size]
            x, y = x_all[idx], y_all[idx]
            a1 = np.tanh(x @ weights["w1"].T + weights["b1"])
            a2 = np.tanh(a1 @ weights["w2"].T + weights["b2"])
            logits = a2 @ head_w.T + head_b
            loss, g_logits = softmax_cross_entropy(logits, y)
            epoch_loss += loss * len(idx)

            g_head_w = g_logits.T @ a2
            g_head_b = g_logits.sum(axis=0)
            g_a2 = g_logits @ head_w
            g_z2 = g_a2 * (1.0 - a2 * a2)
            g_w2 = g_z2.T @ a1
            g_b2 = g_z2.sum(axis=0)
            g_a1 = g_z2 @ weights["w2"]
            g_z1 = g_a1 * (1.0 - a1 * a1)
            g_w1 = g_z1.T @ x
            g_b1 = g_z1.sum(axis=0)
            optimizer_step(params, [g_w1, g_b1, g_w2, g_b2, g_head_w, g_head_b], state)
        losses.append(epoch_loss / pretrain.n)

    return Backbone(
        "pretrained_mlp",
        tuple(pretrain.inputs.shape[1:]),
        out_dim,
        dict(weights),
        meta={"train_losses": losses, "hidden": hidden},
    )


def extract_features(backbone: Backbone, inputs: np.ndarray) -> np.ndarray:
    """Frozen forward pass; flattens inputs and returns (n, out_dim).

    Each output row is computed from its input row alone, so splitting a
    batch (or extracting one sample at a time) reproduces the exact same
    bits as one large call.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[1:] != backbone.input_shape:
        raise ValueError(
            f"input shape {inputs.shape[1:]} does not match backbone "
            f"{backbone.input_shape}"
        )
    x = inputs.reshape(inputs.shape[0], -1)
    w = backbone.weights
    if backbone.kind == "random_projection":
        return np.tanh(_rowwise_matmul(x, w["w"].T) + w["b"])
    h = np.tanh(_rowwise_matmul(x, w["w1"].T) + w["b1"])
    return np.tanh(_rowwise_matmul(h, w["w2"].T) + w["b2"])


def backbone_checksum(backbone: Backbone) -> str:
    return params_checksum([backbone.weights[k] for k in sorted(backbone.weights)])


def save_backbone(backbone: Backbone, path) -> None:
    meta = {
        "kind": backbone.kind,
        "input_shape": list(backbone.input_shape),
        "out_dim": backbone.out_dim,
        "extra": {
            k: v for k, v in backbone.meta.items() if not isinstance(v, np.ndarray)
        },
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **backbone.weights)


def load_backbone(path) -> Backbone:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        weights = {k: data[k] for k in data.files if k != "__meta__"}
    return Backbone(
        meta["kind"],
        tuple(meta["input_shape"]),
        int(meta["out_dim"]),
        weights,
        meta=dict(meta.get("extra", {})),
    )
