"""Seeded random streams, dense kernels, and optimizers used by every stage.

All numerics are float64. Dense matrices are plain numpy arrays in row-major
order; numpy is the carrier type, no wrapper is introduced.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "RngStream",
    "rng_stream",
    "sample_diag_gaussian",
    "softmax",
    "softmax_cross_entropy",
    "OptimState",
    "optimizer_step",
    "finite_diff_grad",
    "params_checksum",
]

_SEED_MASK = 0xFFFF_FFFF_FFFF_FFFF


def _spawn_key(label: str) -> tuple[int, ...]:
    # 128 bits of the label digest; distinct labels give independent streams
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return struct.unpack(">4I", digest[:16])


class RngStream:
    """Deterministic random stream addressed by (seed, label).

    The same (seed, label) pair always reproduces the same draw sequence.
    Sub-streams are derived by extending the label, so subsystems can draw
    independently without sharing a cursor.
    """

    def __init__(self, seed: int, label: str = "root") -> None:
        self.seed = int(seed) & _SEED_MASK
        self.label = str(label)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_spawn_key(self.label))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    def child(self, suffix: str) -> "RngStream":
        """Independent stream labelled ``<label>/<suffix>``."""
        return RngStream(self.seed, f"{self.label}/{suffix}")

    def clone(self) -> "RngStream":
        """Copy that will replay exactly the draws this stream makes next."""
        dup = RngStream(self.seed, self.label)
        dup._gen.bit_generator.state = self._gen.bit_generator.state
        return dup

    # draw helpers ---------------------------------------------------------

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def rng_stream(seed: int, label: str) -> RngStream:
    """Factory for a labelled deterministic stream."""
    return RngStream(seed, label)


def sample_diag_gaussian(
    mean: np.ndarray, var: np.ndarray, n: int, rng: RngStream
) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from N(mean, diag(var)).

    ``var`` entries must be non-negative; a zero variance collapses that
    dimension onto the mean exactly.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mean.ndim != 1 or var.shape != mean.shape:
        raise ValueError(
            f"mean/var dimension mismatch: {mean.shape} vs {var.shape}"
        )
    if np.any(var < 0):
        raise ValueError("negative variance entries")
    draws = rng.normal(size=(int(n), mean.shape[0]))
    return mean + np.sqrt(var) * draws


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stable under large logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross entropy of softmax(logits) against integer targets.

    Returns ``(loss, grad)`` where ``grad`` is d(loss)/d(logits), shape
    matching ``logits``. Stable for any finite logits (max subtraction).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-d, got shape {logits.shape}")
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match {n} rows")
    if np.any((targets < 0) | (targets >= c)):
        raise ValueError(f"target out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad


@dataclass
class OptimState:
    """State for plain SGD or Adam over a fixed list of parameter arrays."""

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimState,
) -> Sequence[np.ndarray]:
    """One in-place update of ``params`` along ``grads``.

    SGD: p <- p - lr*g. Adam: first/second moment update with bias
    correction. Arrays are updated in place and also returned.
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    state.step += 1
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= state.lr * g
        return params
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def finite_diff_grad(
    f: Callable[[np.ndarray], float], at: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar field, entry by entry."""
    if not h > 0:
        raise ValueError("h must be positive")
    at = np.asarray(at, dtype=np.float64)
    out = np.zeros_like(at)
    flat = out.reshape(-1)
    for i in range(at.size):
        x = at.copy().reshape(-1)
        x[i] += h
        fp = float(f(x.reshape(at.shape)))
        x[i] -= 2.0 * h
        fm = float(f(x.reshape(at.shape)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError("non-finite function value during finite differences")
        flat[i] = (fp - fm) / (2.0 * h)
    return out


def params_checksum(arrays: Iterable[np.ndarray]) -> str:
    """SHA-256 over shapes and raw float64 bytes, for frozenness checks."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
