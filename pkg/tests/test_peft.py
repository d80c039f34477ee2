"""Subspace modules: identity at init, hand-derived gradients, training."""

import numpy as np
import pytest

from clens.backbone import extract_features, init_random_projection
from clens.data import LabeledDataset, gen_synthetic_stream
from clens.numeric import finite_diff_grad, rng_stream
from clens.peft import (
    PeftHyper,
    PeftPool,
    init_peft_module,
    peft_backward,
    subspace_forward,
    train_peft_module,
)


@pytest.mark.parametrize("kind", ["adapter", "lora"])
def test_fresh_module_is_identity(kind):
    rng = rng_stream(1, "init")
    module = init_peft_module(kind, dim=12, rank=3, rng=rng)
    x = rng_stream(2, "x").normal(size=(7, 12))
    assert np.array_equal(subspace_forward(module, x), x)


def test_param_counts():
    rng = rng_stream(1, "init")
    adapter = init_peft_module("adapter", 12, 3, rng)
    lora = init_peft_module("lora", 12, 3, rng)
    assert adapter.n_params == 3 * 12 + 3 + 12 * 3 + 12
    assert lora.n_params == 2 * 12 * 3


def test_forward_rejects_wrong_width():
    module = init_peft_module("adapter", 12, 3, rng_stream(1, "init"))
    with pytest.raises(ValueError):
        subspace_forward(module, np.zeros((4, 11)))


@pytest.mark.parametrize("kind", ["adapter", "lora"])
def test_backward_matches_finite_differences(kind):
    # scalar objective sum(out * v); check every parameter gradient
    rng = rng_stream(3, "grad")
    module = init_peft_module(kind, dim=6, rank=2, rng=rng)
    for name in module.params:  # move off the zero init so tanh is active
        module.params[name] = module.params[name] + 0.3 * rng.normal(
            size=module.params[name].shape
        )
    x = rng.normal(size=(5, 6))
    v = rng.normal(size=(5, 6))
    grads = peft_backward(module, x, v)
    for name in module.params:
        flat = module.params[name].ravel()

        def f(theta, name=name):
            saved = module.params[name]
            module.params[name] = theta.reshape(saved.shape)
            out = float(np.sum(subspace_forward(module, x) * v))
            module.params[name] = saved
            return out

        numeric = finite_diff_grad(f, flat.copy())
        analytic = grads[name].ravel()
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert err < 1e-6, f"{kind}.{name}: rel err {err:.2e}"


@pytest.mark.parametrize("kind", ["adapter", "lora"])
def test_training_reduces_loss(kind):
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(1, 4, 8, 2, noise=0.2, n_per_class=20, rng=rng)
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    hyper = PeftHyper(kind=kind, rank=4, epochs=15, lr=1e-2)
    module = train_peft_module(stream.train(0), bb, hyper, rng_stream(0, "peft"), 0)
    assert module.task_index == 0
    assert len(module.train_losses) == 15
    assert module.train_losses[-1] < module.train_losses[0]


def test_training_is_seeded():
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(1, 4, 8, 2, 0.2, 20, rng)
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    hyper = PeftHyper(epochs=5, lr=1e-2)
    m1 = train_peft_module(stream.train(0), bb, hyper, rng_stream(0, "peft"), 0)
    m2 = train_peft_module(stream.train(0), bb, hyper, rng_stream(0, "peft"), 0)
    for name in m1.params:
        assert np.array_equal(m1.params[name], m2.params[name])


def test_rotation_loss_requires_images():
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(1, 2, 8, 2, 0.2, 10, rng)
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    with pytest.raises(ValueError, match="image"):
        train_peft_module(stream.train(0), bb, PeftHyper(alpha=0.3, epochs=1),
                          rng_stream(0, "peft"), 0)


def test_rotation_loss_changes_training(idx_dataset):
    from clens.data import load_idx

    ds = load_idx(idx_dataset["train_images"], idx_dataset["train_labels"])
    small = ds.subset(np.where(ds.labels < 3)[0])
    bb = init_random_projection(small.inputs.shape[1:], 16, rng_stream(1, "bb"))
    m0 = train_peft_module(small, bb, PeftHyper(alpha=0.0, epochs=3, lr=1e-3),
                           rng_stream(0, "peft"), 0)
    m3 = train_peft_module(small, bb, PeftHyper(alpha=0.3, epochs=3, lr=1e-3),
                           rng_stream(0, "peft"), 0)
    assert not np.array_equal(m0.params["up_w"], m3.params["up_w"])
    # the auxiliary term adds loss mass
    assert m3.train_losses[0] > m0.train_losses[0]


def test_backbone_unchanged_by_peft_training():
    from clens.backbone import backbone_checksum

    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(1, 2, 8, 2, 0.2, 10, rng)
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    before = backbone_checksum(bb)
    train_peft_module(stream.train(0), bb, PeftHyper(epochs=3), rng_stream(0, "p"), 0)
    assert backbone_checksum(bb) == before


def test_pool_is_append_only_and_ordered():
    rng = rng_stream(1, "pool")
    pool = PeftPool(8)
    pool.add(init_peft_module("adapter", 8, 2, rng, task_index=0))
    with pytest.raises(ValueError):
        pool.add(init_peft_module("adapter", 8, 2, rng, task_index=5))
    with pytest.raises(ValueError):
        pool.add(init_peft_module("adapter", 9, 2, rng, task_index=1))
    pool.add(init_peft_module("lora", 8, 2, rng, task_index=1))
    assert len(pool) == 2


def test_pool_save_load_round_trip(tmp_path):
    rng = rng_stream(1, "pool")
    pool = PeftPool(8)
    pool.add(init_peft_module("adapter", 8, 2, rng, task_index=0))
    pool.add(init_peft_module("lora", 8, 3, rng, task_index=1))
    pool.modules[0].params["up_w"][:] = rng.normal(size=(8, 2))
    path = tmp_path / "pool.npz"
    pool.save(path)
    loaded = PeftPool.load(path)
    assert loaded.checksum() == pool.checksum()
    assert [m.kind for m in loaded.modules] == ["adapter", "lora"]
    x = rng.normal(size=(3, 8))
    assert np.array_equal(loaded.forward(0, x), pool.forward(0, x))
