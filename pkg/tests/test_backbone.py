"""Frozen extractors: determinism, purity, batching invariance, round-trip."""

import numpy as np
import pytest

from clens.backbone import (
    backbone_checksum,
    extract_features,
    init_random_projection,
    load_backbone,
    pretrain_mlp_backbone,
    save_backbone,
)
from clens.data import gen_synthetic_stream
from clens.numeric import rng_stream


def test_random_projection_seeded_identical():
    a = init_random_projection((8,), 16, rng_stream(1, "bb"))
    b = init_random_projection((8,), 16, rng_stream(1, "bb"))
    assert backbone_checksum(a) == backbone_checksum(b)


def test_different_seeds_give_different_features():
    x = rng_stream(9, "x").normal(size=(5, 8))
    a = init_random_projection((8,), 16, rng_stream(1, "bb"))
    b = init_random_projection((8,), 16, rng_stream(2, "bb"))
    assert not np.array_equal(extract_features(a, x), extract_features(b, x))


def test_extraction_purity():
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    x = rng_stream(9, "x").normal(size=(5, 8))
    assert np.array_equal(extract_features(bb, x), extract_features(bb, x))


def test_extraction_batching_invariance_exact():
    # one sample at a time, odd chunks, full batch: identical bits
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    x = rng_stream(9, "x").normal(size=(23, 8))
    full = extract_features(bb, x)
    ones = np.vstack([extract_features(bb, x[i : i + 1]) for i in range(23)])
    chunks = np.vstack([extract_features(bb, x[i : i + 5]) for i in range(0, 23, 5)])
    assert np.array_equal(full, ones)
    assert np.array_equal(full, chunks)


def test_zero_input_gives_bias_response():
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    out = extract_features(bb, np.zeros((1, 8)))
    assert np.array_equal(out[0], np.tanh(bb.weights["b"]))


def test_extraction_rejects_shape_mismatch():
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    with pytest.raises(ValueError):
        extract_features(bb, np.zeros((3, 7)))


def test_features_are_finite_and_bounded():
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    x = 100.0 * rng_stream(9, "x").normal(size=(10, 8))
    out = extract_features(bb, x)
    assert np.all(np.isfinite(out))
    assert np.all(np.abs(out) <= 1.0)


def test_mlp_pretrain_converges_on_separable_data():
    # zero-noise classes are exactly separable; training must reach them
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(2, 4, 8, 2, noise=0.0, n_per_class=20, rng=rng,
                                  pretrain_classes=4)
    bb = pretrain_mlp_backbone(stream.pretrain, out_dim=16,
                               rng=rng_stream(1993, "bb"), hidden=32, epochs=40)
    feats = extract_features(bb, stream.pretrain.inputs)
    # refit a head on frozen features to measure separability retained
    from clens.classifiers import HeadHyper, fit_linear_head

    w, b, _ = fit_linear_head(feats, stream.pretrain.labels, 4,
                              HeadHyper(epochs=40), rng_stream(0, "head"))
    pred = np.argmax(feats @ w.T + b, axis=1)
    assert np.mean(pred == stream.pretrain.labels) >= 0.99


def test_mlp_extraction_batching_invariance():
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(2, 2, 8, 2, noise=0.1, n_per_class=10, rng=rng,
                                  pretrain_classes=2)
    bb = pretrain_mlp_backbone(stream.pretrain, 16, rng_stream(1, "bb"),
                               hidden=16, epochs=2)
    x = stream.pretrain.inputs
    full = extract_features(bb, x)
    ones = np.vstack([extract_features(bb, x[i : i + 1]) for i in range(x.shape[0])])
    assert np.array_equal(full, ones)


def test_checksum_frozen_through_extraction():
    bb = init_random_projection((8,), 16, rng_stream(1, "bb"))
    before = backbone_checksum(bb)
    extract_features(bb, rng_stream(9, "x").normal(size=(50, 8)))
    assert backbone_checksum(bb) == before


def test_save_load_round_trip_bit_exact(tmp_path):
    rng = rng_stream(1993, "syn")
    stream = gen_synthetic_stream(2, 2, 8, 2, 0.1, 10, rng, pretrain_classes=2)
    for bb in (
        init_random_projection((8,), 16, rng_stream(1, "bb")),
        pretrain_mlp_backbone(stream.pretrain, 16, rng_stream(1, "bb"),
                              hidden=16, epochs=2),
    ):
        path = tmp_path / f"{bb.kind}.npz"
        save_backbone(bb, path)
        loaded = load_backbone(path)
        assert loaded.kind == bb.kind
        assert loaded.input_shape == bb.input_shape
        assert loaded.out_dim == bb.out_dim
        assert backbone_checksum(loaded) == backbone_checksum(bb)
        x = rng_stream(9, "x").normal(size=(4, 8))
        assert np.array_equal(extract_features(loaded, x), extract_features(bb, x))
