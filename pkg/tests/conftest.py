"""Shared fixtures: a small IDX image dataset on disk, config helpers."""

from __future__ import annotations

import numpy as np
import pytest

from clens.data import gen_pattern_images, write_idx
from clens.numeric import rng_stream


@pytest.fixture(scope="session")
def idx_dataset(tmp_path_factory):
    """A 15-class pattern-image dataset written as IDX file pairs.

    Even rows go to train, odd rows to test, so both splits cover every
    class evenly. Returns a dict of the four file paths.
    """
    root = tmp_path_factory.mktemp("idx")
    rng = rng_stream(42, "dataset")
    images, labels = gen_pattern_images(
        n_classes=15, size=16, n_per_class=60, rng=rng, noise=0.10, phase_jitter=0.5
    )
    paths = {
        "train_images": root / "train-images-idx3",
        "train_labels": root / "train-labels-idx1",
        "test_images": root / "test-images-idx3",
        "test_labels": root / "test-labels-idx1",
    }
    write_idx(images[::2], labels[::2], paths["train_images"], paths["train_labels"])
    write_idx(images[1::2], labels[1::2], paths["test_images"], paths["test_labels"])
    return {k: str(v) for k, v in paths.items()}


def idx_config_lines(paths: dict[str, str]) -> str:
    return "\n".join(
        [
            "stream.kind = idx",
            f"stream.train_images = {paths['train_images']}",
            f"stream.train_labels = {paths['train_labels']}",
            f"stream.test_images = {paths['test_images']}",
            f"stream.test_labels = {paths['test_labels']}",
        ]
    )
