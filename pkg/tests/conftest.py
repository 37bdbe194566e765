"""Shared fixtures: toy datasets and checkpoints reused across test modules."""

import numpy as np
import pytest

from sketch3d.checkpoint import save_checkpoint
from sketch3d.networks import Generator, GeneratorConfig
from sketch3d.pipeline import generate_synthetic_dataset, toy_train_config, train


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data-small")
    return generate_synthetic_dataset(root, 3, 4, resolution=64, seed=7)


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory, small_dataset):
    """A very short real training run (toy preset) for interface-level tests."""
    out = tmp_path_factory.mktemp("run-toy")
    cfg = toy_train_config(steps=3, batch_size=1, log_every=1, seed=9)
    return train(cfg, small_dataset, out)


@pytest.fixture(scope="session")
def default_checkpoint(tmp_path_factory):
    """Untrained default-architecture generator (642-vertex template) saved to
    a checkpoint archive; used by contract tests that pin default topology."""
    gen = Generator(GeneratorConfig(seed=42))
    path = tmp_path_factory.mktemp("ckpt-default") / "default.sk3d"
    save_checkpoint(path, {
        "kind": "sketch3d-train",
        "step": 0,
        "generator": gen.config.to_dict(),
    }, {f"gen/{k}": v.data for k, v in gen.params.items()})
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
