"""Pytest configuration and shared fixtures.

This module provides fixtures used across test modules for testing tnml:
small MPS models, encoded batches, toy datasets and config files.
"""

import gzip
import os
import struct
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from tnml.data_pipeline import EncodedDataset, LabeledDataset
from tnml.feature_maps import LocalFeatureMap, encode_batch
from tnml.logging_config import reset_global_logger
from tnml.models import FeatureMapKind
from tnml.mps_model import MpsClassifier, init_random


@pytest.fixture(autouse=True)
def reset_logger() -> Generator[None, None, None]:
    """Leave the global logger unconfigured between tests."""
    yield
    reset_global_logger()


@pytest.fixture
def rng() -> np.random.Generator:
    """Create a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def half_angle() -> LocalFeatureMap:
    """Create the default two-component map."""
    return LocalFeatureMap(kind=FeatureMapKind.HALF_ANGLE, d=2)


@pytest.fixture
def small_model() -> MpsClassifier:
    """Create a random 5-site model with 3 labels."""
    return init_random(n_sites=5, d=2, n_labels=3, m0=4, seed=7)


@pytest.fixture
def small_vectors(rng: np.random.Generator, half_angle: LocalFeatureMap) -> np.ndarray:
    """Create an encoded batch of 12 inputs matching `small_model`."""
    return encode_batch(rng.uniform(0.0, 1.0, size=(12, 5)), half_angle)


@pytest.fixture
def small_dataset(
    rng: np.random.Generator, half_angle: LocalFeatureMap
) -> EncodedDataset:
    """Create an encoded 40-example, 5-pixel, 3-label dataset."""
    inputs = rng.uniform(0.0, 1.0, size=(40, 5))
    labels = rng.integers(0, 3, size=40)
    return EncodedDataset.from_inputs(inputs, labels, half_angle, 3)


@pytest.fixture
def separable_inputs() -> LabeledDataset:
    """Create 50 two-pixel points separated by the first pixel."""
    gen = np.random.default_rng(5)
    x1 = np.concatenate([gen.uniform(0.0, 0.3, 25), gen.uniform(0.7, 1.0, 25)])
    x2 = gen.uniform(0.0, 1.0, 50)
    labels = np.repeat(np.arange(2, dtype=np.int64), 25)
    return LabeledDataset(inputs=np.stack([x1, x2], axis=1), labels=labels, n_labels=2)


def idx_bytes(array: np.ndarray, magic: int) -> bytes:
    """Encode a uint8 array in the IDX format."""
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", n) for n in array.shape)
    return header + array.astype(np.uint8).tobytes()


@pytest.fixture
def mnist_dir(tmp_path: Path) -> Path:
    """Create a tiny MNIST-shaped directory: 30 train and 20 test images."""
    data_dir = tmp_path / "mnist"
    data_dir.mkdir()
    gen = np.random.default_rng(3)
    for stem, count in (("train", 30), ("t10k", 20)):
        labels = np.arange(count) % 10
        images = gen.integers(0, 256, size=(count, 28, 28))
        (data_dir / f"{stem}-images-idx3-ubyte").write_bytes(idx_bytes(images, 2051))
        with gzip.open(data_dir / f"{stem}-labels-idx1-ubyte.gz", "wb") as handle:
            handle.write(idx_bytes(labels, 2049))
    return data_dir


@pytest.fixture
def temp_config_dir(tmp_path: Path) -> Generator[Path, None, None]:
    """Create a temporary config directory."""
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    yield config_dir


@pytest.fixture
def sample_config_yaml(temp_config_dir: Path) -> Path:
    """Create a config.yaml with per-command sections."""
    config_file = temp_config_dir / "config.yaml"
    config_file.write_text(
        """
mnist_train:
  m: 20
  sweeps: 4
  data_dir: ${TNML_TEST_DATA}

toy:
  task: spiral
  d: 10
  grid: 32

generative:
  sizes: [20, 100]
  trials: 2
"""
    )
    return config_file


@pytest.fixture
def clean_env() -> Generator[None, None, None]:
    """Remove TNML_* variables and restore the environment afterwards."""
    original_env = os.environ.copy()
    for key in list(os.environ):
        if key.startswith("TNML_"):
            del os.environ[key]
    yield
    os.environ.clear()
    os.environ.update(original_env)
