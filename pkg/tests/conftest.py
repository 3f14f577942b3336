"""
Pytest configuration for fracture-distill package tests.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from fracture_distill.config import ExperimentConfig
from fracture_distill.data.synthetic import DatasetSpec, generate_dataset
from fracture_distill.model import ArchitectureSpec
from fracture_distill.trainer import TrainConfig


def make_tiny_spec() -> DatasetSpec:
    return DatasetSpec(
        image_size=32,
        n_region=4,
        n_positive=6,
        n_negative=10,
        n_val_positive=3,
        n_val_negative=3,
        n_test_positive=3,
        n_test_negative=3,
        seed=7,
    )


def make_tiny_arch() -> ArchitectureSpec:
    return ArchitectureSpec(channels=(2, 3), fpn_width=3, nonlinearity="tanh")


def make_tiny_train_config() -> TrainConfig:
    return TrainConfig(
        learning_rate=1e-3,
        batch_size=4,
        epochs_pretrain=2,
        epochs_distill=2,
        architecture=make_tiny_arch(),
        steps_per_epoch=3,
        seed=3,
    )


def make_tiny_experiment() -> ExperimentConfig:
    return ExperimentConfig(dataset=make_tiny_spec(), train=make_tiny_train_config(), seeds=(7,))


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test outputs."""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    # Cleanup after test
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def rng():
    """Seeded generator for randomized property checks."""
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_spec():
    """Small dataset: 32x32 images, a handful of samples per set."""
    return make_tiny_spec()


@pytest.fixture
def tiny_dataset(tiny_spec):
    """Generated tiny dataset."""
    return generate_dataset(tiny_spec, workers=1)


@pytest.fixture
def tiny_arch():
    """Gradient-check sized network (a few hundred parameters)."""
    return make_tiny_arch()


@pytest.fixture
def tiny_train_config():
    """Two short epochs per stage on the tiny network."""
    return make_tiny_train_config()


@pytest.fixture
def tiny_experiment():
    """Single-seed experiment on the tiny dataset and network."""
    return make_tiny_experiment()


@pytest.fixture(scope="session")
def finished_run(tmp_path_factory):
    """One completed tiny run, shared by the writer and report tests."""
    from fracture_distill.experiment import run_training

    run_dir = tmp_path_factory.mktemp("runs") / "seed-7"
    return run_training(make_tiny_experiment().for_seed(7), run_dir)
