import pytest

from cose.model import MicroModel, TrainConfig, train
from cose.toydata import generate_toy_dataset


@pytest.fixture(scope="session")
def toy_data():
    return generate_toy_dataset(0, 100)


@pytest.fixture(scope="session")
def trained_bundle(toy_data):
    """Default training run shared across the suite (seed 0, 30 epochs)."""
    model = MicroModel(seed=0)
    checkpoints = train(model, toy_data, cfg=TrainConfig())
    return model, checkpoints
