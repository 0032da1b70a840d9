import numpy as np
import pytest
import torch

from arlatent import synth
from arlatent.models import ModelConfig

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def small_dataset() -> synth.DatasetArchive:
    """120-sample, 32px dataset shared by trainer and CLI tests."""
    return synth.generate_dataset(
        120, seed=3, canvas=(32, 32), variation=synth.scaled_variation((32, 32))
    )


@pytest.fixture()
def tiny_model_config() -> ModelConfig:
    return ModelConfig(latent_dim=8, image_size=32, base_width=8, num_regularized_dims=6)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
