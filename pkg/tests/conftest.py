import pytest
import torch

from m2sseg import build_model, model_config_for_preset

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture(scope="session")
def toy_cfg():
    return model_config_for_preset("toy")


@pytest.fixture(scope="session")
def full_cfg():
    return model_config_for_preset("full")


@pytest.fixture(scope="session")
def toy_model():
    """Shared read-only toy model; tests that mutate parameters build their own."""
    model = build_model("toy", seed=7)
    model.eval()
    return model


@pytest.fixture(scope="session")
def full_model():
    """Shared read-only full-preset model (expensive to build)."""
    model = build_model("full", seed=7)
    model.eval()
    return model
