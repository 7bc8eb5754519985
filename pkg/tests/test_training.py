import dataclasses

import pytest
import torch
import torch.nn as nn

from m2sseg import (ConfigurationError, TrainConfig, TrainingDiverged, build_model,
                    generate_synthetic, load_checkpoint, train)
from m2sseg.model import ModelOutput
from m2sseg.training import LOG_COLUMNS, batch_tensors, write_loss_log


@pytest.fixture(scope="module")
def tiny_samples():
    return generate_synthetic(4, size=64, kind="mixed", seed=7)


def _tiny_cfg(**overrides):
    base = dict(initial_lr=1e-3, final_lr=1e-6, batch_size=2, epochs=2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def test_zero_lr_leaves_parameters_bitwise_unchanged(tiny_samples):
    model = build_model("toy", seed=0)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    # initial_lr must exceed final_lr, so pin the schedule at zero directly
    cfg = _tiny_cfg(epochs=1, batch_size=4)
    import m2sseg.training as training_module
    original = training_module.lr_at
    training_module.lr_at = lambda step, total, cfg: 0.0
    try:
        train(model, tiny_samples[:4], cfg)
    finally:
        training_module.lr_at = original
    for name, p in model.named_parameters():
        assert torch.equal(p, before[name]), name


def test_empty_dataset_rejected():
    with pytest.raises(ConfigurationError):
        train(build_model("toy", seed=0), [], _tiny_cfg())


def test_history_and_log_outputs(tmp_path, tiny_samples):
    model = build_model("toy", seed=1)
    result = train(model, tiny_samples, _tiny_cfg(), out_dir=tmp_path)
    assert len(result.history) == 2
    assert result.final_checkpoint.is_file()
    assert result.best_checkpoint.is_file()
    text = result.log_path.read_text().strip().splitlines()
    assert text[0] == ",".join(LOG_COLUMNS)
    assert len(text) == 3
    first = text[1].split(",")
    assert int(first[0]) == 1
    assert float(first[3]) == pytest.approx(float(first[1]) + float(first[2]), rel=1e-12)
    state = load_checkpoint(result.final_checkpoint)
    assert set(state) == set(model.state_dict())


def test_two_same_seed_runs_identical(tmp_path, tiny_samples):
    paths = []
    for run in ("a", "b"):
        model = build_model("toy", seed=5)
        result = train(model, tiny_samples, _tiny_cfg(epochs=3), out_dir=tmp_path / run)
        paths.append(result)
    log_a = paths[0].log_path.read_bytes()
    log_b = paths[1].log_path.read_bytes()
    assert log_a == log_b
    assert paths[0].final_checkpoint.read_bytes() == paths[1].final_checkpoint.read_bytes()


def test_loss_decreases_on_short_run(tiny_samples):
    model = build_model("toy", seed=2)
    result = train(model, tiny_samples, _tiny_cfg(initial_lr=3e-3, epochs=12))
    assert result.history[-1].total < result.history[0].total


class _BrokenModel(nn.Module):
    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(1))

    def forward(self, images):
        b, _, h, w = images.shape
        mask = torch.full((b, h, w), float("nan")) * self.weight
        prior = torch.full((b, h // 32, w // 32), 0.5) * self.weight
        return ModelOutput(mask=mask, prior=prior, verdicts=[])


def test_nan_abort_names_first_bad_tensor(tiny_samples):
    with pytest.raises(TrainingDiverged, match="prediction_mask"):
        train(_BrokenModel(), tiny_samples, _tiny_cfg(epochs=1))


def test_batch_tensors_shapes(tiny_samples):
    images, masks = batch_tensors(tiny_samples)
    assert images.shape == (4, 3, 64, 64)
    assert masks.shape == (4, 64, 64)
    assert images.dtype == torch.float32
    assert set(masks.unique().tolist()) <= {0.0, 1.0}


def test_write_loss_log_round_trip(tmp_path):
    from m2sseg.training import EpochStats
    rows = [EpochStats(epoch=1, main_bce=0.5, prior_bce=0.25, total=0.75, lr=1e-4, val_dsc=0.0)]
    path = write_loss_log(tmp_path / "log.csv", rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,main_bce,prior_bce,total,lr"
    assert lines[1] == "1,0.5,0.25,0.75,0.0001"
