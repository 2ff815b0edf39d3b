import numpy as np
import pytest

from flowprune.checkpoint import load_checkpoint, save_checkpoint
from flowprune.datasets import GaussianMixture
from flowprune.errors import ConfigError
from flowprune.interpolant import TimeSchedule
from flowprune.model import BackboneConfig, VelocityModel
from flowprune.training import train, validation_loss


def make_model(seed=0):
    cfg = BackboneConfig(data_dim=2, hidden_dim=16, n_blocks=3, n_heads=2,
                         n_classes=2, seed=seed, n_tokens=2)
    return VelocityModel(cfg)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = make_model(seed=1)
        train(model, model.full_mask(), GaussianMixture(n_classes=2), steps=5,
              lr=0.02, rng=np.random.default_rng(0), batch_size=8)
        mask = model.full_mask().drop([1])
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, model, mask)
        loaded, loaded_mask = load_checkpoint(path)
        assert loaded.config == model.config
        assert loaded_mask == mask
        for name, t in model.params.items():
            assert np.array_equal(loaded.params[name].data, t.data), name

    def test_round_trip_preserves_loss(self, tmp_path):
        model = make_model(seed=2)
        ds = GaussianMixture(n_classes=2)
        sched = TimeSchedule()
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, model, model.full_mask())
        loaded, mask = load_checkpoint(path)
        want = validation_loss(model, model.full_mask(), ds, sched, seed=3, n=64)
        got = validation_loss(loaded, mask, ds, sched, seed=3, n=64)
        assert got == want

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_checkpoint(tmp_path / "nope.npz")

    def test_garbage_file_is_config_error(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ConfigError):
            load_checkpoint(path)
