"""Checkpoint container: bitwise round trips, kind dispatch, error paths."""

import json

import numpy as np
import pytest

from capstab.capsnet import CapsNetConfig, CapsNetModel
from capstab.checkpoint import is_fresh_init, load_model, save_model
from capstab.cnn import CnnConfig, CnnModel
from capstab.errors import DataError


def small_caps() -> CapsNetModel:
    cfg = CapsNetConfig(
        signal_len=16,
        conv1_channels=3,
        conv1_kernel=5,
        conv2_channels=2,
        conv2_kernel=5,
        conv2_stride=2,
        primary_dim=2,
        class_dim=4,
        decoder_hidden=(6, 7),
    )
    return CapsNetModel(cfg, seed=11)


def small_cnn() -> CnnModel:
    cfg = CnnConfig(signal_len=16, conv1_channels=3, conv1_kernel=5, conv2_channels=2,
                    conv2_kernel=5, conv2_stride=2)
    return CnnModel(cfg, seed=12)


class TestRoundTrip:
    @pytest.mark.parametrize("make", [small_caps, small_cnn])
    def test_bitwise_round_trip(self, make, tmp_path):
        model = make()
        # make parameters arbitrary, incl. awkward floats
        rng = np.random.default_rng(0)
        model.set_flat_params(rng.normal(scale=1e3, size=model.flat_params().size))
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        assert back.kind == model.kind
        assert back.config == model.config
        assert back.seed == model.seed
        for (name, arr), (_, arr2) in zip(model.param_items(), back.param_items()):
            assert np.array_equal(arr, arr2), name

    def test_save_is_deterministic(self, tmp_path):
        model = small_caps()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestErrors:
    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(DataError, match="not a"):
            load_model(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "v9.json"
        path.write_text(json.dumps({"format": "capstab-checkpoint", "version": 9}))
        with pytest.raises(DataError, match="version"):
            load_model(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "kind.json"
        path.write_text(
            json.dumps(
                {"format": "capstab-checkpoint", "version": 1, "kind": "mlp",
                 "seed": 0, "config": {}, "params": {}}
            )
        )
        with pytest.raises(DataError, match="kind"):
            load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "trunc.json"
        path.write_text("{\"format\": \"capstab-checkpoint\"")
        with pytest.raises(DataError):
            load_model(path)


class TestFreshInitDetection:
    def test_untrained_model_detected(self):
        assert is_fresh_init(small_caps())
        assert is_fresh_init(small_cnn())

    def test_trained_model_not_flagged(self):
        model = small_cnn()
        model.head.bias[0] += 0.5
        assert not is_fresh_init(model)

    def test_detection_survives_round_trip(self, tmp_path):
        model = small_caps()
        path = tmp_path / "fresh.json"
        save_model(model, path)
        assert is_fresh_init(load_model(path))
        model.vote_weights[0, 0, 0, 0] += 1.0
        save_model(model, path)
        assert not is_fresh_init(load_model(path))
