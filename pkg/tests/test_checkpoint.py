"""
Tests for checkpoint and feature grid files.
"""

import dataclasses
import os

import numpy as np
import pytest

from thermask.checkpoint import (load_checkpoint, read_blocks, save_checkpoint, save_feature_grids,
                                 write_blocks)
from thermask.errors import CheckpointError
from thermask.model import ThermalMAE


@pytest.fixture
def saved(tmp_path, toy_config):
    model = ThermalMAE(toy_config, seed=4)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(model, path)
    return model, path


class TestBlocks:

    def test_blocks_read_back(self, tmp_path):
        arrays = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array(2.5), "c": np.zeros((0, 4))}
        path = str(tmp_path / "x.grid")
        write_blocks(path, "note=1", arrays)
        header, back = read_blocks(path)
        assert header == "note=1"
        for name, array in arrays.items():
            assert back[name].dtype == array.dtype
            np.testing.assert_array_equal(back[name], array)

    def test_header_must_be_one_line(self, tmp_path):
        with pytest.raises(CheckpointError):
            write_blocks(str(tmp_path / "x"), "a\nb", {})

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_blocks(str(tmp_path / "absent.ckpt"))


class TestCheckpoint:

    def test_starts_with_magic(self, saved):
        _, path = saved
        with open(path, "rb") as f:
            assert f.read(6) == b"DUGI1 "

    def test_resave_is_byte_identical(self, saved, tmp_path):
        _, path = saved
        again = str(tmp_path / "again.ckpt")
        save_checkpoint(load_checkpoint(path), again)
        with open(path, "rb") as a, open(again, "rb") as b:
            assert a.read() == b.read()

    def test_reload_restores_configuration_and_features(self, saved, blob64):
        model, path = saved
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        for level, grid in model.feature_pyramid(blob64).levels().items():
            np.testing.assert_array_equal(loaded.feature_pyramid(blob64).levels()[level], grid)

    def test_reload_keeps_variant_settings(self, tmp_path, toy_config):
        config = dataclasses.replace(toy_config, ddg_input_stage="stage3", afdm_enabled=False)
        path = str(tmp_path / "variant.ckpt")
        save_checkpoint(ThermalMAE(config), path)
        loaded = load_checkpoint(path)
        assert loaded.config.ddg_input_stage == "stage3" and not loaded.uses_afdm

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTIT x=1\n")
        with pytest.raises(CheckpointError, match="not a"):
            load_checkpoint(str(path))

    def test_truncated_file_raises(self, saved, tmp_path):
        _, path = saved
        with open(path, "rb") as f:
            data = f.read()
        cut = tmp_path / "cut.ckpt"
        cut.write_bytes(data[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(str(cut))

    def test_parameter_mismatch_raises(self, saved, tmp_path):
        _, path = saved
        header, arrays = read_blocks(path)
        arrays.pop("mask_token")
        arrays["extra"] = np.zeros(2)
        broken = str(tmp_path / "broken.ckpt")
        write_blocks(broken, header, arrays)
        with pytest.raises(CheckpointError, match="mismatch"):
            load_checkpoint(broken)

    def test_shape_mismatch_raises(self, saved, tmp_path):
        _, path = saved
        header, arrays = read_blocks(path)
        arrays["mask_token"] = np.zeros(3)
        broken = str(tmp_path / "broken.ckpt")
        write_blocks(broken, header, arrays)
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(broken)

    def test_bad_configuration_header_raises(self, saved, tmp_path):
        _, path = saved
        _, arrays = read_blocks(path)
        broken = str(tmp_path / "broken.ckpt")
        write_blocks(broken, "mask_lambda=2.0", arrays)
        with pytest.raises(CheckpointError, match="configuration"):
            load_checkpoint(broken)


def test_feature_grids_written_per_level(tmp_path, blob64, toy_config):
    pyramid = ThermalMAE(toy_config).feature_pyramid(blob64)
    paths = save_feature_grids(pyramid, str(tmp_path / "features"), source="blob64")
    assert [os.path.basename(p) for p in paths] == ["F1.grid", "F2.grid", "F3.grid", "F4.grid"]
    header, arrays = read_blocks(paths[3])
    assert header == "level=F4;source=blob64"
    np.testing.assert_array_equal(arrays["F4"], pyramid.f4)
