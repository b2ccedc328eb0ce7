"""
Shared fixtures for the thermask test suite.
"""

import numpy as np
import pytest

from thermask.imaging import GrayImage
from thermask.synth import blob_image, make_curation_corpus, make_pretrain_corpus
from thermask.training import TrainConfig, toy_model_config


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return np.random.default_rng(1234)


@pytest.fixture
def blob32(rng):
    return GrayImage(blob_image(32, 32, rng), source_id="blob32")


@pytest.fixture
def blob64(rng):
    return GrayImage(blob_image(64, 64, rng), source_id="blob64")


@pytest.fixture
def toy_config():
    return toy_model_config(32)


@pytest.fixture
def pretrain_corpus(tmp_path):
    """Eight 64x64 synthetic images."""
    out = tmp_path / "corpus"
    make_pretrain_corpus(str(out), n=8, size=64, seed=3)
    return out


@pytest.fixture
def curation_corpus(tmp_path):
    """50 images in scenes with planted near-duplicates and zero borders."""
    out = tmp_path / "curation"
    planted = make_curation_corpus(str(out), n=50, seed=5)
    return out, planted


@pytest.fixture
def smoke_train_config(pretrain_corpus):
    """A few fast steps on the toy architecture."""
    return TrainConfig(corpus=str(pretrain_corpus), base_lr=2e-3, batch_size=4, epochs=2,
                       warmup_epochs=1, crop_size=32, mask_lambda=0.5, checkpoint_every=1,
                       workers=2, smooth_window=2)
