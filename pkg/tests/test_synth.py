"""
Tests for the synthetic corpus generators.
"""

import os

import numpy as np
import pytest

from thermask.imaging import crop_black_borders, load_gray
from thermask.synth import FAMILY_SIZE, KINDS, make_curation_corpus, make_pretrain_corpus, synth_image


@pytest.mark.parametrize("kind", KINDS)
def test_images_are_seeded(kind):
    a = synth_image(kind, 24, 40, np.random.default_rng(9))
    b = synth_image(kind, 24, 40, np.random.default_rng(9))
    assert a.shape == (24, 40) and a.dtype == np.uint8
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", KINDS)
def test_low_bound_keeps_pixels_nonzero(kind):
    assert synth_image(kind, 32, 32, np.random.default_rng(0), low=1).min() >= 1


def test_unknown_kind_raises():
    with pytest.raises(ValueError):
        synth_image("stripes", 8, 8, np.random.default_rng(0))


def test_pretrain_corpus_is_reproducible(tmp_path):
    first = make_pretrain_corpus(str(tmp_path / "a"), n=5, size=32, seed=2)
    second = make_pretrain_corpus(str(tmp_path / "b"), n=5, size=32, seed=2)
    assert len(first) == 5
    for p, q in zip(first, second):
        with open(p, "rb") as f, open(q, "rb") as g:
            assert f.read() == g.read()
    lines = (tmp_path / "a" / "synth_manifest.tsv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5 and all(line.split("\t")[1] in KINDS for line in lines)


def test_curation_plants(curation_corpus):
    corpus, planted = curation_corpus
    assert len(planted) == 50
    rows = (corpus / "plants.tsv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 50

    families = {}
    for plant in planted:
        families.setdefault(plant.family, []).append(plant)
    sizes = sorted(len(members) for members in families.values())
    assert set(sizes) <= {1, FAMILY_SIZE}
    for members in families.values():
        assert not members[0].duplicate and all(m.duplicate for m in members[1:])
        assert len({m.scene for m in members}) == 1

    for plant in planted:
        image = load_gray(plant.path)
        top, left, bottom, right = plant.border
        assert (image.height, image.width) == (plant.height + top + bottom, plant.width + left + right)
        cropped = crop_black_borders(image)
        assert (cropped.height, cropped.width) == (plant.height, plant.width)
        assert os.path.dirname(plant.path).endswith(plant.scene)
