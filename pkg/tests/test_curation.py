"""
Tests for corpus curation: dedup features, the anchor scan and resolution statistics.
"""

import csv
import os
from collections import Counter, defaultdict

import numpy as np
import pytest

from thermask.curation import (CorpusEntry, ResolutionStats, cosine_similarity, curate, dedup_feature,
                               dedup_scan, read_manifest, resolution_report)
from thermask.errors import EmptyCorpusError, ImageReadError, PreconditionError
from thermask.imaging import GrayImage, crop_black_borders, load_gray, save_gray
from thermask.synth import KINDS, synth_image


def unit(v):
    return v / np.linalg.norm(v)


def planted_group(similarities, rng, dim=16, scene="s"):
    """An anchor-first group whose members have the given cosine similarity to the anchor."""
    anchor = unit(rng.normal(size=dim))
    entries = [CorpusEntry(path=f"{scene}/00.pgm", scene_group=scene, feature=anchor)]
    for i, target in enumerate(similarities, start=1):
        noise = rng.normal(size=dim)
        orthogonal = unit(noise - noise.dot(anchor) * anchor)
        feature = target * anchor + np.sqrt(1.0 - target * target) * orthogonal
        entries.append(CorpusEntry(path=f"{scene}/{i:02d}.pgm", scene_group=scene, feature=unit(feature)))
    return entries


def with_pixel_noise(pixels, rng, fraction=0.01):
    """Copy with `fraction` of the pixels replaced by random non-zero values."""
    noisy = pixels.copy()
    count = int(round(fraction * noisy.size))
    flat = rng.choice(noisy.size, size=count, replace=False)
    noisy.reshape(-1)[flat] = rng.integers(1, 256, size=count)
    return noisy


class TestDedupFeature:

    def test_unit_norm_and_deterministic(self, blob64):
        a, b = dedup_feature(blob64), dedup_feature(blob64)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(a, b)

    def test_identical_images_have_similarity_one(self, blob64):
        copy = GrayImage(blob64.pixels.copy())
        assert cosine_similarity(dedup_feature(blob64), dedup_feature(copy)) == 1.0

    def test_constant_image_has_unit_feature(self):
        feature = dedup_feature(GrayImage(np.full((8, 8), 90, dtype=np.uint8)))
        assert np.linalg.norm(feature) == pytest.approx(1.0)

    def test_inverted_image_is_not_identical(self, blob64):
        inverted = GrayImage(255 - blob64.pixels)
        assert cosine_similarity(dedup_feature(blob64), dedup_feature(inverted)) < 1.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_near_duplicates_score_above_098(self, kind):
        rng = np.random.default_rng(31)
        scores = []
        for _ in range(20):
            base = synth_image(kind, 64, 64, rng, low=1)
            scores.append(cosine_similarity(dedup_feature(GrayImage(base)),
                                            dedup_feature(GrayImage(with_pixel_noise(base, rng)))))
        assert min(scores) > 0.98

    def test_flat_thumbnail_near_duplicate(self, rng):
        # period 4 averages out in every 8x8 thumbnail cell
        rows, cols = np.mgrid[0:64, 0:64]
        board = np.where((rows // 4 + cols // 4) % 2 == 1, 200.0, 40.0) + rng.normal(0, 4, size=(64, 64))
        base = np.clip(np.rint(board), 1, 255).astype(np.uint8)
        similarity = cosine_similarity(dedup_feature(GrayImage(base)),
                                       dedup_feature(GrayImage(with_pixel_noise(base, rng))))
        assert similarity > 0.98


class TestDedupScan:

    def test_excludes_exactly_the_candidates_above_threshold(self, rng):
        similarities = [0.99, 0.9, 0.84, 0.5, 0.86, 0.2, 0.95, 0.1, 0.7]
        entries = planted_group(similarities, rng)
        result = dedup_scan(entries, threshold=0.85, seed=11)
        anchor = next(e for e in result if e.is_anchor)
        for entry in result:
            if entry is anchor:
                assert entry.kept
                continue
            expected = float(np.dot(anchor.feature, entry.feature)) > 0.85
            assert entry.kept == (not expected)
            assert entry.max_sim == pytest.approx(float(np.dot(anchor.feature, entry.feature)))

    def test_exactly_one_anchor_per_scene_and_anchor_kept(self, rng):
        entries = planted_group([0.99] * 5, rng, scene="a") + planted_group([0.3] * 3, rng, scene="b")
        result = dedup_scan(entries, seed=4)
        anchors = Counter(e.scene_group for e in result if e.is_anchor)
        assert anchors == {"a": 1, "b": 1}
        assert all(e.kept for e in result if e.is_anchor)
        assert sum(e.kept for e in result if e.scene_group == "a") == 1
        assert all(e.kept for e in result if e.scene_group == "b")

    def test_threshold_ties_are_kept(self):
        anchor = np.array([1.0, 0.0])
        entries = [CorpusEntry(path="a", scene_group="s", feature=anchor),
                   CorpusEntry(path="b", scene_group="s", feature=anchor.copy())]
        result = dedup_scan(entries, threshold=1.0, seed=0)
        assert all(e.kept for e in result)

    def test_anchor_choice_is_seeded(self, rng):
        entries = planted_group([0.1] * 8, rng)
        first = [e.path for e in dedup_scan(entries, seed=9) if e.is_anchor]
        for e in entries:
            e.is_anchor = False
        second = [e.path for e in dedup_scan(entries, seed=9) if e.is_anchor]
        assert first == second

    def test_rejects_non_unit_features(self):
        entries = [CorpusEntry(path="a", scene_group="s", feature=np.array([2.0, 0.0]))]
        with pytest.raises(PreconditionError):
            dedup_scan(entries)

    @pytest.mark.parametrize("threshold", [0.0, 1.5])
    def test_rejects_bad_threshold(self, threshold):
        with pytest.raises(PreconditionError):
            dedup_scan([], threshold=threshold)


class TestResolutionStats:

    def test_rows_sorted_by_count_then_size(self):
        stats = ResolutionStats()
        for w, h in [(64, 48), (32, 32), (64, 48), (16, 16), (32, 32), (64, 48)]:
            stats.add(w, h)
        assert stats.rows() == [(64, 48, 3), (32, 32, 2), (16, 16, 1)]
        assert stats.top(2) == [(64, 48, 3), (32, 32, 2)]
        assert stats.total == 6

    def test_report_reads_headers_and_skips_unreadable(self, tmp_path, rng):
        good = str(tmp_path / "a.pgm")
        save_gray(GrayImage(rng.integers(0, 256, size=(12, 20), dtype=np.uint8)), good)
        bad = tmp_path / "b.pgm"
        bad.write_bytes(b"garbage")
        stats = resolution_report([good, str(bad)], workers=2)
        assert stats.rows() == [(20, 12, 1)]
        assert stats.skipped == 1


class TestCurate:

    def test_generated_corpus_matches_plant_list(self, curation_corpus, tmp_path):
        corpus, planted = curation_corpus
        manifest = str(tmp_path / "manifest.tsv")
        stats_csv = str(tmp_path / "stats.csv")
        cropped_dir = str(tmp_path / "cropped")
        entries, stats = curate(str(corpus), manifest, stats_csv=stats_csv, seed=2,
                                cropped_dir=cropped_dir, workers=2)

        by_path = {e.path: e for e in entries}
        assert set(by_path) == {p.path for p in planted}
        families = defaultdict(list)
        for plant in planted:
            families[plant.scene].append(plant)
        for scene, plants in families.items():
            kept = [p for p in plants if by_path[p.path].kept]
            assert len(kept) == 1, scene
            assert by_path[kept[0].path].is_anchor

        expected = Counter((p.width, p.height) for plants in families.values() for p in plants[:1])
        with open(stats_csv, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert {(int(r["width"]), int(r["height"])): int(r["count"]) for r in rows} == dict(expected)
        assert stats.total == len(families)

        for plant in planted:
            cropped = load_gray(os.path.join(cropped_dir, os.path.relpath(plant.path, str(corpus))))
            assert (cropped.width, cropped.height) == (plant.width, plant.height)
            np.testing.assert_array_equal(crop_black_borders(cropped).pixels, cropped.pixels)

    def test_manifest_round_trips(self, curation_corpus, tmp_path):
        corpus, planted = curation_corpus
        manifest = str(tmp_path / "manifest.tsv")
        entries, _ = curate(str(corpus), manifest, seed=2)
        back = read_manifest(manifest)
        assert [(e.path, e.scene_group, e.kept) for e in back] == \
            [(e.path, e.scene_group, e.kept) for e in entries]

    def test_scene_manifest_overrides_directories(self, tmp_path, rng):
        corpus = tmp_path / "flat"
        base = rng.integers(1, 256, size=(16, 16), dtype=np.uint8)
        for name in ("x.pgm", "y.pgm"):
            save_gray(GrayImage(base), str(corpus / name))
        scenes = tmp_path / "scenes.tsv"
        scenes.write_text(f"{corpus / 'x.pgm'}\tone\n{corpus / 'y.pgm'}\ttwo\n", encoding="utf-8")
        entries, _ = curate(str(corpus), str(tmp_path / "m.tsv"), scenes_manifest=str(scenes))
        assert sorted(e.scene_group for e in entries) == ["one", "two"]
        assert all(e.kept for e in entries)

    def test_missing_input_directory_raises(self, tmp_path):
        with pytest.raises(ImageReadError):
            curate(str(tmp_path / "absent"), str(tmp_path / "m.tsv"))

    def test_empty_directory_raises(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(EmptyCorpusError):
            curate(str(tmp_path / "empty"), str(tmp_path / "m.tsv"))
