"""
Corpus curation: zero-border cropping, per-scene near-duplicate removal against a
random anchor, and resolution statistics.
"""

import csv
import os
import zlib
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from .config import DEDUP_THRESHOLD, IMAGE_EXTENSIONS, RESOLUTION_TOP_K, WORKERS, ZERO_THRESHOLD
from .errors import EmptyCorpusError, ImageReadError, PreconditionError, ThermaskError
from .imaging import crop_black_borders, load_gray, save_gray

console = Console(stderr=True)

HISTOGRAM_BINS = 64
THUMBNAIL_SIDE = 8


@dataclass
class CorpusEntry:
    """One image of the corpus as seen by deduplication."""

    path: str
    scene_group: str
    feature: np.ndarray = None
    kept: bool = True
    max_sim: float = 0.0
    is_anchor: bool = False
    width: int = 0
    height: int = 0


@dataclass
class ResolutionStats:
    """Histogram of (width, height) over scanned images."""

    counts: Counter = field(default_factory=Counter)
    scanned: int = 0
    skipped: int = 0

    @property
    def total(self):
        return sum(self.counts.values())

    def add(self, width, height):
        self.counts[(width, height)] += 1
        self.scanned += 1

    def rows(self):
        """(width, height, count) sorted by count descending, then width, height."""
        return sorted(((w, h, c) for (w, h), c in self.counts.items()), key=lambda r: (-r[2], r[0], r[1]))

    def top(self, k=RESOLUTION_TOP_K):
        return self.rows()[:k]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["width", "height", "count"])
            writer.writerows(self.rows())


def _unit(vector):
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 0 else vector


def dedup_feature(img):
    """
    Deterministic descriptor for near-duplicate detection.

    A 64-bin intensity histogram (fractions of the pixel count) and a zero-mean
    8x8 box-downsampled thumbnail (per-cell RMS scale), concatenated and
    L2-normalized once. Neither part is rescaled on its own, so a nearly flat
    thumbnail stays small next to the histogram.

    Args:
        img (GrayImage): Non-empty image

    Returns:
        numpy.ndarray: Unit-norm float64 vector of length 128
    """
    levels = img.levels
    bins = np.minimum(img.pixels.astype(np.int64) * HISTOGRAM_BINS // levels, HISTOGRAM_BINS - 1)
    histogram = np.bincount(bins.ravel(), minlength=HISTOGRAM_BINS).astype(np.float64)
    histogram /= img.pixels.size

    thumb_image = Image.fromarray(img.normalized(np.float32)).resize(
        (THUMBNAIL_SIDE, THUMBNAIL_SIDE), Image.Resampling.BOX)
    thumbnail = np.asarray(thumb_image, dtype=np.float64).ravel()
    thumbnail = (thumbnail - thumbnail.mean()) / THUMBNAIL_SIDE

    # The histogram part is never zero, so the norm is always positive
    return _unit(np.concatenate([histogram, thumbnail]))


def cosine_similarity(a, b):
    """Cosine similarity of two unit vectors; identical vectors give exactly 1.0."""
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b))


def scene_rng(seed, scene):
    """Generator for one scene, independent of the order scenes are processed in."""
    return np.random.default_rng([seed, zlib.crc32(scene.encode("utf-8"))])


def choose_anchor(group, seed):
    """
    Index (into `group`) of the scene's anchor: the first entry after a seeded shuffle.
    """
    order = scene_rng(seed, group[0].scene_group).permutation(len(group))
    return int(order[0])


def _dedup_group(group, threshold, seed):
    for entry in group:
        if entry.feature is None:
            raise PreconditionError(f"{entry.path} has no dedup feature")
        norm = float(np.linalg.norm(entry.feature))
        if abs(norm - 1.0) > 1e-9:
            raise PreconditionError(f"{entry.path} feature is not unit-norm (|f| = {norm:.12f})")
    anchor_index = choose_anchor(group, seed)
    anchor = group[anchor_index]
    anchor.is_anchor = True
    anchor.kept = True
    anchor.max_sim = 1.0
    for i, entry in enumerate(group):
        if i == anchor_index:
            continue
        similarity = cosine_similarity(anchor.feature, entry.feature)
        entry.max_sim = similarity
        # "above" the threshold: ties are kept
        entry.kept = not similarity > threshold
    return group


def dedup_scan(entries, threshold=DEDUP_THRESHOLD, seed=0, workers=WORKERS):
    """
    Exclude, per scene, every candidate too similar to a randomly chosen anchor.

    Args:
        entries (list): CorpusEntry objects with unit-norm features
        threshold (float): Cosine similarity above which a candidate is excluded, in (0, 1]
        seed (int): Anchor-selection seed
        workers (int): Threads used across scene groups

    Returns:
        list: The same entries, kept flags set, ordered by path
    """
    if not 0 < threshold <= 1:
        raise PreconditionError(f"dedup threshold must lie in (0, 1], got {threshold}")
    groups = defaultdict(list)
    for entry in sorted(entries, key=lambda e: e.path):
        groups[entry.scene_group].append(entry)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(lambda g: _dedup_group(g, threshold, seed), groups.values()))

    return sorted(entries, key=lambda e: e.path)


def _image_size(path):
    with Image.open(path) as image:
        return image.size


def resolution_report(paths, workers=WORKERS):
    """
    Count image resolutions without decoding pixel data.

    Unreadable files are skipped with a warning and counted in `skipped`.

    Args:
        paths (list): Image file paths

    Returns:
        ResolutionStats
    """
    stats = ResolutionStats()

    def read_size(path):
        try:
            return _image_size(path)
        except OSError as e:
            console.print(f"[yellow]⚠️  Skipping unreadable image {path}: {e}[/yellow]")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        sizes = list(pool.map(read_size, sorted(paths)))

    for size in sizes:
        if size is None:
            stats.skipped += 1
        else:
            stats.add(*size)
    return stats


def list_images(directory):
    """Image files under `directory` (recursive), sorted by path."""
    found = []
    for root, _, files in os.walk(directory):
        for name in files:
            if name.lower().endswith(IMAGE_EXTENSIONS):
                found.append(os.path.join(root, name))
    return sorted(found)


def read_scene_manifest(path):
    """Read `path<TAB>scene` lines into a dict."""
    scenes = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            image_path, _, scene = line.partition("\t")
            scenes[os.path.normpath(image_path)] = scene
    return scenes


def write_manifest(entries, path):
    """Write `path<TAB>scene<TAB>kept<TAB>max_sim` lines in path order."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for entry in sorted(entries, key=lambda e: e.path):
            f.write(f"{entry.path}\t{entry.scene_group}\t{int(entry.kept)}\t{entry.max_sim:.6f}\n")


def read_manifest(path):
    """Read a curation manifest back into CorpusEntry objects (without features)."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ThermaskError(f"{path} line {number}: expected 4 tab-separated fields")
            entries.append(CorpusEntry(path=parts[0], scene_group=parts[1],
                                       kept=parts[2] == "1", max_sim=float(parts[3])))
    return entries


def _scene_for(path, input_dir, scenes):
    if scenes is not None:
        key = os.path.normpath(path)
        if key in scenes:
            return scenes[key]
        relative = os.path.normpath(os.path.relpath(path, input_dir))
        if relative in scenes:
            return scenes[relative]
    parent = os.path.relpath(os.path.dirname(path), input_dir)
    return "." if parent in ("", ".") else parent


def curate(input_dir, out_manifest, stats_csv=None, scenes_manifest=None,
           threshold=DEDUP_THRESHOLD, zero_threshold=ZERO_THRESHOLD, seed=0,
           cropped_dir=None, workers=WORKERS):
    """
    Run border cropping, per-scene deduplication and resolution statistics over a directory.

    Args:
        input_dir (str): Directory scanned recursively for PGM/PNG images
        out_manifest (str): Curation manifest to write
        stats_csv (str, optional): Resolution CSV of the kept, cropped images
        scenes_manifest (str, optional): `path<TAB>scene` file; defaults to parent directory names
        threshold (float): Dedup cosine threshold
        zero_threshold (int): Border pixel threshold
        seed (int): Anchor-selection seed
        cropped_dir (str, optional): Where to write cropped images, mirroring input layout
        workers (int): Threads for reading and scene processing

    Returns:
        tuple: (entries, ResolutionStats)
    """
    if not os.path.isdir(input_dir):
        raise ImageReadError(f"input directory not found: {input_dir}")
    paths = list_images(input_dir)
    if not paths:
        raise EmptyCorpusError(f"no PGM or PNG images under {input_dir}")
    scenes = read_scene_manifest(scenes_manifest) if scenes_manifest else None

    def prepare(path):
        try:
            image = crop_black_borders(load_gray(path), zero_threshold)
        except ThermaskError as e:
            console.print(f"[yellow]⚠️  Skipping {path}: {e}[/yellow]")
            return None
        if cropped_dir:
            save_gray(image, os.path.join(cropped_dir, os.path.relpath(path, input_dir)))
        return CorpusEntry(path=path, scene_group=_scene_for(path, input_dir, scenes),
                           feature=dedup_feature(image), width=image.width, height=image.height)

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("[cyan]Cropping and describing images...", total=len(paths))
        entries = []
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for entry in pool.map(prepare, paths):
                if entry is not None:
                    entries.append(entry)
                progress.advance(task)

    if not entries:
        raise EmptyCorpusError(f"no readable images under {input_dir}")

    entries = dedup_scan(entries, threshold=threshold, seed=seed, workers=workers)
    write_manifest(entries, out_manifest)

    stats = ResolutionStats(skipped=len(paths) - len(entries))
    for entry in entries:
        if entry.kept:
            stats.add(entry.width, entry.height)
    if stats_csv:
        stats.write_csv(stats_csv)

    excluded = sum(not e.kept for e in entries)
    console.print(f"[bold green]✅ Curated {len(entries)} images: {len(entries) - excluded} kept, "
                  f"{excluded} excluded as near-duplicates[/bold green]")
    print_resolution_table(stats)
    return entries, stats


def print_resolution_table(stats, k=RESOLUTION_TOP_K):
    table = Table(title=f"[bold]Top {k} resolutions[/bold]", border_style="cyan")
    table.add_column("Width", justify="right")
    table.add_column("Height", justify="right")
    table.add_column("Count", justify="right", style="bold green")
    for width, height, count in stats.top(k):
        table.add_row(str(width), str(height), str(count))
    console.print(table)
