"""
Command-line interface for thermask.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

import argparse
import os
import sys

import numpy as np
from rich.console import Console
from rich.table import Table

from . import config as settings
from .errors import ConfigError, ThermaskError

console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors to the dispatcher instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser(command, description):
    return _Parser(prog=f"thermask {command}", description=description, allow_abbrev=False)


def _ratio(text):
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"must satisfy 0 <= value < 1, got {text}")
    return value


def _positive(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _crop_to(image, height, width):
    from .imaging import GrayImage
    return GrayImage(pixels=image.pixels[:height, :width], source_id=image.source_id, levels=image.levels)


def cmd_curate(argv):
    from .curation import curate

    parser = _parser("curate", "Crop zero borders, remove near-duplicates per scene, report resolutions.")
    parser.add_argument("--input", required=True, help="directory scanned recursively for PGM/PNG images")
    parser.add_argument("--out", required=True, help="curation manifest to write")
    parser.add_argument("--scenes", help="path<TAB>scene manifest (default: parent directory names)")
    parser.add_argument("--threshold", type=float, default=settings.DEDUP_THRESHOLD,
                        help="cosine similarity above which a candidate is excluded (default 0.85)")
    parser.add_argument("--stats", help="resolution statistics CSV to write")
    parser.add_argument("--zero-threshold", type=int, default=settings.ZERO_THRESHOLD,
                        help="largest pixel value treated as border (default 0)")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="anchor selection seed")
    parser.add_argument("--cropped-dir", help="also write the border-cropped images here")
    parser.add_argument("--workers", type=int, default=settings.WORKERS, help="worker threads")
    args = parser.parse_args(argv)
    if not 0 < args.threshold <= 1:
        parser.error("--threshold must lie in (0, 1]")

    curate(args.input, args.out, stats_csv=args.stats, scenes_manifest=args.scenes,
           threshold=args.threshold, zero_threshold=args.zero_threshold, seed=args.seed,
           cropped_dir=args.cropped_dir, workers=args.workers)
    return EXIT_OK


def cmd_pretrain(argv):
    from .training import load_run_config, train

    parser = _parser("pretrain", "Masked-autoencoder pretraining from a key = value config file.")
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--out", default=os.path.join(settings.OUTPUT_DIR, "pretrain"),
                        help="output directory for metrics, checkpoints and config.txt")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--mask-strategy", choices=["entropy", "random", "gray_value"],
                        help="override the configured masking strategy")
    parser.add_argument("--max-steps", type=int, help="override the configured step cap")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration field (repeatable)")
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.mask_strategy:
        overrides["mask_strategy"] = args.mask_strategy
    if args.max_steps is not None:
        overrides["max_steps"] = str(args.max_steps)

    model_config, train_config = load_run_config(args.config, overrides)
    train(model_config, train_config, args.out)
    return EXIT_OK


def cmd_mask_viz(argv):
    from .imaging import GrayImage, load_gray, save_gray
    from .masking import baseline_masks, grid_from_image, render_entropy_map, render_mask
    from .model import pad_to_multiple

    parser = _parser("mask-viz", "Write the entropy map and the kept/masked patch view of an image.")
    parser.add_argument("--image", required=True, help="input PGM/PNG")
    parser.add_argument("--lambda", dest="lam", type=_ratio, default=0.75, help="mask ratio in [0, 1)")
    parser.add_argument("--out", required=True, help="output prefix: <prefix>_entropy.pgm, <prefix>_mask.pgm")
    parser.add_argument("--strategy", choices=["entropy", "random", "gray_value"], default="entropy",
                        help="masking strategy (default entropy)")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="seed for random masking")
    parser.add_argument("--ckpt", help="checkpoint; also writes <prefix>_recon.pgm")
    args = parser.parse_args(argv)

    image = load_gray(args.image)
    rng = np.random.default_rng(args.seed)
    model = None
    if args.ckpt:
        from .checkpoint import load_checkpoint
        model = load_checkpoint(args.ckpt)
        patch = model.config.coarse_stride
        inp = model.prepare(image)
        padded, sel = inp.pixels, model.select(inp, args.lam, args.strategy, rng)
    else:
        patch = 16
        padded = pad_to_multiple(image.pixels, patch)
        sel = baseline_masks(grid_from_image(padded, patch), args.lam, args.strategy, rng)

    rows, cols = padded.shape[0] // patch, padded.shape[1] // patch
    entropy_map = render_entropy_map(sel, rows, cols, patch)
    mask_view = render_mask(GrayImage(padded, source_id=image.source_id), sel, patch)
    outputs = {
        f"{args.out}_entropy.pgm": _crop_to(entropy_map, image.height, image.width),
        f"{args.out}_mask.pgm": _crop_to(mask_view, image.height, image.width),
    }
    if model is not None:
        outputs[f"{args.out}_recon.pgm"] = model.reconstruct(image, sel)
    for path, img in outputs.items():
        save_gray(img, path)
        console.print(f"[green]✅ Wrote {path}[/green]")
    console.print(f"[cyan]Kept {sel.keep_indices.size} of {sel.n} patches (lambda={args.lam})[/cyan]")
    return EXIT_OK


def cmd_afdm_apply(argv):
    from .autodiff import Tensor
    from .frequency import FilterVariant, RadialFilterParams, afdm, build_filter
    from .imaging import load_gray, save_gray, to_gray_image

    parser = _parser("afdm-apply", "Filter an image's centered spectrum with the radial modulation filter.")
    parser.add_argument("--image", required=True, help="input PGM/PNG")
    parser.add_argument("--out", required=True, help="filtered PGM to write")
    parser.add_argument("--alpha", type=_ratio, default=0.5, help="filter alpha in [0, 1) (default 0.5)")
    parser.add_argument("--beta", type=_positive, default=1.0, help="filter beta > 0 (default 1.0)")
    parser.add_argument("--radius", type=_positive, help="filter radius > 0 (default min(h, w) / 8)")
    parser.add_argument("--variant", choices=[v.value for v in FilterVariant], default="notch",
                        help="literal or notch filter form (default notch)")
    parser.add_argument("--scaling", choices=["clamp", "rescale"], default="clamp",
                        help="map the filtered values to 0..255 by clamping or min-max rescaling")
    parser.add_argument("--filter-out", help="also write the filter field as a PGM")
    args = parser.parse_args(argv)

    image = load_gray(args.image)
    radius = args.radius or min(image.height, image.width) / 8.0
    params = RadialFilterParams.from_values(args.alpha, args.beta, radius, dtype=np.float64)
    filtered = afdm(Tensor(image.pixels, dtype=np.float64), params, args.variant)
    save_gray(to_gray_image(filtered.data, source_id=image.source_id, scaling=args.scaling), args.out)
    console.print(f"[green]✅ Wrote {args.out}[/green]")
    if args.filter_out:
        field = build_filter(params, image.height, image.width, args.variant)
        save_gray(to_gray_image(field.values.data * 255.0, scaling="clamp"), args.filter_out)
        console.print(f"[green]✅ Wrote {args.filter_out}[/green]")
    return EXIT_OK


def cmd_features(argv):
    from .checkpoint import load_checkpoint, save_feature_grids
    from .imaging import load_gray

    parser = _parser("features", "Export the four-level feature pyramid of an image.")
    parser.add_argument("--ckpt", required=True, help="model checkpoint")
    parser.add_argument("--image", required=True, help="input PGM/PNG")
    parser.add_argument("--out", required=True, help="directory receiving F1.grid .. F4.grid")
    args = parser.parse_args(argv)

    model = load_checkpoint(args.ckpt)
    pyramid = model.feature_pyramid(load_gray(args.image))
    paths = save_feature_grids(pyramid, args.out, source=os.path.basename(args.image))

    table = Table(title="[bold]Feature pyramid[/bold]", border_style="cyan")
    table.add_column("Level", style="bold")
    table.add_column("Grid", justify="right")
    table.add_column("Channels", justify="right")
    table.add_column("File")
    for (level, grid), path in zip(pyramid.levels().items(), paths):
        table.add_row(level, f"{grid.shape[0]}x{grid.shape[1]}", str(grid.shape[2]), path)
    console.print(table)
    return EXIT_OK


def cmd_grad_check(argv):
    from .synth import blob_image
    from .imaging import GrayImage
    from .training import check_model_gradients

    parser = _parser("grad-check", "Finite-difference check of every model parameter on a toy configuration.")
    parser.add_argument("--size", type=int, default=32, help="square input size, a multiple of 32 (default 32)")
    parser.add_argument("--tol", type=_positive, default=1e-4, help="pass threshold (default 1e-4)")
    parser.add_argument("--step", type=_positive, default=1e-5, help="central-difference step (default 1e-5)")
    parser.add_argument("--sample", type=int, help="check at most this many elements per parameter")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="weights and input seed")
    args = parser.parse_args(argv)
    if args.size < 32 or args.size % 32:
        parser.error("--size must be a positive multiple of 32")

    rng = np.random.default_rng(args.seed)
    image = GrayImage(blob_image(args.size, args.size, rng), source_id="grad-check")
    with console.status("[cyan]Comparing tape gradients with central differences..."):
        report = check_model_gradients(image, step=args.step, tol=args.tol, sample=args.sample, seed=args.seed)

    table = Table(title="[bold]Gradient check[/bold]", border_style="cyan")
    table.add_column("Parameter")
    table.add_column("Worst error", justify="right")
    table.add_column("Analytic", justify="right")
    table.add_column("Numeric", justify="right")
    for entry in report.worst_by_parameter():
        style = "green" if entry.error < report.tol else "bold red"
        table.add_row(entry.name, f"[{style}]{entry.error:.2e}[/{style}]",
                      f"{entry.analytic:.6e}", f"{entry.numeric:.6e}")
    console.print(table)

    verdict = "PASS" if report.passed else "FAIL"
    print(f"grad-check {verdict}: {len(report.entries)} elements, max error {report.max_error:.3e}, tol {report.tol:g}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_synth(argv):
    from .synth import make_curation_corpus, make_pretrain_corpus

    parser = _parser("synth", "Generate a deterministic synthetic corpus.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n", type=int, default=64, help="number of images (default 64)")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="generator seed")
    parser.add_argument("--size", type=int, default=64, help="side of pretraining images (default 64)")
    parser.add_argument("--kind", choices=["pretrain", "curation"], default="pretrain",
                        help="pretrain: blob/ramp/checkerboard images; curation: scenes with planted duplicates")
    args = parser.parse_args(argv)
    if args.n < 1 or args.size < 1:
        parser.error("--n and --size must be positive")

    if args.kind == "curation":
        make_curation_corpus(args.out, n=args.n, seed=args.seed)
    else:
        make_pretrain_corpus(args.out, n=args.n, size=args.size, seed=args.seed)
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "pretrain": cmd_pretrain,
    "mask-viz": cmd_mask_viz,
    "afdm-apply": cmd_afdm_apply,
    "features": cmd_features,
    "grad-check": cmd_grad_check,
    "synth": cmd_synth,
}


def main(argv=None):
    """
    Main CLI entry point.

    Returns:
        int: Process exit code
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        print_help()
        return EXIT_USAGE

    command, rest = argv[0], argv[1:]
    if command == "version":
        from . import __version__
        print(f"thermask v{__version__}")
        return EXIT_OK
    if command in ("help", "--help", "-h"):
        print_help()
        return EXIT_OK
    if command not in COMMANDS:
        console.print(f"[red]❌ Unknown command: {command}[/red]")
        print_help()
        return EXIT_USAGE

    try:
        return COMMANDS[command](rest)
    except UsageError as e:
        console.print(f"[red]❌ {e}[/red]")
        return EXIT_USAGE
    except ConfigError as e:
        console.print(f"[red]❌ Config error: {e}[/red]")
        return EXIT_USAGE
    except (ThermaskError, OSError) as e:
        console.print(f"[red]❌ {command} failed: {e}[/red]")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        console.print("[yellow]⚠️  Interrupted[/yellow]")
        return EXIT_RUNTIME


def print_help():
    """Print help message."""
    print("""
thermask - Entropy-masked autoencoder pretraining for infrared imagery

Usage:
  thermask curate --input DIR --out MANIFEST [--scenes FILE] [--threshold 0.85]
                  [--stats CSV] [--zero-threshold 0] [--seed N] [--cropped-dir DIR] [--workers N]
  thermask pretrain --config FILE [--out DIR] [--seed N]
                  [--mask-strategy entropy|random|gray_value] [--max-steps N] [--set KEY=VALUE]...
  thermask mask-viz --image PATH --out PREFIX [--lambda 0.75]
                  [--strategy entropy|random|gray_value] [--seed N] [--ckpt FILE]
  thermask afdm-apply --image PATH --out PATH [--alpha 0.5] [--beta 1.0] [--radius R]
                  [--variant notch|literal] [--scaling clamp|rescale] [--filter-out PATH]
  thermask features --ckpt FILE --image PATH --out DIR
  thermask grad-check [--size 32] [--tol 1e-4] [--step 1e-5] [--sample N] [--seed N]
  thermask synth --out DIR [--n 64] [--seed N] [--size 64] [--kind pretrain|curation]
  thermask version         Show version
  thermask help            Show this help

  Every subcommand accepts --help for a description of its flags.

Configuration:
  Run settings live in a flat 'key = value' file; every model and training
  field can be set there or with --set. 'corpus' (a directory or a curation
  manifest) is required.
  Environment (or .env): THERMASK_DTYPE, THERMASK_WORKERS, THERMASK_SEED,
  THERMASK_CHECKPOINT_EVERY, THERMASK_OUTPUT_DIR

Exit codes:
  0 success, 1 usage or configuration error, 2 runtime error
    """)


if __name__ == "__main__":
    sys.exit(main())
