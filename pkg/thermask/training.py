"""
Pretraining: masked-patch MSE, AdamW, warmup + cosine learning-rate schedule,
the training loop and run configuration.
"""

import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from . import config as settings
from .autodiff import Tape, as_tensor
from .checkpoint import save_checkpoint
from .config import coerce_value, field_types, format_value, read_config_file
from .curation import list_images, read_manifest
from .errors import ConfigError, EmptyCorpusError, GradientError, PreconditionError, ShapeError, ThermaskError
from .gradcheck import grad_check
from .imaging import load_gray, random_crop
from .masking import MaskStrategy
from .model import ModelConfig, ThermalMAE

console = Console(stderr=True)

REQUIRED_KEYS = ("corpus",)


@dataclass
class TrainConfig:
    corpus: str = ""
    base_lr: float = 1.5e-4
    min_lr: float = 0.0
    weight_decay: float = 0.05
    batch_size: int = 8
    epochs: int = 20
    warmup_epochs: int = 2
    mask_lambda: float = 0.75
    mask_strategy: str = "entropy"
    seed: int = settings.DEFAULT_SEED
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    crop_size: int = 64
    max_steps: Optional[int] = None
    checkpoint_every: int = settings.CHECKPOINT_EVERY
    workers: int = settings.WORKERS
    smooth_window: int = 20

    def validate(self):
        """Raise ConfigError if the run cannot start."""
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigError("learning rates must satisfy 0 <= min_lr <= base_lr, base_lr > 0", key="base_lr")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} and {self.epochs}",
                              key="warmup_epochs")
        if not 0 <= self.mask_lambda < 1:
            raise ConfigError(f"mask_lambda must lie in [0, 1), got {self.mask_lambda}", key="mask_lambda")
        if self.mask_strategy not in {s.value for s in MaskStrategy}:
            raise ConfigError(f"unknown mask_strategy {self.mask_strategy!r}", key="mask_strategy")
        if not all(0 <= b < 1 for b in self.betas) or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("betas must lie in [0, 1), eps > 0, weight_decay >= 0", key="betas")
        if self.crop_size < 32 or self.crop_size % 32:
            raise ConfigError(f"crop_size must be a positive multiple of 32, got {self.crop_size}", key="crop_size")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1", key="max_steps")
        if self.checkpoint_every < 1 or self.workers < 1 or self.smooth_window < 1:
            raise ConfigError("checkpoint_every, workers and smooth_window must be >= 1")
        return self


@dataclass
class OptimState:
    """AdamW moments per parameter name and the shared step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class MetricRow:
    step: int
    epoch: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    model: ThermalMAE
    metrics: list
    checkpoints: list
    skipped: int
    out_dir: str

    def losses(self):
        return np.array([row.loss for row in self.metrics])

    def smoothed(self, window):
        return smoothed(self.losses(), window)


def smoothed(values, window):
    """Trailing moving average; the first entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    sums = np.cumsum(values)
    out = np.empty_like(values)
    for i in range(values.size):
        start = max(0, i - window + 1)
        out[i] = (sums[i] - (sums[start - 1] if start else 0.0)) / (i - start + 1)
    return out


def masked_mse(pred, target):
    """
    Mean squared error over the masked patch pixels.

    Args:
        pred (Tensor): [masked, stride^2] reconstructions
        target (Tensor or array): Same shape

    Returns:
        Tensor: Scalar loss; 0 (still connected to `pred`) when nothing is masked
    """
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        return pred.sum() * 0.0
    diff = pred - target
    return (diff * diff).mean()


def decays(p):
    """Weight decay applies to matrices only: biases, norm gains, the mask token and filter scalars are exempt."""
    return p.ndim >= 2


def adamw_step(params, state, lr, config):
    """
    One AdamW update with decoupled weight decay.

    p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps). Parameters without a
    gradient this step are left alone.

    Args:
        params (dict): name -> Parameter with populated .grad
        state (OptimState): Moments, updated in place
        lr (float): Learning rate, >= 0
        config (TrainConfig): betas, eps and weight_decay

    Returns:
        OptimState
    """
    if lr < 0:
        raise PreconditionError(f"learning rate must be >= 0, got {lr}")
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise GradientError(f"non-finite gradient in parameter {name}")

    state.step += 1
    beta1, beta2 = config.betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        grad = p.grad
        if grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * grad if m is None else beta1 * m + (1.0 - beta1) * grad
        v = (1.0 - beta2) * grad * grad if v is None else beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        wd = config.weight_decay if decays(p) else 0.0
        update = (m / correction1) / (np.sqrt(v / correction2) + config.eps)
        p.data = p.data * (1.0 - lr * wd) - lr * update
    return state


class AdamW:
    """Owns the optimizer state for one set of parameters."""

    def __init__(self, params, config):
        self.params = params
        self.config = config
        self.state = OptimState()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr):
        return adamw_step(self.params, self.state, lr, self.config)


def lr_at(step, total_steps, warmup_steps, base_lr, min_lr=0.0):
    """
    Linear warmup from 0 to base_lr, then cosine decay to min_lr.

    Args:
        step (int): 0 <= step <= total_steps
        total_steps (int): Schedule length
        warmup_steps (int): < total_steps

    Returns:
        float
    """
    if warmup_steps >= total_steps:
        raise PreconditionError(f"warmup_steps {warmup_steps} must be below total_steps {total_steps}")
    if not 0 <= step <= total_steps:
        raise PreconditionError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _config_targets():
    return {"model": field_types(ModelConfig), "train": field_types(TrainConfig)}


def build_run_config(values, overrides=None):
    """
    Build both configurations from raw `key -> (value, line)` pairs and overrides.

    Keys that exist in both configurations (mask_lambda) set both.

    Returns:
        tuple: (ModelConfig, TrainConfig)
    """
    merged = dict(values)
    for key, raw in (overrides or {}).items():
        merged[key] = (raw, None)
    targets = _config_targets()
    known = set(targets["model"]) | set(targets["train"])
    for key, (_, line) in merged.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", line=line, key=key)
    for key in REQUIRED_KEYS:
        if key not in merged or not merged[key][0]:
            raise ConfigError(f"missing required key {key!r}", key=key)

    kwargs = {"model": {}, "train": {}}
    for key, (raw, line) in merged.items():
        for target, types in targets.items():
            if key in types:
                kwargs[target][key] = coerce_value(raw, types[key], key, line)
    return ModelConfig(**kwargs["model"]).validate(), TrainConfig(**kwargs["train"]).validate()


def load_run_config(path, overrides=None):
    """
    Read a flat `key = value` run configuration file.

    A relative corpus path is resolved against the config file's directory.

    Args:
        path (str): Config file
        overrides (dict, optional): key -> raw string, applied after the file

    Returns:
        tuple: (ModelConfig, TrainConfig)
    """
    model_config, train_config = build_run_config(read_config_file(path), overrides)
    if not os.path.isabs(train_config.corpus):
        candidate = os.path.join(os.path.dirname(os.path.abspath(path)), train_config.corpus)
        if os.path.exists(candidate):
            train_config.corpus = candidate
    return model_config, train_config


def render_run_config(model_config, train_config):
    """`key = value` text that load_run_config reads back into the same configurations."""
    values = {}
    for config in (train_config, model_config):
        for f in dataclasses.fields(config):
            values.setdefault(f.name, format_value(getattr(config, f.name)))
    return "".join(f"{key} = {values[key]}\n" for key in sorted(values))


def resolve_corpus(corpus):
    """
    Image paths of a corpus: a directory (scanned recursively) or a curation manifest (kept rows).
    """
    if os.path.isdir(corpus):
        return list_images(corpus)
    if os.path.isfile(corpus):
        base = os.path.dirname(os.path.abspath(corpus))
        return [e.path if os.path.isabs(e.path) or os.path.exists(e.path) else os.path.join(base, e.path)
                for e in read_manifest(corpus) if e.kept]
    raise EmptyCorpusError(f"corpus not found: {corpus}")


def load_corpus(paths, crop_size, workers=settings.WORKERS):
    """
    Decode every usable corpus image.

    Returns:
        tuple: (list of GrayImage, skipped count)
    """
    def read(path):
        try:
            image = load_gray(path)
        except ThermaskError as e:
            console.print(f"[yellow]⚠️  Skipping {path}: {e}[/yellow]")
            return None
        if image.height < crop_size or image.width < crop_size:
            return None
        return image

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        images = list(pool.map(read, paths))
    usable = [img for img in images if img is not None]
    return usable, len(paths) - len(usable)


@dataclass
class Sample:
    inp: object
    sel: object


def prepare_sample(model, image, train_config, rng):
    """Random crop, model input and mask selection for one image."""
    crop = random_crop(image, train_config.crop_size, rng)
    inp = model.prepare(crop)
    sel = model.select(inp, train_config.mask_lambda, train_config.mask_strategy, rng)
    return Sample(inp=inp, sel=sel)


def schedule_lengths(n_images, train_config):
    """(steps per epoch, total steps, warmup steps, epochs to run)."""
    steps_per_epoch = math.ceil(n_images / train_config.batch_size)
    if train_config.max_steps is not None:
        total = train_config.max_steps
        epochs = math.ceil(total / steps_per_epoch)
    else:
        total = train_config.epochs * steps_per_epoch
        epochs = train_config.epochs
    warmup = min(train_config.warmup_epochs * steps_per_epoch, total - 1)
    return steps_per_epoch, total, warmup, epochs


def train_step(model, optimizer, samples, lr):
    """Forward and backward over one batch, then an optimizer update. Returns the batch loss."""
    optimizer.zero_grad()
    with Tape() as tape:
        total = None
        for sample in samples:
            loss = masked_mse(*model.forward(sample.inp, sample.sel))
            total = loss if total is None else total + loss
        batch_loss = total * (1.0 / len(samples))
        value = batch_loss.item()
        tape.backward(batch_loss)
    optimizer.step(lr)
    return value


def write_metrics(metrics, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "epoch", "lr", "loss"])
        for row in metrics:
            writer.writerow([row.step, row.epoch, repr(row.lr), repr(row.loss)])


def train(model_config, train_config, out_dir):
    """
    Pretrain a model on a corpus.

    Batches follow a seeded permutation per epoch; each sample draws its crop and
    (for random masking) its mask from a generator seeded by (seed, epoch, position),
    so results do not depend on the number of workers.

    Args:
        model_config (ModelConfig): Architecture
        train_config (TrainConfig): Optimization and data settings
        out_dir (str): Receives metrics.csv, config.txt and checkpoints

    Returns:
        TrainResult
    """
    model_config.validate()
    train_config.validate()
    paths = resolve_corpus(train_config.corpus)
    if not paths:
        raise EmptyCorpusError(f"no images in corpus {train_config.corpus}")
    images, skipped = load_corpus(paths, train_config.crop_size, train_config.workers)
    if skipped:
        console.print(f"[yellow]⚠️  Skipped {skipped} of {len(paths)} images "
                      f"(unreadable or smaller than {train_config.crop_size}px)[/yellow]")
    if not images:
        raise EmptyCorpusError(f"every image in {train_config.corpus} was skipped")

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(render_run_config(model_config, train_config))

    model = ThermalMAE(model_config, seed=train_config.seed)
    optimizer = AdamW(model.parameters(), train_config)
    steps_per_epoch, total, warmup, epochs = schedule_lengths(len(images), train_config)
    bs = train_config.batch_size
    console.print(f"[cyan]🚀 Pretraining on {len(images)} images: {total} steps, "
                  f"{model.num_parameters():,} parameters[/cyan]")

    metrics, checkpoints = [], []
    step = 0
    started = time.time()
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        TextColumn("{task.fields[loss]}"),
        console=console,
        transient=True,
    ) as progress, ThreadPoolExecutor(max_workers=train_config.workers) as pool:
        task = progress.add_task("[cyan]Training...", total=total, loss="")
        for epoch in range(epochs):
            order = np.random.default_rng([train_config.seed, epoch]).permutation(len(images))
            for batch_start in range(0, len(images), bs):
                if step >= total:
                    break
                positions = range(batch_start, min(batch_start + bs, len(images)))
                samples = list(pool.map(
                    lambda pos: prepare_sample(model, images[order[pos]], train_config,
                                               np.random.default_rng([train_config.seed, epoch, pos])),
                    positions))
                lr = lr_at(step, total, warmup, train_config.base_lr, train_config.min_lr)
                loss = train_step(model, optimizer, samples, lr)
                metrics.append(MetricRow(step=step, epoch=epoch, lr=lr, loss=loss))
                step += 1
                progress.update(task, advance=1, loss=f"loss {loss:.4f}")
            if (epoch + 1) % train_config.checkpoint_every == 0:
                path = os.path.join(out_dir, f"checkpoint-epoch{epoch + 1}.ckpt")
                save_checkpoint(model, path)
                checkpoints.append(path)

    final = os.path.join(out_dir, "checkpoint-final.ckpt")
    save_checkpoint(model, final)
    checkpoints.append(final)
    write_metrics(metrics, os.path.join(out_dir, "metrics.csv"))

    result = TrainResult(model=model, metrics=metrics, checkpoints=checkpoints, skipped=skipped, out_dir=out_dir)
    print_training_summary(result, train_config.smooth_window, time.time() - started)
    return result


def print_training_summary(result, window, elapsed):
    curve = result.smoothed(window)
    table = Table(title="[bold]Pretraining summary[/bold]", border_style="cyan", show_header=False)
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    table.add_row("Steps", str(len(result.metrics)))
    table.add_row("Epochs", str(result.metrics[-1].epoch + 1 if result.metrics else 0))
    table.add_row("Skipped images", str(result.skipped))
    if curve.size:
        table.add_row(f"Initial loss ({window}-step avg)", f"{curve[min(window, curve.size) - 1]:.5f}")
        table.add_row(f"Final loss ({window}-step avg)", f"{curve[-1]:.5f}")
    table.add_row("Checkpoints", str(len(result.checkpoints)))
    table.add_row("Elapsed", f"{elapsed:.1f}s")
    console.print(table)
    console.print(f"[bold green]✅ Run written to {result.out_dir}[/bold green]")


def toy_model_config(size=32):
    """Smallest architecture that exercises every parameter type."""
    return ModelConfig(stage_depths=(1, 1, 1), embed_dims=(4, 4, 8), heads=(1, 1, 2),
                       decoder_depth=1, decoder_dim=8, decoder_heads=2, mlp_ratio=2.0,
                       mask_lambda=0.5, ddg_blocks=2, input_size=size, dtype="float64")


def check_model_gradients(image, model_config=None, step=1e-5, tol=1e-4, sample=None, seed=0):
    """
    Finite-difference check of the full masked reconstruction loss.

    Args:
        image (GrayImage): Input whose sides are multiples of 32
        model_config (ModelConfig, optional): Defaults to toy_model_config
        sample (int, optional): Elements checked per parameter

    Returns:
        GradCheckReport
    """
    model_config = model_config or toy_model_config(min(image.height, image.width))
    model = ThermalMAE(model_config, seed=seed)
    inp = model.prepare(image)
    sel = model.select(inp)
    return grad_check(lambda: masked_mse(*model.forward(inp, sel)), model.parameters(),
                      step=step, tol=tol, sample=sample, seed=seed)
