"""Deterministic training loop: AdamW, linear warm-up into cosine annealing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as fm
from .errors import ConfigError, DimensionError
from .fogsynth import PairedSample
from .losses import total_loss
from .model import COMPONENTS, ModelParams

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "l_all", "l_f", "l_c", "l_temp", "train_top1", "test_top1")
_SHUFFLE_STREAM = 31


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    peak_lr: float = 5e-5
    warmup_epochs: int = 5
    min_lr: float = 0.0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.4
    beta: float = 0.1
    seed: int = 0
    # enabled model components; the empty set is the plain two-logit baseline
    components: frozenset = COMPONENTS
    dim: int = 32
    encoder: str = "learnable"
    heads: int = 1
    grad_clip: float | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        self.components = frozenset(c.upper() for c in self.components)
        unknown = self.components - COMPONENTS
        if unknown:
            raise ConfigError(f"unknown components {sorted(unknown)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if self.min_lr < 0 or (self.peak_lr <= self.min_lr and self.peak_lr != 0):
            raise ConfigError(f"need peak_lr > min_lr >= 0, got {self.peak_lr} / {self.min_lr}")

    @property
    def effective_beta(self) -> float:
        return self.beta if "CSA" in self.components else 0.0


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lr_at(step: int, total_steps: int, cfg: TrainConfig, warmup_steps: int | None = None) -> float:
    """Learning rate at optimizer ``step`` (0-based).

    Rises linearly from 0 at step 0 to ``peak_lr`` at step ``warmup_steps``,
    then follows a half cosine down to ``min_lr`` at the final step.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if warmup_steps is None:
        warmup_steps = (total_steps * cfg.warmup_epochs) // cfg.epochs
    if step < warmup_steps:
        return cfg.peak_lr * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    progress = 1.0 if span <= 0 else (step - warmup_steps) / span
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """In-place AdamW update of ``params`` (name -> Tensor) with decoupled decay."""
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        if lr == 0.0:
            continue
        if cfg.weight_decay:
            p.data *= 1.0 - lr * cfg.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def _stack(samples: Sequence[PairedSample], stream: str) -> np.ndarray:
    return np.stack([getattr(s, stream).frames for s in samples])


def predict(params: ModelParams, samples: Sequence[PairedSample], stream: str = "foggy", batch_size: int = 256):
    """Foggy-only inference logits for ``samples``; returns ``[N, C]`` array."""
    out = []
    for i in range(0, len(samples), batch_size):
        out.append(fm.infer_logits(_stack(samples[i : i + batch_size], stream), params).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.C))


def top1(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    return float(np.mean(fm.classify(logits) == labels)) if labels.size else float("nan")


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_test_top1: float | None = None


def _validate(samples: Sequence[PairedSample]) -> None:
    if not samples:
        raise ConfigError("training split is empty")
    if len({s.label for s in samples}) < 2:
        raise ConfigError("training split needs at least two classes")


def train(
    train_samples: Sequence[PairedSample],
    cfg: TrainConfig,
    test_samples: Sequence[PairedSample] = (),
    num_classes: int | None = None,
    class_names: Sequence[str] = (),
    out_dir=None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Train from scratch (or from ``params``) and return the final model and log.

    With ``out_dir`` set, writes ``train_log.csv``, ``final/`` and ``best/``
    checkpoints (best by test Top-1 when a test split is given).
    """
    _validate(train_samples)
    train_samples = list(train_samples)
    if num_classes is None:
        num_classes = max(s.label for s in list(train_samples) + list(test_samples)) + 1
    frame_shape = train_samples[0].foggy.frames.shape[1:]
    if params is None:
        params = fm.init_params(
            num_classes,
            frame_shape,
            d=cfg.dim,
            encoder_kind=cfg.encoder,
            heads=cfg.heads,
            seed=cfg.seed,
            components=cfg.components,
            class_names=class_names,
        )
    out_dir = Path(out_dir) if out_dir is not None else None
    trainable = params.trainable()
    state = OptimizerState()
    n = len(train_samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs
    test_labels = [s.label for s in test_samples]

    history = []
    best = None
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        sums = dict.fromkeys(("l_all", "l_f", "l_c", "l_temp"), 0.0)
        correct = 0
        lr = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            labels = [s.label for s in batch]
            outputs = fm.forward_train(_stack(batch, "foggy"), _stack(batch, "clean"), params)
            loss, parts = total_loss(outputs, labels, cfg.lam, cfg.effective_beta)
            for p in trainable.values():
                p.grad = None
            loss.backward()
            grads = {name: p.grad for name, p in trainable.items()}
            if cfg.grad_clip is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None))
                if norm > cfg.grad_clip:
                    grads = {k: None if g is None else g * (cfg.grad_clip / norm) for k, g in grads.items()}
            lr = lr_at(step, total_steps, cfg, warmup_steps)
            adamw_step(trainable, grads, state, lr, cfg)
            params.clamp_logit_scale()
            step += 1
            for key in sums:
                sums[key] += getattr(parts, key) * len(batch)
            correct += int(np.sum(fm.classify(outputs.logits_f) == np.asarray(labels)))

        row = {"epoch": epoch + 1, "lr": lr}
        row.update({k: v / n for k, v in sums.items()})
        row["train_top1"] = correct / n
        row["test_top1"] = top1(predict(params, test_samples, batch_size=cfg.eval_batch_size), test_labels) if test_samples else float("nan")
        history.append(row)
        log.info("epoch %d lr %.3g loss %.4f train %.3f test %.3f", row["epoch"], lr, row["l_all"], row["train_top1"], row["test_top1"])
        if out_dir is not None and test_samples and (best is None or row["test_top1"] > best):
            fm.save_checkpoint(params, out_dir / "best")
        if test_samples and (best is None or row["test_top1"] > best):
            best = row["test_top1"]

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_log(history, out_dir / "train_log.csv")
        fm.save_checkpoint(params, out_dir / "final")
    for p in trainable.values():
        p.grad = None
    return TrainResult(params, history, best)


def write_log(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(float(row[k])) if k != "epoch" else row[k] for k in LOG_COLUMNS})
