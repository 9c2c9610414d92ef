"""Metrics and dataset diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as fm
from .errors import DimensionError
from .fogsynth import PairedSample
from .trainer import predict

KL_EPS = 1e-8
DEFAULT_BINS = 64


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` largest logits.

    Ties at the k-th value admit the lowest class indices first.
    """
    logits = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[1]
    if not 1 <= k <= C:
        raise ValueError(f"k must lie in [1, {C}], got {k}")
    if labels.size == 0:
        raise ValueError("no samples to score")
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def confusion(predictions, labels, C: int) -> np.ndarray:
    """``counts[true, pred]`` as a C x C integer matrix."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise DimensionError(f"{predictions.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= C):
            raise ValueError(f"{name} index outside [0, {C})")
    counts = np.zeros((C, C), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return counts


@dataclass
class Histogram:
    bins: np.ndarray  # smoothed probability mass per bin
    lo: float = 0.0
    hi: float = 1.0

    @property
    def n(self) -> int:
        return self.bins.size

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n + 1)

    @classmethod
    def from_values(cls, values, bins: int = DEFAULT_BINS, eps: float = KL_EPS) -> "Histogram":
        counts, _ = np.histogram(np.asarray(values, dtype=np.float64).ravel(), bins=bins, range=(0.0, 1.0))
        return cls(smooth(counts, eps))


def smooth(mass, eps: float = KL_EPS) -> np.ndarray:
    """Normalize, add ``eps`` to every bin, renormalize."""
    mass = np.asarray(mass, dtype=np.float64)
    total = mass.sum()
    if total <= 0:
        raise ValueError("histogram has no mass")
    p = mass / total + eps
    return p / p.sum()


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """``sum p_i ln(p_i / q_i)`` after additive smoothing of both sides."""
    p = smooth(p.bins if isinstance(p, Histogram) else p, eps)
    q = smooth(q.bins if isinstance(q, Histogram) else q, eps)
    if p.shape != q.shape:
        raise DimensionError(f"bin counts differ: {p.size} vs {q.size}")
    return float(np.sum(p * np.log(p / q)))


def dataset_histogram(
    samples: Sequence[PairedSample],
    stream: str = "foggy",
    bins: int = DEFAULT_BINS,
    samples_per_class: int = 2,
    seed: int = 0,
) -> Histogram:
    """Pooled pixel-intensity histogram over ``samples_per_class`` random clips per class."""
    if not samples:
        raise ValueError("manifest is empty")
    if stream not in ("foggy", "clean"):
        raise ValueError(f"stream must be 'foggy' or 'clean', got {stream!r}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[PairedSample]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    picked = []
    for label in sorted(by_class):
        group = by_class[label]
        idx = rng.choice(len(group), size=min(samples_per_class, len(group)), replace=False)
        picked.extend(group[i] for i in sorted(idx))
    values = np.concatenate([getattr(s, stream).frames.ravel() for s in picked])
    return Histogram.from_values(values, bins)


def write_histogram_csv(hist: Histogram, path) -> None:
    edges = hist.edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "mass"])
        for i, m in enumerate(hist.bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), repr(float(m))])


def evaluate(params, samples: Sequence[PairedSample], topk=(1, 5), stream: str = "foggy") -> dict:
    """Foggy-only inference over ``samples``; returns the metrics report and confusion matrix."""
    if not samples:
        raise ValueError("no samples to evaluate")
    C = params.C
    for k in topk:
        if not 1 <= k <= C:
            raise ValueError(f"k={k} outside [1, {C}]")
    logits = predict(params, samples, stream)
    labels = np.array([s.label for s in samples])
    preds = fm.classify(logits)
    counts = confusion(preds, labels, C)
    report = {f"top{k}": topk_accuracy(logits, labels, k) for k in topk}
    names = params.class_names or [str(c) for c in range(C)]
    per_class = []
    for c in range(C):
        n = int(counts[c].sum())
        per_class.append(
            {"class": c, "name": names[c], "count": n, "top1": float(counts[c, c] / n) if n else None}
        )
    report["per_class"] = per_class
    report["n"] = int(labels.size)
    return {"report": report, "confusion": counts}


def write_confusion_csv(counts: np.ndarray, path, names: Sequence[str] = ()) -> None:
    names = list(names) or [str(c) for c in range(counts.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, counts):
            w.writerow([name] + [int(x) for x in row])


def export_embeddings(params, samples: Sequence[PairedSample], out, batch_size: int = 256) -> Path:
    """CSV of pooled foggy-only embeddings: id, label, split, e0..e{d-1}."""
    out = Path(out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "split"] + [f"e{i}" for i in range(params.d)])
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            emb = fm.infer_embedding(np.stack([s.foggy.frames for s in chunk]), params)
            for s, row in zip(chunk, emb.astype(np.float32)):
                w.writerow([s.id, s.label, s.split] + [repr(float(x)) for x in row])
    return out


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
