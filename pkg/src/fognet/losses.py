"""Training objective: frame-alignment contrastive loss plus two-way InfoNCE.

All terms are negative mean log-probabilities, so each is >= 0 and is
minimized. Log-softmax always subtracts the row maximum first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .model import TrainOutputs
from .numerics import Tensor

DEFAULT_LAMBDA = 0.4
DEFAULT_BETA = 0.1


@dataclass
class LossBreakdown:
    l_temp: float
    l_f_t2v: float
    l_f_v2t: float
    l_c_t2v: float
    l_c_v2t: float
    l_f: float
    l_c: float
    l_all: float
    lam: float = DEFAULT_LAMBDA
    beta: float = DEFAULT_BETA

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def temporal_loss(s_c: Tensor) -> Tensor:
    """Mean over frames (and batch) of ``-log softmax(s_c[i])[i]``.

    Accepts one ``[T, T]`` consistency matrix or a ``[B, T, T]`` stack; the
    stack is averaged over samples.
    """
    s_c = nx.as_tensor(s_c)
    if s_c.ndim < 2 or s_c.shape[-1] != s_c.shape[-2]:
        raise DimensionError(f"temporal_loss needs square matrices, got shape {s_c.shape}")
    T = s_c.shape[-1]
    n = int(np.prod(s_c.shape[:-2], dtype=np.int64)) * T
    picks = np.broadcast_to(np.eye(T), s_c.shape)
    return nx.scale(nx.sum(nx.mul(Tensor(picks), nx.log_softmax_rows(s_c))), -1.0 / n)


def _positive_weights(labels: Sequence[int], C: int) -> np.ndarray:
    """``W[k, c]``: weight of the log-probability of video ``k`` for class ``c``.

    Sums ``1 / (B |k_b|)`` over every anchor ``b`` with ``c = label_b`` and
    ``label_k = label_b``; ``k_b`` contains ``b`` itself.
    """
    labels = np.asarray(labels, dtype=np.int64)
    B = labels.size
    if B == 0:
        raise ValueError("InfoNCE needs a non-empty batch")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C}), got {labels.tolist()}")
    counts = np.bincount(labels, minlength=C)
    W = np.zeros((B, C))
    for b in range(B):
        same = labels == labels[b]
        W[same, labels[b]] += 1.0 / (B * counts[labels[b]])
    return W


def _check_logits(logits: Tensor, labels) -> Tensor:
    logits = nx.as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [B, C], got shape {logits.shape}")
    if logits.shape[0] != len(labels):
        raise DimensionError(f"{logits.shape[0]} logit rows but {len(labels)} labels")
    return logits


def infonce_t2v(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Text-to-video InfoNCE: for each anchor's class, softmax over the batch videos."""
    logits = _check_logits(logits, labels)
    W = _positive_weights(labels, logits.shape[1])
    logp = nx.transpose(nx.log_softmax_rows(nx.transpose(logits)))
    return nx.scale(nx.sum(nx.mul(Tensor(W), logp)), -1.0)


def infonce_v2t(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Video-to-text InfoNCE: softmax over classes for each positive video."""
    logits = _check_logits(logits, labels)
    W = _positive_weights(labels, logits.shape[1])
    return nx.scale(nx.sum(nx.mul(Tensor(W), nx.log_softmax_rows(logits))), -1.0)


def total_loss(
    outputs: TrainOutputs,
    labels: Sequence[int],
    lam: float = DEFAULT_LAMBDA,
    beta: float = DEFAULT_BETA,
) -> tuple[Tensor, LossBreakdown]:
    """``L_f + lam * L_c + beta * L_temp`` and its component values."""
    if outputs.logits_f.shape != outputs.logits_c.shape:
        raise DimensionError(f"foggy logits {outputs.logits_f.shape} vs clean logits {outputs.logits_c.shape}")
    f_t2v = infonce_t2v(outputs.logits_f, labels)
    f_v2t = infonce_v2t(outputs.logits_f, labels)
    c_t2v = infonce_t2v(outputs.logits_c, labels)
    c_v2t = infonce_v2t(outputs.logits_c, labels)
    l_temp = temporal_loss(outputs.s_c)
    if outputs.s_c.ndim == 3 and outputs.s_c.shape[0] != len(labels):
        raise DimensionError(f"{outputs.s_c.shape[0]} consistency matrices but {len(labels)} labels")
    l_f = f_t2v + f_v2t
    l_c = c_t2v + c_v2t
    l_all = l_f
    if lam:
        l_all = l_all + nx.scale(l_c, lam)
    if beta:
        l_all = l_all + nx.scale(l_temp, beta)
    breakdown = LossBreakdown(
        l_temp=l_temp.item(),
        l_f_t2v=f_t2v.item(),
        l_f_v2t=f_v2t.item(),
        l_c_t2v=c_t2v.item(),
        l_c_v2t=c_v2t.item(),
        l_f=l_f.item(),
        l_c=l_c.item(),
        l_all=l_all.item(),
        lam=lam,
        beta=beta,
    )
    return l_all, breakdown
