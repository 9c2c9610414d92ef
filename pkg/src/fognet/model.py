"""Two-stream fog-invariant video classifier.

Training wiring (clean and foggy streams)::

    encode -> fog-aware selection -> mutual enhancement -> consistency matrix
                                                      \\-> pooled logits per stream

Inference wiring feeds the foggy stream into every clean slot, so no clean
clip is consumed.

All stream functions accept ``[T, d]`` or batched ``[B, T, d]`` tensors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .fogsynth import Clip
from .numerics import Tensor

COMPONENTS = frozenset({"FAS", "ME", "CSA"})
ENCODER_KINDS = ("learnable", "frozen")
LOGIT_SCALE_INIT = 1.0 / 0.07
LOGIT_SCALE_RANGE = (1.0, 100.0)
TEXT_INIT_STD = 0.02
PARAM_NAMES = ("W_e", "b_e", "text", "Wq", "Wk", "Wv", "logit_scale")

_INIT_STREAM = 21


@dataclass
class ModelParams:
    W_e: Tensor  # (d, H*W)
    b_e: Tensor  # (d,)
    text: Tensor  # (C, d)
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    logit_scale: Tensor  # (1,)
    frame_shape: tuple[int, int]
    encoder_kind: str = "learnable"
    heads: int = 1
    seed: int = 0
    components: frozenset = COMPONENTS
    class_names: list[str] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.W_e.shape[0]

    @property
    def C(self) -> int:
        return self.text.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def trainable(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.tensors().items() if t.requires_grad}

    def clamp_logit_scale(self) -> None:
        lo, hi = LOGIT_SCALE_RANGE
        np.clip(self.logit_scale.data, lo, hi, out=self.logit_scale.data)


def init_params(
    num_classes: int,
    frame_shape: tuple[int, int] = (32, 32),
    d: int = 32,
    encoder_kind: str = "learnable",
    heads: int = 1,
    seed: int = 0,
    components=COMPONENTS,
    class_names: Sequence[str] = (),
) -> ModelParams:
    if encoder_kind not in ENCODER_KINDS:
        raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}, got {encoder_kind!r}")
    if d % heads:
        raise DimensionError(f"d={d} is not divisible by heads={heads}")
    unknown = set(components) - COMPONENTS
    if unknown:
        raise ValueError(f"unknown components {sorted(unknown)}")
    rng = np.random.default_rng([seed, _INIT_STREAM])
    hw = frame_shape[0] * frame_shape[1]
    learn_enc = encoder_kind == "learnable"
    W_e = rng.standard_normal((d, hw)) / np.sqrt(hw)
    text = rng.standard_normal((num_classes, d)) * TEXT_INIT_STD
    proj = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3)]
    return ModelParams(
        W_e=Tensor(W_e, requires_grad=learn_enc),
        b_e=Tensor(np.zeros(d), requires_grad=learn_enc),
        text=Tensor(text, requires_grad=True),
        Wq=Tensor(proj[0], requires_grad=True),
        Wk=Tensor(proj[1], requires_grad=True),
        Wv=Tensor(proj[2], requires_grad=True),
        logit_scale=Tensor([LOGIT_SCALE_INIT], requires_grad=True),
        frame_shape=tuple(frame_shape),
        encoder_kind=encoder_kind,
        heads=heads,
        seed=seed,
        components=frozenset(components),
        class_names=list(class_names),
    )


# -- stream operations -------------------------------------------------------------


def _frames_array(clip) -> np.ndarray:
    if isinstance(clip, Clip):
        return clip.frames
    return np.asarray(clip, dtype=np.float64)


def encode_frames(clip, params: ModelParams) -> Tensor:
    """``tanh(W_e x + b)`` per frame; ``[..., T, H, W] -> [..., T, d]``."""
    frames = _frames_array(clip)
    if frames.shape[-2:] != tuple(params.frame_shape):
        raise DimensionError(f"frame size {frames.shape[-2:]} does not match encoder input {params.frame_shape}")
    flat = Tensor(frames.reshape(frames.shape[:-2] + (-1,)))
    return nx.tanh(nx.matmul(flat, nx.transpose(params.W_e)) + params.b_e)


def self_attention(x: Tensor, scaled: bool = False) -> tuple[Tensor, Tensor]:
    """Parameter-free dot-product self-attention; returns (output, weights).

    Scores are raw inner products unless ``scaled`` divides them by sqrt(d).
    tanh-bounded embeddings keep raw scores within [-d, d].
    """
    scores = nx.matmul(x, nx.transpose(x))
    if scaled:
        scores = nx.scale(scores, 1.0 / np.sqrt(x.shape[-1]))
    weights = nx.softmax_rows(scores)
    return nx.matmul(weights, x), weights


def _check_streams(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"stream shapes differ: {a.shape} vs {b.shape}")


def fog_aware_selection(v_c: Tensor, v_f: Tensor, scaled: bool = False) -> tuple[Tensor, Tensor]:
    """Joint self-attention over the 2T clean+foggy tokens, split back per stream."""
    _check_streams(v_c, v_f)
    attended, _ = self_attention(nx.concat_rows(v_c, v_f), scaled)
    return nx.chunk2(attended)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """``softmax(Q K^T / sqrt(d_head)) V``, heads split along the feature axis."""
    d = q.shape[-1]
    dh = d // heads
    outs = []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh, kh, vh = (nx.cols(t, h * dh, (h + 1) * dh) for t in (q, k, v))
        w = nx.softmax_rows(nx.scale(nx.matmul(qh, nx.transpose(kh)), 1.0 / np.sqrt(dh)))
        outs.append(nx.matmul(w, vh))
    return outs[0] if heads == 1 else nx.concat_cols(outs)


def mutual_enhancement(v_c_A: Tensor, v_f_A: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Bidirectional cross-attention with residuals; returns ``(v_c_D, v_f_D)``.

    The clean stream queries the foggy one to refine the foggy embedding, and
    the foggy stream queries the clean one to refine the clean embedding. One
    set of projections serves both directions.
    """
    _check_streams(v_c_A, v_f_A)
    q_c, k_c, val_c = (nx.matmul(v_c_A, W) for W in (params.Wq, params.Wk, params.Wv))
    if v_f_A is v_c_A:
        q_f, k_f, val_f = q_c, k_c, val_c
    else:
        q_f, k_f, val_f = (nx.matmul(v_f_A, W) for W in (params.Wq, params.Wk, params.Wv))
    v_f_D = attention(q_c, k_f, val_f, params.heads) + v_f_A
    v_c_D = attention(q_f, k_c, val_c, params.heads) + v_c_A
    return v_c_D, v_f_D


def consistency_matrix(v_f_D: Tensor, v_c_D: Tensor) -> Tensor:
    """Frame-by-frame cosine similarity, foggy rows against clean columns."""
    _check_streams(v_f_D, v_c_D)
    return nx.cosine_sim_matrix(v_f_D, v_c_D)


def pool(v_D: Tensor) -> Tensor:
    """Mean over frames, then unit-normalize: ``[..., T, d] -> [B, d]`` (B=1 for one clip)."""
    pooled = nx.mean_rows(v_D)
    if pooled.ndim == 1:
        pooled = nx.reshape(pooled, (1, -1))
    return nx.l2_normalize_rows(pooled)


def pool_and_logits(v_D: Tensor, params: ModelParams) -> Tensor:
    """``logit_scale * cos(pooled video, text_c)`` for every class; ``[B, C]`` (or ``[1, C]``)."""
    video = pool(v_D)
    return nx.mul(params.logit_scale, nx.cosine_sim_matrix(video, params.text))


def classify(logits) -> int | np.ndarray:
    """Argmax over classes; ties go to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if data.shape[-1] == 0:
        raise ValueError("cannot classify empty logits")
    pred = nx.argmax_rows(data)
    return int(pred) if np.ndim(pred) == 0 else pred


# -- wirings -------------------------------------------------------------------------


@dataclass
class TrainOutputs:
    v_f_D: Tensor
    v_c_D: Tensor
    logits_f: Tensor
    logits_c: Tensor
    s_c: Tensor


def _enhance(v_c: Tensor, v_f: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    if "FAS" in params.components:
        v_c, v_f = fog_aware_selection(v_c, v_f)
    if "ME" in params.components:
        v_c, v_f = mutual_enhancement(v_c, v_f, params)
    return v_c, v_f


def forward_train(foggy, clean, params: ModelParams) -> TrainOutputs:
    """Two-stream pass; ``foggy``/``clean`` are clips or ``[(B,) T, H, W]`` arrays."""
    v_f = encode_frames(foggy, params)
    v_c = encode_frames(clean, params)
    v_c_D, v_f_D = _enhance(v_c, v_f, params)
    return TrainOutputs(
        v_f_D=v_f_D,
        v_c_D=v_c_D,
        logits_f=pool_and_logits(v_f_D, params),
        logits_c=pool_and_logits(v_c_D, params),
        s_c=consistency_matrix(v_f_D, v_c_D),
    )


def infer_features(foggy, params: ModelParams) -> Tensor:
    """Foggy-only enhanced embedding ``v_f_D``; the foggy stream fills every clean slot."""
    v_f = encode_frames(foggy, params)
    if "FAS" in params.components:
        _, v_f = fog_aware_selection(v_f, v_f)
    if "ME" in params.components:
        _, v_f = mutual_enhancement(v_f, v_f, params)
    return v_f


def infer_logits(foggy, params: ModelParams) -> Tensor:
    return pool_and_logits(infer_features(foggy, params), params)


def infer_embedding(foggy, params: ModelParams) -> np.ndarray:
    """Pooled, unit-norm video embedding used for classification."""
    return pool(infer_features(foggy, params)).data


def forward_infer(foggy, params: ModelParams):
    """Predicted class index (an array of indices for batched input)."""
    pred = classify(infer_logits(foggy, params))
    frames = _frames_array(foggy)
    return int(np.asarray(pred).reshape(-1)[0]) if frames.ndim == 3 else pred


# -- checkpoints -----------------------------------------------------------------------


def save_checkpoint(params: ModelParams, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, t in params.tensors().items():
        nx.write_fvt(out_dir / f"{name}.fvt", t.data)
    meta = {
        "d": params.d,
        "C": params.C,
        "heads": params.heads,
        "encoder_kind": params.encoder_kind,
        "seed": params.seed,
        "logit_scale": float(params.logit_scale.data[0]),
        "frame_shape": list(params.frame_shape),
        "components": sorted(params.components),
        "class_names": params.class_names,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out_dir


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    learn_enc = meta["encoder_kind"] == "learnable"
    arrays = {name: nx.read_fvt(path / f"{name}.fvt") for name in PARAM_NAMES}
    grads = {name: True for name in PARAM_NAMES}
    grads["W_e"] = grads["b_e"] = learn_enc
    return ModelParams(
        **{name: Tensor(arrays[name], requires_grad=grads[name]) for name in PARAM_NAMES},
        frame_shape=tuple(meta["frame_shape"]),
        encoder_kind=meta["encoder_kind"],
        heads=meta["heads"],
        seed=meta["seed"],
        components=frozenset(meta["components"]),
        class_names=list(meta.get("class_names", [])),
    )
