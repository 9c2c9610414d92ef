"""Paired clean/foggy toy action clips built with the atmospheric scattering model.

A clean clip is a Gaussian blob moving over a smooth textured background.
Fog is added per pixel as ``I = J * t + A * (1 - t)`` with transmission
``t = exp(-beta_fog * depth)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError
from .numerics import read_fvt, write_fvt

MOTION_KINDS = (
    "oscillate_horizontal",
    "oscillate_vertical",
    "circle",
    "diagonal",
    "grow_shrink",
    "static_jitter",
)
INTENSITIES = ("light", "dense")
NUM_VIEWS = 4
SPRITE_DEPTH = 1.0
BACKGROUND_DEPTH = 3.0
SPRITE_SIGMA = 2.0
CENTER_JITTER = 2.0
FRAMES_SUFFIX = ".frames.fvt"
DEPTH_SUFFIX = ".depth.fvt"

# generation sub-stream tags for np.random.default_rng([seed, tag, ...])
_RENDER_STREAM = 11
_SPLIT_STREAM = 12
_CLIP_STREAM = 13


@dataclass(frozen=True)
class FogParams:
    beta_fog: float
    airlight: float = 0.9

    def __post_init__(self):
        if self.beta_fog < 0:
            raise ParameterError(f"beta_fog must be >= 0, got {self.beta_fog}")
        if not 0.0 <= self.airlight <= 1.0:
            raise ParameterError(f"airlight must lie in [0, 1], got {self.airlight}")


FOG_PRESETS = {
    "light": FogParams(beta_fog=0.3, airlight=0.9),
    "dense": FogParams(beta_fog=0.8, airlight=0.9),
}


@dataclass
class Clip:
    frames: np.ndarray  # (T, H, W) in [0, 1]
    depth: np.ndarray  # (H, W), > 0
    fps: int = 25

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] < 2:
            raise ParameterError(f"clip frames must be (T>=2, H, W), got {self.frames.shape}")
        if self.depth.shape != self.frames.shape[1:]:
            raise ParameterError(f"depth {self.depth.shape} does not match frames {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ActionClassSpec:
    name: str
    motion_kind: str
    amplitude: float
    period: float

    def __post_init__(self):
        if self.motion_kind not in MOTION_KINDS:
            raise ParameterError(f"unknown motion kind {self.motion_kind!r}")


DEFAULT_CLASSES = (
    ActionClassSpec("sway", "oscillate_horizontal", amplitude=7.0, period=8.0),
    ActionClassSpec("bob", "oscillate_vertical", amplitude=7.0, period=8.0),
    ActionClassSpec("spin", "circle", amplitude=6.0, period=8.0),
    ActionClassSpec("lunge", "diagonal", amplitude=6.0, period=8.0),
    ActionClassSpec("breathe", "grow_shrink", amplitude=0.7, period=8.0),
    ActionClassSpec("fidget", "static_jitter", amplitude=3.0, period=8.0),
)


@dataclass
class PairedSample:
    id: str
    foggy: Clip
    clean: Clip
    label: int
    intensity: str
    view: int
    split: str
    label_name: str = ""


def fog_apply(clean: Clip, fog: FogParams) -> Clip:
    """Render ``clean`` through homogeneous fog."""
    if fog.beta_fog < 0:
        raise ParameterError(f"beta_fog must be >= 0, got {fog.beta_fog}")
    t = np.exp(-fog.beta_fog * clean.depth)
    foggy = clean.frames * t + fog.airlight * (1.0 - t)
    return Clip(np.clip(foggy, 0.0, 1.0), clean.depth.copy(), clean.fps)


def _background(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    bg = np.full((H, W), 0.35)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.08)
        bg += amp * np.sin(2 * np.pi * (fy * yy / H + fx * xx / W) + phase)
    return np.clip(bg, 0.0, 1.0)


def _trajectory(spec: ActionClassSpec, rng: np.random.Generator, T: int):
    """Per-frame sprite offsets (dy, dx) from the clip centre and per-frame sigma."""
    t = np.arange(T, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * t / spec.period + phase)
    zeros = np.zeros(T)
    sigma = np.full(T, SPRITE_SIGMA)
    a = spec.amplitude
    kind = spec.motion_kind
    if kind == "oscillate_horizontal":
        dy, dx = zeros, a * wave
    elif kind == "oscillate_vertical":
        dy, dx = a * wave, zeros
    elif kind == "circle":
        dy, dx = a * wave, a * np.cos(2 * np.pi * t / spec.period + phase)
    elif kind == "diagonal":
        dy, dx = a * wave, a * wave
    elif kind == "grow_shrink":
        dy, dx = zeros, zeros
        sigma = SPRITE_SIGMA * (1.0 + a * wave)
    else:  # static_jitter
        jitter = rng.uniform(-1.0, 1.0, size=(2, T))
        dy, dx = a * jitter[0], a * jitter[1]
    return dy, dx, sigma


def _check_bounds(spec: ActionClassSpec, H: int, W: int) -> None:
    if spec.amplitude < 0:
        raise ParameterError(f"{spec.name}: amplitude must be >= 0")
    if spec.motion_kind == "grow_shrink":
        if spec.amplitude >= 1.0:
            raise ParameterError(f"{spec.name}: grow_shrink amplitude must be < 1")
        reach = CENTER_JITTER + 2 * SPRITE_SIGMA * (1.0 + spec.amplitude)
    else:
        reach = CENTER_JITTER + spec.amplitude + 2 * SPRITE_SIGMA
    half = (min(H, W) - 1) / 2.0
    if reach > half:
        raise ParameterError(
            f"{spec.name}: amplitude {spec.amplitude} leaves the {H}x{W} frame (reach {reach:.2f} > {half:.2f})"
        )


def _apply_view(a: np.ndarray, view: int) -> np.ndarray:
    if view == 0:
        return a
    if view == 1:
        return a[..., :, ::-1].copy()
    if view == 2:
        return a[..., ::-1, :].copy()
    return a[..., ::-1, ::-1].copy()


def render_action_clip(spec: ActionClassSpec, seed: int, view: int = 0, T: int = 8, H: int = 32, W: int = 32) -> Clip:
    """Deterministically render one clean clip of ``spec`` seen from ``view``.

    The depth map marks every pixel the sprite covers in any frame (its swept
    footprint) at depth 1.0 and the rest at 3.0, so depth stays static per clip.
    """
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    if not 0 <= view < NUM_VIEWS:
        raise ParameterError(f"view must be in [0, {NUM_VIEWS}), got {view}")
    _check_bounds(spec, H, W)
    rng = np.random.default_rng([seed, _RENDER_STREAM])
    bg = _background(rng, H, W)
    cy = (H - 1) / 2.0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)
    cx = (W - 1) / 2.0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)
    brightness = rng.uniform(0.85, 1.0)
    dy, dx, sigma = _trajectory(spec, rng, T)

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    frames = np.empty((T, H, W))
    footprint = np.zeros((H, W), dtype=bool)
    for i in range(T):
        r2 = (yy - cy - dy[i]) ** 2 + (xx - cx - dx[i]) ** 2
        alpha = np.exp(-r2 / (2 * sigma[i] ** 2))
        frames[i] = bg * (1.0 - alpha) + brightness * alpha
        footprint |= alpha >= 0.5
    depth = np.where(footprint, SPRITE_DEPTH, BACKGROUND_DEPTH)
    return Clip(_apply_view(np.clip(frames, 0.0, 1.0), view), _apply_view(depth, view))


def _check_nonempty(**groups) -> None:
    for name, group in groups.items():
        if not group:
            raise ParameterError(f"{name} must not be empty")


def split_indices(n: int, ratio: float, rng: np.random.Generator) -> tuple[set[int], set[int]]:
    """Shuffle ``range(n)`` and cut it so both sides are non-empty."""
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    order = rng.permutation(n)
    return set(order[:n_train].tolist()), set(order[n_train:].tolist())


def generate_dataset(
    classes: Sequence[ActionClassSpec] = DEFAULT_CLASSES,
    clips_per_class: int = 40,
    intensities: Iterable[str] = INTENSITIES,
    views: Iterable[int] = range(NUM_VIEWS),
    split_ratio: float = 0.8,
    seed: int = 0,
    T: int = 8,
    H: int = 32,
    W: int = 32,
    presets: dict[str, FogParams] | None = None,
) -> list[PairedSample]:
    """Build FogAct-style triplets for every (class, clip, intensity, view).

    The split is decided per clip index, so all views and intensities of one
    recorded clip land on the same side.
    """
    intensities = [i for i in INTENSITIES if i in set(intensities)] + sorted(set(intensities) - set(INTENSITIES))
    views = sorted(set(views))
    _check_nonempty(classes=classes, intensities=intensities, views=views)
    if clips_per_class < 2:
        raise ParameterError(f"clips_per_class must be >= 2, got {clips_per_class}")
    if not 0.0 < split_ratio < 1.0:
        raise ParameterError(f"split_ratio must lie in (0, 1), got {split_ratio}")
    presets = FOG_PRESETS if presets is None else presets
    for name in intensities:
        if name not in presets:
            raise ParameterError(f"no fog preset for intensity {name!r}")
    for v in views:
        if not 0 <= v < NUM_VIEWS:
            raise ParameterError(f"view must be in [0, {NUM_VIEWS}), got {v}")

    samples = []
    for label, spec in enumerate(classes):
        train_idx, _ = split_indices(clips_per_class, split_ratio, np.random.default_rng([seed, _SPLIT_STREAM, label]))
        for idx in range(clips_per_class):
            clip_seed = int(np.random.default_rng([seed, _CLIP_STREAM, label, idx]).integers(2**31))
            split = "train" if idx in train_idx else "test"
            for view in views:
                clean = render_action_clip(spec, clip_seed, view, T, H, W)
                for intensity in intensities:
                    samples.append(
                        PairedSample(
                            id=f"c{label:02d}_i{idx:03d}_{intensity}_v{view}",
                            foggy=fog_apply(clean, presets[intensity]),
                            clean=clean,
                            label=label,
                            intensity=intensity,
                            view=view,
                            split=split,
                            label_name=spec.name,
                        )
                    )
    return samples


def clean_only(samples: Sequence[PairedSample]) -> list[PairedSample]:
    """Copies of ``samples`` whose foggy slot holds the clean clip."""
    return [replace(s, foggy=s.clean) for s in samples]


# -- manifest I/O ---------------------------------------------------------------


def write_manifest(samples: Sequence[PairedSample], out_dir) -> Path:
    """Store clips as FVT1 files and write ``manifest.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    written: set[str] = set()
    lines = []
    for s in samples:
        stem = s.id.rsplit("_", 2)[0]
        foggy_path = f"clips/{s.id}_foggy"
        clean_path = f"clips/{stem}_v{s.view}_clean"
        for rel, clip in ((foggy_path, s.foggy), (clean_path, s.clean)):
            if rel in written:
                continue
            write_fvt(out_dir / (rel + FRAMES_SUFFIX), clip.frames)
            write_fvt(out_dir / (rel + DEPTH_SUFFIX), clip.depth)
            written.add(rel)
        record = {
            "id": s.id,
            "foggy_path": foggy_path,
            "clean_path": clean_path,
            "label": s.label,
            "label_name": s.label_name,
            "intensity": s.intensity,
            "view": s.view,
            "split": s.split,
        }
        lines.append(json.dumps(record))
    path = out_dir / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def _load_clip(root: Path, rel: str) -> Clip:
    return Clip(read_fvt(root / (rel + FRAMES_SUFFIX)), read_fvt(root / (rel + DEPTH_SUFFIX)))


def read_manifest(path) -> list[PairedSample]:
    """Load every sample listed in a ``manifest.jsonl`` file."""
    path = Path(path)
    root = path.parent
    cache: dict[str, Clip] = {}
    samples = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        for key in ("foggy_path", "clean_path"):
            if rec[key] not in cache:
                cache[rec[key]] = _load_clip(root, rec[key])
        samples.append(
            PairedSample(
                id=rec["id"],
                foggy=cache[rec["foggy_path"]],
                clean=cache[rec["clean_path"]],
                label=int(rec["label"]),
                intensity=rec["intensity"],
                view=int(rec["view"]),
                split=rec["split"],
                label_name=rec.get("label_name", ""),
            )
        )
    return samples
