import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fognet import fogsynth as fs
from fognet.errors import ParameterError
from fognet.fogsynth import ActionClassSpec, Clip, FogParams

SWAY = fs.DEFAULT_CLASSES[0]


def test_asm_scalar_case():
    clip = Clip(np.full((2, 1, 1), 0.8), np.full((1, 1), math.log(2)))
    out = fs.fog_apply(clip, FogParams(beta_fog=1.0, airlight=1.0))
    assert np.all(np.abs(out.frames - 0.9) <= 1e-12)


def test_zero_fog_is_identity_bit_exact():
    clip = fs.render_action_clip(SWAY, seed=3)
    out = fs.fog_apply(clip, FogParams(beta_fog=0.0))
    assert np.array_equal(out.frames, clip.frames)
    assert np.array_equal(out.depth, clip.depth)


def test_saturation_to_airlight():
    clip = Clip(np.random.default_rng(0).uniform(size=(2, 4, 4)), np.full((4, 4), 1e6))
    out = fs.fog_apply(clip, FogParams(beta_fog=1.0, airlight=0.7))
    np.testing.assert_allclose(out.frames, 0.7, atol=1e-12)


def test_negative_beta_rejected():
    with pytest.raises(ParameterError):
        FogParams(beta_fog=-0.1)


def test_presets():
    assert fs.FOG_PRESETS["light"] == FogParams(0.3, 0.9)
    assert fs.FOG_PRESETS["dense"] == FogParams(0.8, 0.9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 1000))
def test_contrast_non_increasing_in_beta(b1, b2, seed):
    b1, b2 = sorted((b1, b2))
    frames = np.random.default_rng(seed).uniform(size=(3, 6, 6))
    clip = Clip(frames, np.full((6, 6), 2.0))
    s1 = fs.fog_apply(clip, FogParams(b1)).frames.std(axis=(1, 2))
    s2 = fs.fog_apply(clip, FogParams(b2)).frames.std(axis=(1, 2))
    assert np.all(s2 <= s1 + 1e-12)


def test_render_deterministic_and_valid():
    a = fs.render_action_clip(SWAY, seed=11, view=2)
    b = fs.render_action_clip(SWAY, seed=11, view=2)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.depth, b.depth)
    assert a.frames.shape == (8, 32, 32)
    assert a.frames.min() >= 0 and a.frames.max() <= 1
    assert set(np.unique(a.depth)) <= {fs.SPRITE_DEPTH, fs.BACKGROUND_DEPTH}
    assert np.any(a.depth == fs.SPRITE_DEPTH)


def test_static_jitter_zero_amplitude_is_still():
    clip = fs.render_action_clip(ActionClassSpec("still", "static_jitter", 0.0, 8), seed=5)
    assert all(np.array_equal(clip.frames[0], f) for f in clip.frames)


@pytest.mark.parametrize("view,axes", [(1, (-1,)), (2, (-2,)), (3, (-2, -1))])
def test_views_are_fixed_flips(view, axes):
    base = fs.render_action_clip(SWAY, seed=9, view=0)
    other = fs.render_action_clip(SWAY, seed=9, view=view)
    assert np.array_equal(other.frames, np.flip(base.frames, axis=axes))
    assert np.array_equal(other.depth, np.flip(base.depth, axis=axes))


def test_out_of_frame_amplitude_rejected():
    with pytest.raises(ParameterError):
        fs.render_action_clip(ActionClassSpec("big", "oscillate_horizontal", 14.0, 8), seed=0)


def test_invalid_view_and_short_clip_rejected():
    with pytest.raises(ParameterError):
        fs.render_action_clip(SWAY, seed=0, view=4)
    with pytest.raises(ParameterError):
        fs.render_action_clip(SWAY, seed=0, T=1)


@pytest.mark.parametrize("spec", fs.DEFAULT_CLASSES, ids=lambda s: s.name)
def test_default_classes_fit_frame(spec):
    clip = fs.render_action_clip(spec, seed=1)
    assert clip.frames.shape == (8, 32, 32)


def test_dataset_counts_and_split():
    samples = fs.generate_dataset(clips_per_class=40, seed=0)
    assert len(samples) == 6 * 40 * 2 * 4
    for label in range(6):
        for intensity in fs.INTENSITIES:
            for view in range(4):
                group = [s for s in samples if (s.label, s.intensity, s.view) == (label, intensity, view)]
                assert sum(s.split == "train" for s in group) == 32
                assert sum(s.split == "test" for s in group) == 8


def test_dataset_pairing_follows_asm():
    samples = fs.generate_dataset(clips_per_class=2, views=[0, 3], seed=4)
    for s in samples:
        fog = fs.FOG_PRESETS[s.intensity]
        t = np.exp(-fog.beta_fog * s.clean.depth)
        assert s.foggy.frames.shape == s.clean.frames.shape
        assert np.array_equal(s.foggy.depth, s.clean.depth)
        np.testing.assert_array_equal(s.foggy.frames, np.clip(s.clean.frames * t + fog.airlight * (1 - t), 0, 1))


def test_zero_fog_preset_gives_identical_pairs():
    samples = fs.generate_dataset(clips_per_class=2, intensities=["light"], views=[0], presets={"light": FogParams(0.0)})
    assert all(np.array_equal(s.foggy.frames, s.clean.frames) for s in samples)


def test_dataset_rejects_bad_arguments():
    with pytest.raises(ParameterError):
        fs.generate_dataset(clips_per_class=1)
    with pytest.raises(ParameterError):
        fs.generate_dataset(split_ratio=1.0)
    with pytest.raises(ParameterError):
        fs.generate_dataset(classes=[])
    with pytest.raises(ParameterError):
        fs.generate_dataset(intensities=[])


def test_manifest_roundtrip_and_determinism(tmp_path):
    samples = fs.generate_dataset(classes=fs.DEFAULT_CLASSES[:2], clips_per_class=3, views=[0, 1], seed=2)
    p1 = fs.write_manifest(samples, tmp_path / "a")
    p2 = fs.write_manifest(fs.generate_dataset(classes=fs.DEFAULT_CLASSES[:2], clips_per_class=3, views=[0, 1], seed=2), tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    for f in sorted((tmp_path / "a" / "clips").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "clips" / f.name).read_bytes()

    rec = json.loads(p1.read_text().splitlines()[0])
    assert set(rec) == {"id", "foggy_path", "clean_path", "label", "label_name", "intensity", "view", "split"}
    back = fs.read_manifest(p1)
    assert [s.id for s in back] == [s.id for s in samples]
    for a, b in zip(samples, back):
        np.testing.assert_array_equal(b.foggy.frames, a.foggy.frames.astype(np.float32))
        assert (a.label, a.intensity, a.view, a.split) == (b.label, b.intensity, b.view, b.split)


def test_clean_only_feeds_clean_to_both_streams():
    samples = fs.generate_dataset(classes=fs.DEFAULT_CLASSES[:2], clips_per_class=2, views=[0])
    for s in fs.clean_only(samples):
        assert s.foggy is s.clean
