import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from donlab.augment import (CANONICAL_ORDER, GEOMETRIC, PHOTOMETRIC, AugmentationSpec, AugmentConfig, Step,
                            apply_augmentation, remap_correspondences, sample_augmentation_sequence)
from donlab.geometry import PixelPairs
from donlab.scenegen import value_noise

GOLDEN = Path(__file__).parent / "golden"
W = H = 64


def noise_image(seed=0, size=W):
    v, u = np.mgrid[0:size, 0:size]
    pts = np.stack([u.ravel() / 3.0, v.ravel() / 3.0, np.zeros(size * size)], axis=1)
    chans = [value_noise(pts, seed + c) for c in range(3)]
    return (np.stack(chans, axis=1).reshape(size, size, 3) * 255).astype(np.uint8)


def spec_of(*steps):
    return AugmentationSpec(tuple(Step(n, p) for n, p in steps), W, H)


def all_pixels():
    v, u = np.mgrid[0:H, 0:W]
    return np.stack([u.ravel(), v.ravel()], axis=1)


# --- sampling -------------------------------------------------------------------

def test_zero_probabilities_give_identity():
    cfg = AugmentConfig(**{f"p_{n}": 0.0 for n in CANONICAL_ORDER})
    spec = sample_augmentation_sequence(cfg, np.random.default_rng(0))
    assert spec.is_identity and spec.steps == ()


def test_hflip_only():
    spec = sample_augmentation_sequence(AugmentConfig.only("hflip"), np.random.default_rng(0))
    assert spec.names == ["hflip"]


def test_defaults_match_golden():
    rng = np.random.default_rng(99)
    got = [sample_augmentation_sequence(AugmentConfig(), rng).to_dict() for _ in range(5)]
    golden = json.loads((GOLDEN / "augment_specs.json").read_text())
    assert json.loads(json.dumps(got)) == golden


@given(st.integers(0, 10_000))
def test_sequence_in_canonical_order_and_deterministic(seed):
    a = sample_augmentation_sequence(AugmentConfig(), np.random.default_rng(seed))
    b = sample_augmentation_sequence(AugmentConfig(), np.random.default_rng(seed))
    assert a.to_dict() == b.to_dict()
    order = [CANONICAL_ORDER.index(n) for n in a.names]
    assert order == sorted(order)


def test_inclusion_frequency_matches_probability():
    rng = np.random.default_rng(1)
    counts = dict.fromkeys(CANONICAL_ORDER, 0)
    n = 2000
    for _ in range(n):
        for name in sample_augmentation_sequence(AugmentConfig(), rng).names:
            counts[name] += 1
    cfg = AugmentConfig()
    for name, c in counts.items():
        p = cfg.probability(name)
        assert abs(c / n - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        AugmentConfig(p_blur=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(enabled=("sharpen",))
    with pytest.raises(ValueError):
        AugmentConfig(apply_to="B_only")


def test_spec_dict_round_trip():
    spec = sample_augmentation_sequence(AugmentConfig.only(*GEOMETRIC), np.random.default_rng(3))
    back = AugmentationSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    np.testing.assert_allclose(back.homography, spec.homography, rtol=1e-12)


# --- application --------------------------------------------------------------------

def test_identity_is_bit_identical():
    img = noise_image()
    out = apply_augmentation(img, AugmentationSpec.identity(W, H))
    assert out.tobytes() == img.tobytes() and out is not img


def test_hflip_moves_columns():
    img = noise_image()
    out = apply_augmentation(img, spec_of(("hflip", {})))
    np.testing.assert_array_equal(out, img[:, ::-1])


def test_vflip_moves_rows():
    img = noise_image()
    np.testing.assert_array_equal(apply_augmentation(img, spec_of(("vflip", {}))), img[::-1])


def test_grayscale_is_rounded_luma():
    img = noise_image(5)
    out = apply_augmentation(img, spec_of(("grayscale", {})))
    r, g, b = (img[..., c].astype(np.int64) for c in range(3))
    expected = ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)  # exact half-up rounding
    for c in range(3):
        np.testing.assert_array_equal(out[..., c], expected)


def test_output_size_preserved():
    img = noise_image()
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = sample_augmentation_sequence(AugmentConfig(), rng)
        out = apply_augmentation(img, spec)
        assert out.shape == img.shape and out.dtype == np.uint8


def test_empty_image_rejected():
    with pytest.raises(ValueError):
        apply_augmentation(np.zeros((0, 0, 3), np.uint8), spec_of(("hflip", {})))


def test_out_of_domain_is_black():
    img = np.full((H, W, 3), 200, np.uint8)
    out = apply_augmentation(img, spec_of(("rotation", {"angle": 45.0})))
    assert (out[0, 0] == 0).all() and (out[H // 2, W // 2] == 200).all()


def test_resize_crop_scales_back():
    from scipy.ndimage import map_coordinates

    img = noise_image()
    spec = spec_of(("resize_crop", {"x0": 16.0, "y0": 16.0, "w": 32.0, "h": 32.0}))
    np.testing.assert_allclose(spec.map_points(np.array([[16, 16], [47, 47]])), [[0.5, 0.5], [62.5, 62.5]])
    # a 2x zoom on the centre: output pixel X samples source (X + 31.5) / 2
    out = apply_augmentation(img, spec).astype(float)
    v, u = np.mgrid[0:H, 0:W]
    coords = [(v + 31.5) / 2, (u + 31.5) / 2]
    expected = np.stack([map_coordinates(img[..., c].astype(float), coords, order=1) for c in range(3)], axis=-1)
    assert np.abs(out - np.floor(expected + 0.5)).max() <= 1


# --- remapping ---------------------------------------------------------------------------

def test_identity_remap():
    pairs = PixelPairs(np.array([[1, 2], [30, 40]]), np.array([[5, 6], [63, 0]]))
    ident = AugmentationSpec.identity(W, H)
    out, ok = remap_correspondences(pairs, ident, ident)
    np.testing.assert_array_equal(out.a, pairs.a)
    np.testing.assert_array_equal(out.b, pairs.b)
    assert ok.all()


def test_hflip_remap_example():
    pairs = PixelPairs(np.array([[10, 20]]), np.array([[10, 20]]))
    out, ok = remap_correspondences(pairs, spec_of(("hflip", {})), AugmentationSpec.identity(W, H))
    assert tuple(out.a[0]) == (53, 20) and tuple(out.b[0]) == (10, 20) and ok[0]


def test_rotation_90_preserves_color_at_remapped_pixels():
    img = noise_image(2)
    spec = spec_of(("rotation", {"angle": 90.0}))
    out = apply_augmentation(img, spec)
    pts = all_pixels()
    moved, ok = remap_correspondences(PixelPairs(pts, pts), spec, AugmentationSpec.identity(W, H))
    p, q = pts[ok], moved.a[ok]
    same = (out[q[:, 1], q[:, 0]] == img[p[:, 1], p[:, 0]]).all(axis=1)
    assert ok.mean() > 0.99 and same.mean() >= 0.99


def test_photometric_only_remap_is_identity():
    pts = all_pixels()
    spec = spec_of(("blur", {"sigma": 1.0, "kernel": 5}), ("grayscale", {}))
    out, ok = remap_correspondences(PixelPairs(pts, pts), spec, spec)
    np.testing.assert_array_equal(out.a, pts)
    assert ok.all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_geometric_map_inverts(seed):
    spec = sample_augmentation_sequence(AugmentConfig.only(*GEOMETRIC), np.random.default_rng(seed))
    pts = all_pixels()[::7].astype(float)
    h = spec.homography
    fwd = np.c_[pts, np.ones(len(pts))] @ h.T
    fwd = fwd[:, :2] / fwd[:, 2:]
    back = np.c_[fwd, np.ones(len(pts))] @ np.linalg.inv(h).T
    back = back[:, :2] / back[:, 2:]
    assert np.abs(back - pts).max() < 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_crop_invalidation_bounded_by_area(seed):
    rng = np.random.default_rng(seed)
    spec = sample_augmentation_sequence(AugmentConfig.only("resize_crop"), rng)
    p = spec.steps[0].params
    pts = rng.integers(0, W, size=(2000, 2))
    _, ok = remap_correspondences(PixelPairs(pts, pts), spec, AugmentationSpec.identity(W, H))
    ratio = p["w"] * p["h"] / (W * H)
    assert 1 - ok.mean() <= 1 - ratio + 0.05


@given(st.integers(0, 10_000))
def test_photometric_steps_do_not_touch_coordinates(seed):
    spec = sample_augmentation_sequence(AugmentConfig.only(*PHOTOMETRIC), np.random.default_rng(seed))
    np.testing.assert_array_equal(spec.homography, np.eye(3))
