"""Random affine draws, warping, and channel normalization."""

import numpy as np
import numpy.testing as npt
import pytest

from stdense import ShapeError, Tensor
from stdense.augment import (
    AugmentSpec,
    NormStats,
    apply_affine,
    denormalize,
    normalize,
    random_affine_params,
)
from stdense.stn import AffineParams

F32 = np.float32

IDENTITY_SPEC = AugmentSpec(rot_range=(0, 0), trans_range=(0, 0),
                            scale_range=(1, 1))


def recover_draw(theta):
    """Invert the sampling-matrix construction back to (angle, t1, t2, s)."""
    m = theta.theta[:, :2]
    v = theta.theta[:, 2]
    s = 1.0 / np.sqrt(np.linalg.det(m))
    angle = np.degrees(np.arctan2(m[1, 0], m[0, 0]))
    t = -np.linalg.solve(m, v) / 2.0
    return angle, t[0], t[1], s


# --- draws ----------------------------------------------------------------

def test_collapsed_ranges_give_exact_identity():
    theta = random_affine_params(IDENTITY_SPEC, np.random.default_rng(0))
    npt.assert_array_equal(theta.theta, AffineParams.identity().theta)


def test_quarter_turn_matrix():
    spec = AugmentSpec(rot_range=(90, 90), trans_range=(0, 0),
                       scale_range=(1, 1))
    theta = random_affine_params(spec, np.random.default_rng(0))
    npt.assert_allclose(theta.theta, [[0, -1, 0], [1, 0, 0]], atol=1e-12)


def test_draws_deterministic_for_fixed_state():
    a = random_affine_params(AugmentSpec(), np.random.default_rng(7))
    b = random_affine_params(AugmentSpec(), np.random.default_rng(7))
    npt.assert_array_equal(a.theta, b.theta)


def test_draw_ranges_and_means():
    spec = AugmentSpec()
    rng = np.random.default_rng(1)
    draws = np.array([recover_draw(random_affine_params(spec, rng))
                      for _ in range(100_000)])
    angles, t1, t2, scales = draws.T
    assert angles.min() >= -180 and angles.max() <= 180
    assert t1.min() >= -0.25 - 1e-12 and t1.max() <= 0.25 + 1e-12
    assert t2.min() >= -0.25 - 1e-12 and t2.max() <= 0.25 + 1e-12
    assert scales.min() >= 0.5 - 1e-12 and scales.max() <= 1.0 + 1e-12
    # uniform-draw means sit near range midpoints
    assert abs(angles.mean()) < 2.0
    assert abs(t1.mean()) < 0.005 and abs(t2.mean()) < 0.005
    assert abs(scales.mean() - 0.75) < 0.005


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(rot_range=(10, -10))
    with pytest.raises(ValueError):
        AugmentSpec(scale_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentSpec(trans_range=(np.nan, 0.1))
    with pytest.raises(ValueError):
        AugmentSpec(seed=-1)


# --- apply_affine -----------------------------------------------------------

def test_identity_warp_is_identity():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(0, 1, (2, 3, 9, 9)).astype(F32))
    out = apply_affine(x, [AffineParams.identity()] * 2)
    npt.assert_allclose(out.data, x.data, atol=1e-5)


def test_half_turn_twice_returns_original():
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(F32))
    half_turn = [AffineParams.rotation(180.0)]
    once = apply_affine(x, half_turn)
    twice = apply_affine(once, half_turn)
    npt.assert_allclose(twice.data, x.data, atol=2e-4)


def test_half_scale_shrinks_content_with_zero_borders():
    x = Tensor(np.ones((1, 3, 8, 8), F32))
    spec = AugmentSpec(rot_range=(0, 0), trans_range=(0, 0),
                       scale_range=(0.5, 0.5))
    theta = random_affine_params(spec, np.random.default_rng(0))
    out = apply_affine(x, [theta]).data
    npt.assert_array_equal(out[:, :, 0, :], 0.0)  # border rows sample outside
    npt.assert_array_equal(out[:, :, :, 0], 0.0)
    npt.assert_allclose(out[:, :, 3:5, 3:5], 1.0, atol=1e-6)  # central content
    assert 0.2 < out.mean() < 0.35  # content area shrank to about a quarter


def test_positive_translation_moves_content_right_and_down():
    img = np.zeros((1, 3, 9, 9), F32)
    img[0, :, 4, 4] = 1.0
    spec = AugmentSpec(rot_range=(0, 0), trans_range=(0.25, 0.25),
                       scale_range=(1, 1))  # both axes draw t = 0.25
    theta = random_affine_params(spec, np.random.default_rng(0))
    out = apply_affine(Tensor(img), [theta]).data
    # 0.25 of the 9-pixel span is exactly two pixels along each axis
    assert np.unravel_index(out[0, 0].argmax(), (9, 9)) == (6, 6)
    npt.assert_allclose(out[0, 0, 6, 6], 1.0, atol=1e-6)


def test_apply_affine_shape_errors():
    with pytest.raises(ShapeError):
        apply_affine(Tensor(np.ones((3, 8, 8), F32)),
                     [AffineParams.identity()])


# --- normalization ----------------------------------------------------------

def test_mean_pixel_normalizes_to_zero():
    stats = NormStats()
    img = np.zeros((1, 3, 2, 2), F32)
    img[0, 0] = 0.485
    out = normalize(Tensor(img), stats)
    npt.assert_allclose(out.data[0, 0], 0.0, atol=1e-6)


def test_all_zero_image_normalizes_to_channel_constants():
    stats = NormStats()
    out = normalize(Tensor(np.zeros((2, 3, 4, 4), F32)), stats)
    want = (-stats.mean / stats.std).astype(F32)
    for c in range(3):
        npt.assert_allclose(out.data[:, c], want[c], atol=1e-6)


def test_denormalize_inverts_normalize():
    rng = np.random.default_rng(4)
    stats = NormStats()
    x = Tensor(rng.uniform(0, 1, (2, 3, 5, 5)).astype(F32))
    back = denormalize(normalize(x, stats), stats)
    npt.assert_allclose(back.data, x.data, atol=1e-6)


def test_stats_validation():
    with pytest.raises(ValueError):
        NormStats(std=(0.2, 0.0, 0.2))
    with pytest.raises(ShapeError):
        NormStats(mean=(0.5, 0.5))
    with pytest.raises(ShapeError):
        normalize(Tensor(np.zeros((1, 4, 2, 2), F32)), NormStats())
