"""Random affine augmentation and channel normalization.

An augmentation draw picks a rotation angle (degrees), per-axis translation
fractions of the image size, and a content scale factor, then builds the
*sampling* matrix consumed by affine_grid — the inverse of the content motion.
Content order is scale, then rotate, then translate; positive angles turn the
content counterclockwise on screen, positive translations move it right/down,
and s < 1 shrinks it (zero-filled borders).

In the normalized [-1,1] frame a translation by fraction t of the image size
is a shift of 2t, hence the factors of 2 below.
"""

import numpy as np

from .stn import AffineParams, affine_grid, bilinear_sample, theta_batch
from .tensor import ShapeError, Tensor

__all__ = [
    "AugmentSpec",
    "NormStats",
    "random_affine_params",
    "apply_affine",
    "normalize",
    "denormalize",
]


class AugmentSpec:
    """Draw ranges for the random affine transform, plus the stream seed."""

    __slots__ = ("rot_range", "trans_range", "scale_range", "seed")

    def __init__(self, rot_range=(-180.0, 180.0), trans_range=(-0.25, 0.25),
                 scale_range=(0.5, 1.0), seed=0):
        for name, pair in (("rot_range", rot_range),
                           ("trans_range", trans_range),
                           ("scale_range", scale_range)):
            lo, hi = (float(pair[0]), float(pair[1]))
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} must be an ordered finite pair, got {pair}")
        if float(scale_range[0]) <= 0.0:
            raise ValueError(f"scale must stay positive, got {scale_range}")
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.rot_range = (float(rot_range[0]), float(rot_range[1]))
        self.trans_range = (float(trans_range[0]), float(trans_range[1]))
        self.scale_range = (float(scale_range[0]), float(scale_range[1]))
        self.seed = int(seed)


class NormStats:
    """Per-channel normalization statistics for 3-channel images."""

    __slots__ = ("mean", "std")

    def __init__(self, mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)):
        mean = np.asarray(mean, np.float64)
        std = np.asarray(std, np.float64)
        if mean.shape != (3,) or std.shape != (3,):
            raise ShapeError(
                f"stats must hold 3 channels, got {mean.shape} and {std.shape}")
        if not (std > 0).all():
            raise ValueError(f"std entries must be positive, got {std}")
        self.mean = mean
        self.std = std


def random_affine_params(spec, rng):
    """One random draw: angle, translation pair, scale — in that order — and
    the resulting sampling matrix (1/s)·Rot(angle) with shift −M·2t."""
    angle = rng.uniform(*spec.rot_range)
    t1 = rng.uniform(*spec.trans_range)
    t2 = rng.uniform(*spec.trans_range)
    s = rng.uniform(*spec.scale_range)
    zoom = AffineParams.scaling(1.0 / s)
    rot = AffineParams.rotation(angle)
    shift = AffineParams.translation(-2.0 * t1, -2.0 * t2)
    return zoom.compose(rot.compose(shift))


def apply_affine(image, theta):
    """Warp a [N,3,H,W] batch by per-image affine params (a list of
    AffineParams or a ready [N,2,3] tensor), preserving resolution."""
    if image.ndim != 4:
        raise ShapeError(f"apply_affine expects NCHW images, got {image.shape}")
    if not isinstance(theta, Tensor):
        theta = theta_batch(theta, image.dtype)
    grid = affine_grid(theta, image.shape[2], image.shape[3])
    return bilinear_sample(image, grid)


def _stats_operands(image, stats):
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected [N,3,H,W] images, got {image.shape}")
    mean = stats.mean.astype(image.dtype).reshape(1, 3, 1, 1)
    std = stats.std.astype(image.dtype).reshape(1, 3, 1, 1)
    return mean, std


def normalize(image, stats):
    """Per-channel (x − mean)/std; a data-pipeline step, carries no gradient."""
    mean, std = _stats_operands(image, stats)
    return Tensor((image.data - mean) / std, _check=False)


def denormalize(image, stats):
    """Exact-inverse companion of normalize: x·std + mean."""
    mean, std = _stats_operands(image, stats)
    return Tensor(image.data * std + mean, _check=False)
