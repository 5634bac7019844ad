"""Spatial transformer: localization CNN -> affine regressor -> sample grid
-> differentiable bilinear sampler, trainable end to end.

Coordinate conventions, fixed and relied on by the tests:

* normalized space is [-1,1] x [-1,1] with align-corners: pixel 0 maps to -1,
  the last pixel to +1; a single-pixel axis sits at 0
* a grid entry (u, v) is the *source* location sampled for that output pixel:
  u indexes width, v height
* sampling outside the image contributes zeros (black borders)
* the regressor's 6 outputs are the row-major 2x3 matrix
  [[a1, b1, a3], [b2, a2, b3]]; its zero-init bias [1,0,0,0,1,0] is the
  identity transform, bit-exact
"""

import numpy as np

from . import _kernels as K
from .tensor import (
    ShapeError,
    Tensor,
    _result,
    conv2d,
    kaiming_conv,
    kaiming_linear,
    linear,
    maxpool2x2,
    relu,
    reshape,
)

__all__ = [
    "AffineParams",
    "SampleGrid",
    "LocNetConfig",
    "LocNetParams",
    "affine_grid",
    "bilinear_sample",
    "init_locnet",
    "localization_forward",
    "stn_forward",
    "theta_batch",
]

IDENTITY_BIAS = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class AffineParams:
    """A 2x3 affine map of normalized coordinates: (u,v) = theta @ (x,y,1)."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (2, 3):
            raise ShapeError(f"affine params must be 2x3, got {theta.shape}")
        if not np.isfinite(theta).all():
            raise ValueError("affine params must be finite")
        self.theta = theta

    @classmethod
    def identity(cls):
        return cls([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    @classmethod
    def rotation(cls, degrees):
        """Counterclockwise rotation of the sampling frame, in degrees."""
        r = np.deg2rad(degrees)
        c, s = np.cos(r), np.sin(r)
        return cls([[c, -s, 0.0], [s, c, 0.0]])

    @classmethod
    def scaling(cls, sx, sy=None):
        sy = sx if sy is None else sy
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0]])

    @classmethod
    def translation(cls, tx, ty):
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty]])

    def matrix3(self):
        """The homogeneous 3x3 extension (last row 0 0 1)."""
        out = np.eye(3)
        out[:2] = self.theta
        return out

    def compose(self, other):
        """self applied after other: (self ∘ other)(p) = self(other(p))."""
        return AffineParams((self.matrix3() @ other.matrix3())[:2])

    def __repr__(self):
        return f"AffineParams({self.theta.tolist()})"


class SampleGrid:
    """Per-output-pixel source coordinates, shape [N, H_out, W_out, 2]."""

    __slots__ = ("coords",)

    def __init__(self, coords):
        if coords.ndim != 4 or coords.shape[-1] != 2:
            raise ShapeError(f"sample grid must be [N,H,W,2], got {coords.shape}")
        self.coords = coords

    @property
    def shape(self):
        return self.coords.shape


def theta_batch(params, dtype=np.float32):
    """Stack AffineParams into a [N,2,3] tensor (no gradient)."""
    arr = np.stack([p.theta for p in params]).astype(dtype)
    return Tensor(arr, _check=False)


def _axis_coords(size, dtype):
    # align-corners: endpoints at -1 and 1; a single pixel sits at 0
    if size == 1:
        return np.zeros(1, dtype)
    return np.linspace(-1.0, 1.0, size, dtype=dtype)


def affine_grid(theta, out_h, out_w):
    """Map a regular [-1,1] target grid through theta to source coordinates.

    theta is a [N,2,3] tensor; the result is a SampleGrid whose coords tensor
    participates in the backward graph (gradient flows to theta).
    """
    if not isinstance(theta, Tensor):
        raise TypeError("affine_grid expects a [N,2,3] Tensor")
    if theta.ndim != 3 or theta.shape[1:] != (2, 3):
        raise ShapeError(f"theta must be [N,2,3], got {theta.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be positive, got {out_h}x{out_w}")
    n = theta.shape[0]
    dt = theta.dtype
    xs = _axis_coords(out_w, dt)
    ys = _axis_coords(out_h, dt)
    base = np.empty((out_h * out_w, 3), dtype=dt)
    base[:, 0] = np.tile(xs, out_h)
    base[:, 1] = np.repeat(ys, out_w)
    base[:, 2] = 1.0
    # (u,v) rows: base [P,3] times theta[n] transposed -> [N,P,2]
    coords = np.einsum("pk,njk->npj", base, theta.data).reshape(n, out_h, out_w, 2)

    def grad_fn(gout):
        g = gout.reshape(n, out_h * out_w, 2)
        return (np.ascontiguousarray(np.einsum("npj,pk->njk", g, base)),)

    return SampleGrid(_result(np.ascontiguousarray(coords), (theta,), "affine_grid", grad_fn))


def bilinear_sample(img, grid):
    """Sample img at grid's source coordinates with bilinear interpolation.

    Out-of-range neighbor pixels contribute zero. Gradients flow to both the
    image values and the grid coordinates (hence to theta via affine_grid).
    """
    if not isinstance(grid, SampleGrid):
        raise TypeError("bilinear_sample expects a SampleGrid")
    coords = grid.coords
    if img.ndim != 4:
        raise ShapeError(f"bilinear_sample expects NCHW input, got {img.shape}")
    if img.shape[0] != coords.shape[0]:
        raise ShapeError(
            f"batch mismatch: image {img.shape[0]} vs grid {coords.shape[0]}")
    if img.dtype != coords.dtype:
        raise TypeError(f"bilinear_sample: mixed dtypes {img.dtype} and {coords.dtype}")
    out = K.bilinear_forward(img.data, coords.data)

    def grad_fn(gout):
        dimg, dgrid = K.bilinear_backward(img.data, coords.data,
                                          np.ascontiguousarray(gout))
        return (dimg if img.requires_grad else None,
                dgrid if coords.requires_grad else None)

    return _result(out, (img, coords), "bilinear_sample", grad_fn)


class LocNetConfig:
    """Architecture of the localization network."""

    __slots__ = ("conv_channels", "hidden")

    def __init__(self, conv_channels=(32, 32, 64, 64, 128), hidden=128):
        conv_channels = tuple(int(c) for c in conv_channels)
        if not conv_channels or min(conv_channels) < 1:
            raise ValueError(f"conv channel plan must be positive, got {conv_channels}")
        if hidden < 1:
            raise ValueError(f"hidden width must be positive, got {hidden}")
        self.conv_channels = conv_channels
        self.hidden = int(hidden)


class LocNetParams:
    """Weights of the localization network: conv stack plus the 2-layer regressor."""

    __slots__ = ("convs", "fc1_weight", "fc1_bias", "fc2_weight", "fc2_bias")

    def __init__(self, convs, fc1_weight, fc1_bias, fc2_weight, fc2_bias):
        self.convs = list(convs)
        self.fc1_weight = fc1_weight
        self.fc1_bias = fc1_bias
        self.fc2_weight = fc2_weight
        self.fc2_bias = fc2_bias

    def parameters(self):
        out = []
        for w in self.convs:
            out.extend(w.parameters())
        out.extend([self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias])
        return out

    def named_parameters(self, prefix="loc"):
        out = {}
        for i, w in enumerate(self.convs):
            out[f"{prefix}.conv{i}.kernels"] = w.kernels
            out[f"{prefix}.conv{i}.biases"] = w.biases
        out[f"{prefix}.fc1.weight"] = self.fc1_weight
        out[f"{prefix}.fc1.bias"] = self.fc1_bias
        out[f"{prefix}.fc2.weight"] = self.fc2_weight
        out[f"{prefix}.fc2.bias"] = self.fc2_bias
        return out


def _check_loc_spatial(h, w, n_stages):
    step = 2 ** n_stages
    if h % step or w % step or h < step or w < step:
        raise ShapeError(
            f"localization input {h}x{w} must be divisible by 2^{n_stages} = {step}")


def init_locnet(cfg, image_hw, in_channels=3, seed=0, dtype=np.float32):
    """Fresh localization weights; the final layer is zeroed with an identity
    bias so an untrained network regresses exactly the identity transform."""
    h, w = image_hw
    stages = len(cfg.conv_channels)
    _check_loc_spatial(h, w, stages)
    rng = np.random.default_rng(seed)
    convs = []
    ci = in_channels
    for co in cfg.conv_channels:
        convs.append(kaiming_conv(rng, co, ci, 3, 3, dtype))
        ci = co
    flat = cfg.conv_channels[-1] * (h // 2 ** stages) * (w // 2 ** stages)
    fc1_w, fc1_b = kaiming_linear(rng, flat, cfg.hidden, dtype)
    # damp the regressor's first layer: theta must drift from identity
    # slower than the classifier learns, or the warp leaves the image
    # before any useful gradient exists (zero padding kills it for good)
    fc1_w.data *= 0.25
    fc1_b.data *= 0.25
    fc2_w = Tensor(np.zeros((cfg.hidden, 6), dtype), requires_grad=True)
    fc2_b = Tensor(IDENTITY_BIAS.astype(dtype), requires_grad=True)
    return LocNetParams(convs, fc1_w, fc1_b, fc2_w, fc2_b)


def localization_forward(image, cfg, params):
    """Regress a [N,2,3] affine matrix from the image.

    Each stage is a 3x3/stride-1/pad-1 conv, a 2x2 maxpool, then ReLU, so the
    spatial size halves once per stage.
    """
    if image.ndim != 4:
        raise ShapeError(f"localization expects NCHW input, got {image.shape}")
    n, _c, h, w = image.shape
    _check_loc_spatial(h, w, len(cfg.conv_channels))
    x = image
    for cw in params.convs:
        x = relu(maxpool2x2(conv2d(x, cw, stride=1, pad=1)))
    x = reshape(x, (n, x.shape[1] * x.shape[2] * x.shape[3]))
    x = relu(linear(x, params.fc1_weight, params.fc1_bias))
    theta6 = linear(x, params.fc2_weight, params.fc2_bias)
    return reshape(theta6, (n, 2, 3))


def stn_forward(image, cfg, params):
    """localization -> affine_grid -> bilinear resample, at the input's size."""
    theta = localization_forward(image, cfg, params)
    grid = affine_grid(theta, image.shape[2], image.shape[3])
    return bilinear_sample(image, grid)
