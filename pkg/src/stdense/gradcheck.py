"""Finite-difference verification of analytic gradients.

All suite fixtures are double precision and are constructed to sit away from
the non-differentiable points of each op: ReLU inputs are bounded away from
zero, maxpool windows have well-separated values, and bilinear sample
coordinates keep their fractional pixel position inside (0.25, 0.75).
"""

import numpy as np

from .stn import SampleGrid, affine_grid, bilinear_sample, init_locnet, stn_forward, LocNetConfig
from .tensor import (
    ConvWeights,
    ShapeError,
    Tensor,
    avgpool2x2,
    backward,
    conv2d,
    linear,
    maxpool2x2,
    mul,
    relu,
    softmax_cross_entropy,
    sum_all,
)

__all__ = ["grad_check", "suite"]


def grad_check(f, x, eps=1e-5):
    """Max relative error |a-n| / max(|a|,|n|,1e-8) between the autodiff
    gradient of scalar f(x) w.r.t. x and central finite differences."""
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise ValueError("grad_check needs a requires_grad Tensor")
    x.zero_grad()
    out = f(x)
    if out.shape != ():
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    a = x.grad.astype(np.float64).ravel().copy()
    x.zero_grad()

    num = np.empty(x.size, np.float64)
    flat = x.data.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        num[i] = (fp - fm) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
    return float(np.max(np.abs(a - num) / denom))


def _projected_sum(op_out, proj):
    return sum_all(mul(op_out, proj))


def _distinct_windows(rng, shape):
    # values separated by >= 0.06 so an eps-perturbation cannot flip an argmax
    size = int(np.prod(shape))
    base = rng.permutation(size) * 0.1
    return (base + rng.uniform(-0.02, 0.02, size)).reshape(shape)


def _interior_grid(rng, n, gh, gw, h, w):
    # pixel positions with fractional part in (0.25, 0.75), strictly inside
    cy = rng.integers(0, h - 1, (n, gh, gw)) + rng.uniform(0.25, 0.75, (n, gh, gw))
    cx = rng.integers(0, w - 1, (n, gh, gw)) + rng.uniform(0.25, 0.75, (n, gh, gw))
    coords = np.stack([2 * cx / (w - 1) - 1, 2 * cy / (h - 1) - 1], axis=-1)
    return coords


def suite(seed=0, eps=1e-5):
    """Run the named gradient checks; returns {check name: max relative error}."""
    rng = np.random.default_rng(seed)
    results = {}

    # conv2d, strided and padded
    x = Tensor(rng.standard_normal((2, 3, 6, 6)) * 0.8, requires_grad=True)
    w = ConvWeights(Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.4, requires_grad=True),
                    Tensor(rng.standard_normal(4) * 0.1, requires_grad=True))
    proj = Tensor(rng.standard_normal((2, 4, 3, 3)))
    for name, t in (("conv2d/input", x), ("conv2d/kernels", w.kernels),
                    ("conv2d/biases", w.biases)):
        results[name] = grad_check(
            lambda _t: _projected_sum(conv2d(x, w, stride=2, pad=1), proj), t, eps)

    # linear
    lx = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    lw = Tensor(rng.standard_normal((5, 4)) * 0.5, requires_grad=True)
    lb = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
    lproj = Tensor(rng.standard_normal((3, 4)))
    for name, t in (("linear/input", lx), ("linear/weight", lw), ("linear/bias", lb)):
        results[name] = grad_check(
            lambda _t: _projected_sum(linear(lx, lw, lb), lproj), t, eps)

    # softmax cross entropy (already scalar)
    logits = Tensor(rng.standard_normal((6, 3)) * 2, requires_grad=True)
    labels = rng.integers(0, 3, 6)
    results["softmax_cross_entropy/logits"] = grad_check(
        lambda t: softmax_cross_entropy(t, labels), logits, eps)

    # relu, away from the kink at 0
    rx = Tensor(rng.uniform(0.1, 1.0, (3, 7)) * rng.choice([-1.0, 1.0], (3, 7)),
                requires_grad=True)
    rproj = Tensor(rng.standard_normal((3, 7)))
    results["relu/input"] = grad_check(
        lambda t: _projected_sum(relu(t), rproj), rx, eps)

    # pooling; maxpool windows hold well-separated values
    mx = Tensor(_distinct_windows(rng, (2, 2, 6, 6)), requires_grad=True)
    mproj = Tensor(rng.standard_normal((2, 2, 3, 3)))
    results["maxpool2x2/input"] = grad_check(
        lambda t: _projected_sum(maxpool2x2(t), mproj), mx, eps)
    ax = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    results["avgpool2x2/input"] = grad_check(
        lambda t: _projected_sum(avgpool2x2(t), mproj), ax, eps)

    # bilinear sampler, sample points clear of pixel boundaries and edges
    img = Tensor(rng.standard_normal((2, 2, 5, 6)), requires_grad=True)
    gcoords = Tensor(_interior_grid(rng, 2, 3, 4, 5, 6), requires_grad=True)
    bproj = Tensor(rng.standard_normal((2, 2, 3, 4)))
    results["bilinear_sample/input"] = grad_check(
        lambda t: _projected_sum(bilinear_sample(t, SampleGrid(gcoords)), bproj), img, eps)
    results["bilinear_sample/grid"] = grad_check(
        lambda t: _projected_sum(bilinear_sample(img, SampleGrid(t)), bproj), gcoords, eps)

    # affine grid (linear in theta)
    th = Tensor(np.stack([np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])] * 2)
                + rng.standard_normal((2, 2, 3)) * 0.3, requires_grad=True)
    gproj = Tensor(rng.standard_normal((2, 4, 4, 2)))
    results["affine_grid/theta"] = grad_check(
        lambda t: _projected_sum(affine_grid(t, 4, 4).coords, gproj), th, eps)

    # composed STN w.r.t. every localization weight, on an 8x8 input;
    # the regressor is nudged off identity so samples avoid exact pixel centers
    cfg = LocNetConfig(conv_channels=(4, 4), hidden=8)
    params = init_locnet(cfg, (8, 8), seed=seed + 1, dtype=np.float64)
    prng = np.random.default_rng(seed + 2)
    params.fc2_weight.data[...] = prng.standard_normal((cfg.hidden, 6)) * 0.05
    params.fc2_bias.data[...] += prng.standard_normal(6) * 0.05
    simg = Tensor(prng.standard_normal((1, 3, 8, 8)) * 0.7)
    sproj = Tensor(prng.standard_normal((1, 3, 8, 8)))
    worst = 0.0
    for t in params.parameters():
        err = grad_check(
            lambda _t: _projected_sum(stn_forward(simg, cfg, params), sproj), t, eps)
        worst = max(worst, err)
    results["stn_forward/localization"] = worst

    return results
