"""The finite-difference checker itself, and the full named suite."""

import numpy as np
import pytest

import stdense as sd
from stdense import Tensor
from stdense.gradcheck import grad_check, suite


def test_gradcheck_of_sum_is_clean():
    x = Tensor(np.random.default_rng(0).standard_normal(7), requires_grad=True)
    assert grad_check(sd.sum_all, x) < 1e-9


def test_gradcheck_of_square():
    x = Tensor(np.array([3.0]), requires_grad=True)
    err = grad_check(lambda t: sd.sum_all(sd.mul(t, t)), x)
    assert err < 1e-7  # analytic 6 vs central difference of x^2


def test_gradcheck_flags_a_kink():
    # relu at exactly 0: analytic subgradient 0, numeric slope 0.5
    x = Tensor(np.zeros(3), requires_grad=True)
    err = grad_check(lambda t: sd.sum_all(sd.relu(t)), x)
    assert err > 0.9


def test_gradcheck_requires_grad_tensor():
    with pytest.raises(ValueError):
        grad_check(sd.sum_all, Tensor(np.zeros(3)))


def test_gradcheck_requires_scalar_function():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(sd.ShapeError):
        grad_check(sd.relu, x)


def test_suite_every_check_under_tolerance():
    results = suite(seed=0)
    assert set(results) >= {
        "conv2d/input", "conv2d/kernels", "conv2d/biases",
        "linear/input", "linear/weight", "linear/bias",
        "softmax_cross_entropy/logits", "maxpool2x2/input",
        "bilinear_sample/input", "bilinear_sample/grid",
        "affine_grid/theta", "stn_forward/localization",
    }
    for name, err in results.items():
        assert err < 1e-4, f"{name}: {err:.3e}"


def test_suite_is_deterministic():
    assert suite(seed=3) == suite(seed=3)
