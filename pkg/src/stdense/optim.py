"""In-place parameter updates: SGD with momentum and bias-corrected Adam.

Both operate elementwise on a list of parameter tensors, reading `.grad` and
mutating `.data` (single-writer contract). lr may be exactly 0, in which case
the update is a bit-exact no-op — the degenerate control runs rely on that.
"""

import numpy as np

__all__ = ["sgd_step", "AdamState", "adam_step", "Optimizer"]


def _check_common(params, lr):
    if not np.isfinite(lr) or lr < 0:
        raise ValueError(f"learning rate must be finite and >= 0, got {lr}")
    for p in params:
        if p.grad is None:
            raise ValueError("parameter has no gradient buffer; "
                             "was requires_grad set?")


def sgd_step(params, lr, momentum=0.0, velocities=None):
    """v <- momentum*v + g; w <- w - lr*v. Returns the velocity list to pass
    back on the next call."""
    _check_common(params, lr)
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    if velocities is None:
        velocities = [np.zeros_like(p.data) for p in params]
    for p, v in zip(params, velocities):
        v *= momentum
        v += p.grad
        p.data -= lr * v
    return velocities


class AdamState:
    """First/second moment buffers and the shared step counter."""

    __slots__ = ("t", "m", "v")

    def __init__(self, params):
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, lr, state=None, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update; returns the state for reuse."""
    _check_common(params, lr)
    if state is None:
        state = AdamState(params)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Optimizer:
    """Keeps one update rule and its state together for the training loop."""

    __slots__ = ("kind", "lr", "momentum", "state")

    def __init__(self, kind="adam", lr=1e-3, momentum=0.9):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {kind!r}")
        self.kind = kind
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.state = None

    def step(self, params):
        if self.kind == "sgd":
            self.state = sgd_step(params, self.lr, self.momentum, self.state)
        else:
            self.state = adam_step(params, self.lr, self.state)
