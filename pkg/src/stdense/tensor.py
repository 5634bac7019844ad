"""Reverse-mode autodiff core: a small Tensor type plus the network
primitives (conv/pool/linear/concat/loss) everything else composes.

Conventions, fixed and relied on by the tests:

* images are NCHW; conv kernels are [out_ch, in_ch, kH, kW]; data row-major
* float32 by default; float64 inputs stay float64 (gradient checks run there)
* ReLU subgradient at exactly 0 is 0; maxpool ties go to the first window
  cell in row-major scan order
* leaf gradients accumulate across backward() calls until zero_grads();
  intermediate gradients are rederived from scratch on every call
* every grad_fn hands back freshly allocated arrays (or views of fresh
  arrays), never views aliasing its upstream gradient or its inputs
"""

import math

import numpy as np

from . import _kernels as K

__all__ = [
    "NumericError",
    "ShapeError",
    "Tensor",
    "ConvWeights",
    "TapeNode",
    "GradTape",
    "conv2d",
    "relu",
    "maxpool2x2",
    "avgpool2x2",
    "linear",
    "concat_channels",
    "slice_channels",
    "softmax_cross_entropy",
    "sum_all",
    "add",
    "mul",
    "reshape",
    "global_avg_pool",
    "backward",
    "zero_grads",
    "kaiming_conv",
    "kaiming_linear",
]


class ShapeError(ValueError):
    """Operand dimensions violate an operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values surfaced where finite ones are required."""


def _check_finite(arr, what):
    # single pass: any NaN/Inf poisons the sum
    if not math.isfinite(float(arr.sum())):
        raise NumericError(f"{what} contains NaN or Inf")


class Tensor:
    """N-dimensional float array with an optional backward-graph attachment."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, *, _node=None, _check=True):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        # note asarray(order="C"), not ascontiguousarray: the latter promotes
        # 0-d scalars to shape (1,) and losses are genuinely 0-d here
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.asarray(arr, order="C")
        if _check and _node is None:
            _check_finite(self.data, "tensor data")
        self.requires_grad = bool(requires_grad)
        self.node = _node
        # leaves get a persistent accumulator; op outputs get one lazily
        if self.requires_grad and _node is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, no graph, no gradient; shares the data buffer."""
        return Tensor(self.data, _check=False)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self):
        backward(self)

    def __repr__(self):
        flags = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flags})"


class ConvWeights:
    """Convolution kernels [out_ch, in_ch, kH, kW] plus per-output biases."""

    __slots__ = ("kernels", "biases")

    def __init__(self, kernels, biases):
        if not isinstance(kernels, Tensor):
            kernels = Tensor(kernels)
        if not isinstance(biases, Tensor):
            biases = Tensor(biases)
        if kernels.ndim != 4:
            raise ShapeError(f"kernels must be [out,in,kH,kW], got shape {kernels.shape}")
        co, _ci, kh, kw = kernels.shape
        if co < 1 or kh < 1 or kw < 1:
            raise ShapeError(f"kernel dims must be >= 1, got shape {kernels.shape}")
        if biases.shape != (co,):
            raise ShapeError(f"biases shape {biases.shape} does not match {co} output channels")
        self.kernels = kernels
        self.biases = biases

    def parameters(self):
        return [self.kernels, self.biases]


class TapeNode:
    """One executed op: its input tensors and the map d(output) -> d(inputs)."""

    __slots__ = ("op", "inputs", "grad_fn")

    def __init__(self, op, inputs, grad_fn):
        self.op = op
        self.inputs = inputs
        self.grad_fn = grad_fn


class GradTape:
    """Ordered record of the ops below one output, in topological order.

    Walking `order` in reverse visits each node exactly once, consumers
    before producers, so a single sweep computes every gradient.
    """

    __slots__ = ("order",)

    def __init__(self, order):
        self.order = order

    @classmethod
    def from_output(cls, out):
        order = []
        seen = set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if t.node is None or id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def run(self, free_graph=False):
        """Backpropagate from the final node, accumulating into leaf grads.

        With free_graph=True each node is torn down right after its grad_fn
        fires, releasing retained activations mid-sweep; the graph cannot be
        backpropagated again afterwards.
        """
        order = self.order
        if not order:
            return
        for t in order:
            t.grad = None
        out = order[-1]
        out.grad = np.ones_like(out.data)
        for t in reversed(order):
            gout = t.grad
            t.grad = None
            if gout is None:
                if free_graph:
                    t.node = None
                continue
            grads = t.node.grad_fn(gout)
            for inp, g in zip(t.node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    inp.grad += g
                elif inp.grad is None:
                    inp.grad = g
                else:
                    inp.grad += g
            if free_graph:
                t.node = None


def backward(loss, free_graph=False):
    """Fill d(loss)/d(leaf) into every requires_grad leaf below `loss`.

    Leaf grads accumulate across calls; callers zero them between steps.
    free_graph=True frees retained activations as the sweep consumes them
    (lower peak memory, buffers recycle sooner) but makes the pass one-shot.
    """
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad += np.ones((), dtype=loss.dtype)
        return
    GradTape.from_output(loss).run(free_graph=free_graph)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def _result(data, inputs, op, grad_fn):
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, _node=TapeNode(op, inputs, grad_fn), _check=False)
    return Tensor(data, _check=False)


def _same_dtype(op, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"{op}: mixed dtypes {dt} and {t.dtype}")
    return dt


# Scratch-buffer pool for conv workspaces.  Training allocates ~0.5 GB of
# short-lived intermediates per step; recycling them dodges the page-fault
# cost of faulting that memory in fresh every step.  A buffer goes back on
# the shelf when its _Lease is garbage-collected, i.e. exactly when nothing
# can read it any more, so reuse can never alias a live array.
_SCRATCH = {}
_SCRATCH_PER_KEY = 4


class _Lease:
    __slots__ = ("key", "buf")

    def __init__(self, key, buf):
        self.key = key
        self.buf = buf

    def __del__(self):
        shelf = _SCRATCH.setdefault(self.key, [])
        if len(shelf) < _SCRATCH_PER_KEY:
            shelf.append(self.buf)


def _scratch(shape, dtype):
    """Uninitialized pooled array + the lease that owns it.

    The caller must overwrite every element and must keep the lease
    referenced for as long as the array contents matter.
    """
    key = (shape, np.dtype(dtype).char)
    shelf = _SCRATCH.get(key)
    buf = shelf.pop() if shelf else np.empty(shape, dtype)
    return buf, _Lease(key, buf)


def kaiming_conv(rng, out_ch, in_ch, kh, kw, dtype=np.float32):
    """ConvWeights with fan-in-scaled normal kernels and zero biases."""
    std = np.sqrt(2.0 / (in_ch * kh * kw))
    k = (rng.standard_normal((out_ch, in_ch, kh, kw)) * std).astype(dtype)
    return ConvWeights(Tensor(k, requires_grad=True),
                       Tensor(np.zeros(out_ch, dtype), requires_grad=True))


def kaiming_linear(rng, d, m, dtype=np.float32):
    """(weight, bias) pair with fan-in-scaled normal weight and zero bias."""
    std = np.sqrt(2.0 / d)
    w = (rng.standard_normal((d, m)) * std).astype(dtype)
    return (Tensor(w, requires_grad=True),
            Tensor(np.zeros(m, dtype), requires_grad=True))


def conv2d(x, w, stride=1, pad=0):
    """2-D convolution (cross-correlation) of NCHW input with ConvWeights."""
    kernels, biases = w.kernels, w.biases
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(pad, int) or pad < 0:
        raise ShapeError(f"pad must be a non-negative int, got {pad!r}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = kernels.shape
    if c != ci:
        raise ShapeError(f"conv2d input has {c} channels but kernels expect {ci}")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    _same_dtype("conv2d", x, kernels, biases)
    _check_finite(x.data, "conv2d input")

    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    # work channels-last internally: one blocked transpose each way, then the
    # unfold/fold loops copy whole channel runs.  Columns are (tap, channel)-
    # major so they line up with the [kh,kw,ci,co] kernel reshape below;
    # padding happens implicitly while unfolding.
    onebyone = kh == 1 and kw == 1 and stride == 1 and pad == 0
    xt, xt_lease = _scratch((n, h, wd, c), x.dtype)
    xt[...] = x.data.transpose(0, 2, 3, 1)
    if onebyone:
        cols = xt.reshape(n * oh * ow, c)
        cols_lease = xt_lease
    else:
        cols, cols_lease = _scratch((n * oh * ow, kh * kw * c), x.dtype)
        K.im2col_nhwc(xt, kh, kw, stride, pad, out=cols)
        del xt, xt_lease  # back on the shelf before the GEMMs run
    wf = kernels.data.transpose(2, 3, 1, 0).reshape(kh * kw * ci, co)
    y2d = cols @ wf
    y2d += biases.data
    y = np.ascontiguousarray(y2d.reshape(n, oh, ow, co).transpose(0, 3, 1, 2))

    def grad_fn(gout, _keep=cols_lease):
        g2d = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
        dx = dk = db = None
        if kernels.requires_grad:
            # cols.T @ g2d beats g2d.T @ cols here: cols is long since
            # evicted, and this orientation streams it row-contiguously
            dk = (cols.T @ g2d).reshape(kh, kw, ci, co).transpose(3, 2, 0, 1)
        if biases.requires_grad:
            db = g2d.sum(axis=0)
        if x.requires_grad:
            dcols, dcols_lease = _scratch(cols.shape, gout.dtype)
            np.matmul(g2d, wf.T, out=dcols)
            if onebyone:
                dxt = dcols.reshape(n, h, wd, c)
                dxt_lease = dcols_lease
            else:
                dxt, dxt_lease = _scratch((n, h, wd, c), gout.dtype)
                K.col2im_nhwc(dcols, n, h, wd, c, kh, kw, stride, pad, out=dxt)
                del dcols, dcols_lease
            dx = np.ascontiguousarray(dxt.transpose(0, 3, 1, 2))
            del dxt, dxt_lease
        return dx, dk, db

    return _result(y, (x, kernels, biases), "conv2d", grad_fn)


def relu(x):
    """Elementwise max(0, v); gradient flows only where v > 0."""
    y = np.maximum(x.data, 0)

    def grad_fn(gout):
        g = gout if gout.flags["C_CONTIGUOUS"] else np.ascontiguousarray(gout)
        return (K.relu_backward(x.data.reshape(-1), g.reshape(-1)).reshape(x.shape),)

    return _result(y, (x,), "relu", grad_fn)


def maxpool2x2(x):
    """2x2/stride-2 max pool; ties route gradient to the first cell hit."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects NCHW input, got shape {x.shape}")
    n, c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{wd}")
    y, arg = K.maxpool2x2_forward(x.data)

    def grad_fn(gout):
        return (K.maxpool2x2_backward(np.ascontiguousarray(gout), arg, h, wd),)

    return _result(y, (x,), "maxpool2x2", grad_fn)


def avgpool2x2(x):
    """2x2/stride-2 average pool."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2x2 expects NCHW input, got shape {x.shape}")
    n, c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise ShapeError(f"avgpool2x2 needs even spatial dims, got {h}x{wd}")
    y = K.avgpool2x2_forward(x.data)

    def grad_fn(gout):
        g = gout if gout.flags["C_CONTIGUOUS"] else np.ascontiguousarray(gout)
        return (K.avgpool2x2_backward(g),)

    return _result(y, (x,), "avgpool2x2", grad_fn)


def linear(x, w, b):
    """x @ w + b for shapes [N,D] @ [D,M] + [M]."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(
            f"linear expects [N,D],[D,M],[M], got {x.shape},{w.shape},{b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear shapes {x.shape},{w.shape},{b.shape} do not chain")
    _same_dtype("linear", x, w, b)
    y = x.data @ w.data + b.data

    def grad_fn(gout):
        dx = gout @ w.data.T if x.requires_grad else None
        dw = x.data.T @ gout if w.requires_grad else None
        db = gout.sum(axis=0) if b.requires_grad else None
        return dx, dw, db

    return _result(y, (x, w, b), "linear", grad_fn)


def concat_channels(parts):
    """Concatenate NCHW tensors along the channel axis, in argument order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    for p in parts:
        if p.ndim != 4:
            raise ShapeError(f"concat_channels expects NCHW tensors, got shape {p.shape}")
        if p.shape[0] != first.shape[0] or p.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat_channels mismatch: {p.shape} does not align with {first.shape}")
    _same_dtype("concat_channels", *parts)
    y = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def grad_fn(gout):
        return tuple(np.ascontiguousarray(gout[:, a:b])
                     for a, b in zip(offsets[:-1], offsets[1:]))

    return _result(y, tuple(parts), "concat_channels", grad_fn)


def slice_channels(x, start, stop):
    """x[:, start:stop] as a differentiable op (inverse of concat_channels)."""
    if x.ndim != 4:
        raise ShapeError(f"slice_channels expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice [{start}:{stop}] out of range for {c} channels")
    y = np.ascontiguousarray(x.data[:, start:stop])

    def grad_fn(gout):
        dx = np.zeros_like(x.data)
        dx[:, start:stop] = gout
        return (dx,)

    return _result(y, (x,), "slice_channels", grad_fn)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [N,K], got shape {logits.shape}")
    n, k = logits.shape
    if n < 1:
        raise ShapeError("softmax_cross_entropy needs a non-empty batch")
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {n}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise TypeError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{lab.min()}, {lab.max()}]")
    lab = lab.astype(np.int64)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sz = ez.sum(axis=1)
    p = ez / sz[:, None]
    rows = np.arange(n)
    loss = np.asarray(-(z[rows, lab] - np.log(sz)).mean(), dtype=logits.dtype)

    def grad_fn(gout):
        g = p.copy()
        g[rows, lab] -= 1
        g *= gout / n
        return (g,)

    return _result(loss, (logits,), "softmax_cross_entropy", grad_fn)


def sum_all(x):
    """Sum of all elements, as a scalar tensor."""
    y = np.asarray(x.data.sum(), dtype=x.dtype)

    def grad_fn(gout):
        return (np.full_like(x.data, gout),)

    return _result(y, (x,), "sum_all", grad_fn)


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    _same_dtype("add", a, b)

    def grad_fn(gout):
        return (gout.copy(), gout.copy())

    return _result(a.data + b.data, (a, b), "add", grad_fn)


def mul(a, b):
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    _same_dtype("mul", a, b)

    def grad_fn(gout):
        da = gout * b.data if a.requires_grad else None
        db = gout * a.data if b.requires_grad else None
        return (da, db)

    return _result(a.data * b.data, (a, b), "mul", grad_fn)


def reshape(x, shape):
    """Row-major reshape; total size must be preserved."""
    try:
        y = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}: {e}") from None

    def grad_fn(gout):
        return (gout.reshape(x.shape).copy(),)

    return _result(y, (x,), "reshape", grad_fn)


def global_avg_pool(x):
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    n, c, h, wd = x.shape
    y = x.data.mean(axis=(2, 3))

    def grad_fn(gout):
        return (np.broadcast_to(gout[:, :, None, None], x.shape) / (h * wd),)

    return _result(y, (x,), "global_avg_pool", grad_fn)
