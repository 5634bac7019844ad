"""Dense convolutional classifier: stacked dense blocks where every layer
consumes the concatenation of the block input and all earlier layer outputs,
joined by channel-halving transition layers, ending in a 2-logit head.

Layer l of a block maps C0 + l*k channels to k fresh channels via
ReLU -> 3x3 conv (stride 1, pad 1); the block emits C0 + L*k channels.
Transitions are a 1x1 conv to floor(C/2) followed by 2x2 average pooling.
"""

import numpy as np

from .tensor import (
    ShapeError,
    avgpool2x2,
    concat_channels,
    conv2d,
    global_avg_pool,
    kaiming_conv,
    kaiming_linear,
    linear,
    relu,
)

__all__ = [
    "DenseNetConfig",
    "DenseNetParams",
    "channel_plan",
    "dense_layer_forward",
    "dense_block_forward",
    "transition_forward",
    "densenet_forward",
    "init_densenet",
]


class DenseNetConfig:
    """Architecture hyperparameters; defaults are the desk-scale network.

    The stem conv's stride (default 2) sets the resolution the dense blocks
    run at; channel arithmetic is independent of it.
    """

    __slots__ = ("growth_rate", "block_layout", "initial_channels",
                 "num_classes", "initial_stride")

    def __init__(self, growth_rate=12, block_layout=(4, 4, 4),
                 initial_channels=24, num_classes=2, initial_stride=2):
        block_layout = tuple(int(n) for n in block_layout)
        if growth_rate < 1:
            raise ValueError(f"growth rate must be >= 1, got {growth_rate}")
        if not block_layout or min(block_layout) < 0:
            raise ValueError(f"block layout must be non-empty counts, got {block_layout}")
        if initial_channels < 1:
            raise ValueError(f"initial channels must be >= 1, got {initial_channels}")
        if num_classes < 1:
            raise ValueError(f"num classes must be >= 1, got {num_classes}")
        if initial_stride not in (1, 2):
            raise ValueError(f"initial stride must be 1 or 2, got {initial_stride}")
        self.growth_rate = int(growth_rate)
        self.block_layout = block_layout
        self.initial_channels = int(initial_channels)
        self.num_classes = int(num_classes)
        self.initial_stride = int(initial_stride)


def channel_plan(cfg):
    """Channel counts along the trunk: after the stem, then alternating
    after each block and each transition; the last entry feeds the head."""
    plan = [cfg.initial_channels]
    c = cfg.initial_channels
    for i, layers in enumerate(cfg.block_layout):
        c = c + layers * cfg.growth_rate
        plan.append(c)
        if i < len(cfg.block_layout) - 1:
            c = c // 2
            plan.append(c)
    return plan


class DenseNetParams:
    """All trunk weights, addressable as blocks[i][j] for layer j of block i."""

    __slots__ = ("stem", "blocks", "transitions", "head_weight", "head_bias")

    def __init__(self, stem, blocks, transitions, head_weight, head_bias):
        self.stem = stem
        self.blocks = [list(b) for b in blocks]
        self.transitions = list(transitions)
        self.head_weight = head_weight
        self.head_bias = head_bias

    def parameters(self):
        out = list(self.stem.parameters())
        for block in self.blocks:
            for w in block:
                out.extend(w.parameters())
        for w in self.transitions:
            out.extend(w.parameters())
        out.extend([self.head_weight, self.head_bias])
        return out

    def named_parameters(self, prefix=""):
        p = prefix + "." if prefix else ""
        out = {f"{p}stem.conv.kernels": self.stem.kernels,
               f"{p}stem.conv.biases": self.stem.biases}
        for i, block in enumerate(self.blocks):
            for j, w in enumerate(block):
                out[f"{p}block{i}.layer{j}.conv.kernels"] = w.kernels
                out[f"{p}block{i}.layer{j}.conv.biases"] = w.biases
        for i, w in enumerate(self.transitions):
            out[f"{p}transition{i}.conv.kernels"] = w.kernels
            out[f"{p}transition{i}.conv.biases"] = w.biases
        out[f"{p}head.weight"] = self.head_weight
        out[f"{p}head.bias"] = self.head_bias
        return out


def init_densenet(cfg, in_channels=3, seed=0, dtype=np.float32):
    """Kaiming-initialized trunk weights with zero biases."""
    rng = np.random.default_rng(seed)
    k = cfg.growth_rate
    stem = kaiming_conv(rng, cfg.initial_channels, in_channels, 3, 3, dtype)
    blocks, transitions = [], []
    c = cfg.initial_channels
    for i, layers in enumerate(cfg.block_layout):
        block = []
        for j in range(layers):
            block.append(kaiming_conv(rng, k, c + j * k, 3, 3, dtype))
        blocks.append(block)
        c = c + layers * k
        if i < len(cfg.block_layout) - 1:
            transitions.append(kaiming_conv(rng, c // 2, c, 1, 1, dtype))
            c = c // 2
    head_w, head_b = kaiming_linear(rng, c, cfg.num_classes, dtype)
    return DenseNetParams(stem, blocks, transitions, head_w, head_b)


def dense_layer_forward(x, conv_w):
    """One dense layer: ReLU then 3x3/stride-1/pad-1 conv to k channels."""
    return conv2d(relu(x), conv_w, stride=1, pad=1)


def dense_block_forward(x, layer_convs, record_inputs=None):
    """Run a dense block; layer l sees [x, out_0, ..., out_{l-1}] concatenated.

    record_inputs, when given a list, receives each layer's input tensor —
    instrumentation for verifying the connectivity pattern.
    """
    acc = x
    for conv_w in layer_convs:
        if record_inputs is not None:
            record_inputs.append(acc)
        new = dense_layer_forward(acc, conv_w)
        acc = concat_channels([acc, new])
    return acc


def transition_forward(x, conv_w):
    """Between-block compression: 1x1 conv to floor(C/2), then 2x2 avg pool."""
    c = x.shape[1]
    if conv_w.kernels.shape[:2] != (c // 2, c):
        raise ShapeError(
            f"transition weights {tuple(conv_w.kernels.shape)} do not map "
            f"{c} channels to {c // 2}")
    return avgpool2x2(conv2d(x, conv_w, stride=1, pad=0))


def densenet_forward(x, cfg, params):
    """Stem conv -> dense blocks with transitions -> global avg pool -> logits."""
    if x.ndim != 4:
        raise ShapeError(f"densenet expects NCHW input, got {x.shape}")
    h = conv2d(x, params.stem, stride=cfg.initial_stride, pad=1)
    last = len(cfg.block_layout) - 1
    for i in range(len(cfg.block_layout)):
        h = dense_block_forward(h, params.blocks[i])
        if i < last:
            if h.shape[2] < 2 or h.shape[3] < 2:
                raise ShapeError(
                    f"spatial size {h.shape[2]}x{h.shape[3]} too small to "
                    f"transition after block {i}")
            h = transition_forward(h, params.transitions[i])
    return linear(global_avg_pool(h), params.head_weight, params.head_bias)
