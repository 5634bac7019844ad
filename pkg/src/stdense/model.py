"""Full model: optional spatial transformer front-end feeding the dense CNN,
with container-format checkpoints.

Checkpoint entries use the parameter names from `named_parameters` (densenet
names bare — `stem.conv.kernels`, `block{i}.layer{j}.conv.{kernels|biases}`,
`transition{i}.conv.{kernels|biases}`, `head.{weight|bias}` — and the
localization stack under `loc.`), plus numeric `config.*` entries so a
checkpoint is self-describing.
"""

import numpy as np

from .container import read_container, write_container
from .densenet import DenseNetConfig, densenet_forward, init_densenet
from .stn import LocNetConfig, init_locnet, stn_forward
from .tensor import ShapeError

__all__ = [
    "ModelConfig",
    "Model",
    "default_loc_config",
    "init_model",
    "save_model",
    "load_model",
]

# three pool stages suffice below 96 px; larger inputs use the full plan
SMALL_LOC_PLAN = (32, 32, 64)
FULL_LOC_PLAN = (32, 32, 64, 64, 128)


def default_loc_config(image_size):
    plan = FULL_LOC_PLAN if image_size >= 96 else SMALL_LOC_PLAN
    # narrow regressor: theta update magnitude grows with hidden width,
    # and a runaway warp cannot recover (see init_locnet)
    return LocNetConfig(conv_channels=plan, hidden=32 if image_size < 96 else 128)


class ModelConfig:
    """Architecture bundle: classifier config, STN switch, input geometry."""

    __slots__ = ("net", "use_stn", "loc", "image_size", "in_channels")

    def __init__(self, net=None, use_stn=False, loc=None, image_size=32,
                 in_channels=3):
        if image_size < 16:
            raise ValueError(f"image size must be >= 16, got {image_size}")
        if in_channels < 1:
            raise ValueError(f"need at least one channel, got {in_channels}")
        self.net = net if net is not None else DenseNetConfig()
        self.use_stn = bool(use_stn)
        self.loc = loc if loc is not None else default_loc_config(image_size)
        self.image_size = int(image_size)
        self.in_channels = int(in_channels)


class Model:
    """Parameters plus the forward pass; condition policy lives in the
    training harness, not here."""

    __slots__ = ("cfg", "net_params", "loc_params")

    def __init__(self, cfg, net_params, loc_params=None):
        if cfg.use_stn and loc_params is None:
            raise ValueError("config enables the STN but no localization "
                             "weights were given")
        self.cfg = cfg
        self.net_params = net_params
        self.loc_params = loc_params if cfg.use_stn else None

    def forward(self, x):
        if self.cfg.use_stn:
            x = stn_forward(x, self.cfg.loc, self.loc_params)
        return densenet_forward(x, self.cfg.net, self.net_params)

    def parameters(self):
        out = []
        if self.cfg.use_stn:
            out.extend(self.loc_params.parameters())
        out.extend(self.net_params.parameters())
        return out

    def named_parameters(self):
        out = {}
        if self.cfg.use_stn:
            out.update(self.loc_params.named_parameters(prefix="loc"))
        out.update(self.net_params.named_parameters())
        return out


def init_model(cfg, seed=0):
    """Fresh weights; the classifier and localization streams are split off
    one seed so conditions sharing `seed` share the classifier init."""
    net_ss, loc_ss = np.random.SeedSequence(seed).spawn(2)
    net = init_densenet(cfg.net, in_channels=cfg.in_channels, seed=net_ss)
    loc = None
    if cfg.use_stn:
        loc = init_locnet(cfg.loc, (cfg.image_size, cfg.image_size),
                          in_channels=cfg.in_channels, seed=loc_ss)
    return Model(cfg, net, loc)


def _config_entries(cfg):
    out = {
        "config.growth_rate": np.float64(cfg.net.growth_rate),
        "config.block_layout": np.asarray(cfg.net.block_layout, np.float64),
        "config.initial_channels": np.float64(cfg.net.initial_channels),
        "config.num_classes": np.float64(cfg.net.num_classes),
        "config.initial_stride": np.float64(cfg.net.initial_stride),
        "config.use_stn": np.float64(cfg.use_stn),
        "config.image_size": np.float64(cfg.image_size),
        "config.in_channels": np.float64(cfg.in_channels),
    }
    if cfg.use_stn:
        out["config.loc_channels"] = np.asarray(cfg.loc.conv_channels, np.float64)
        out["config.loc_hidden"] = np.float64(cfg.loc.hidden)
    return out


def save_model(path, model):
    entries = dict(_config_entries(model.cfg))
    for name, tensor in model.named_parameters().items():
        entries[name] = tensor.data
    write_container(path, entries)


def _scalar(entries, key):
    if key not in entries:
        raise KeyError(f"checkpoint missing entry {key!r}")
    return float(entries[key].data)


def load_model(path):
    """Rebuild config and weights from a checkpoint; weights keep
    requires_grad so training can resume."""
    entries = read_container(path)
    use_stn = bool(_scalar(entries, "config.use_stn"))
    net_cfg = DenseNetConfig(
        growth_rate=int(_scalar(entries, "config.growth_rate")),
        block_layout=[int(v) for v in entries["config.block_layout"].data],
        initial_channels=int(_scalar(entries, "config.initial_channels")),
        num_classes=int(_scalar(entries, "config.num_classes")),
        initial_stride=int(_scalar(entries, "config.initial_stride")),
    )
    loc_cfg = None
    if use_stn:
        loc_cfg = LocNetConfig(
            conv_channels=[int(v) for v in entries["config.loc_channels"].data],
            hidden=int(_scalar(entries, "config.loc_hidden")),
        )
    cfg = ModelConfig(
        net=net_cfg, use_stn=use_stn, loc=loc_cfg,
        image_size=int(_scalar(entries, "config.image_size")),
        in_channels=int(_scalar(entries, "config.in_channels")),
    )
    model = init_model(cfg, seed=0)
    for name, tensor in model.named_parameters().items():
        if name not in entries:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        stored = entries[name].data
        if stored.shape != tensor.data.shape:
            raise ShapeError(
                f"{name}: checkpoint shape {stored.shape} does not match "
                f"model shape {tensor.data.shape}")
        tensor.data = stored.astype(tensor.data.dtype, copy=False)
    return model
