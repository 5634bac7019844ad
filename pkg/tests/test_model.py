"""Model assembly, deterministic init, and checkpoint round-trips."""

import numpy as np
import numpy.testing as npt
import pytest

from stdense import ShapeError, Tensor
from stdense.container import read_container, write_container
from stdense.densenet import DenseNetConfig
from stdense.model import Model, ModelConfig, init_model, load_model, save_model
from stdense.stn import LocNetConfig

F32 = np.float32


def small_cfg(use_stn=False):
    net = DenseNetConfig(growth_rate=3, block_layout=(2, 2),
                         initial_channels=6)
    loc = LocNetConfig(conv_channels=(4, 8), hidden=16)
    return ModelConfig(net=net, use_stn=use_stn, loc=loc, image_size=16)


def batch(rng, n=2, size=16):
    return Tensor(rng.uniform(0, 1, (n, 3, size, size)).astype(F32))


# --- init ---------------------------------------------------------------------

def test_init_is_deterministic_per_seed():
    a = init_model(small_cfg(), seed=7)
    b = init_model(small_cfg(), seed=7)
    c = init_model(small_cfg(), seed=8)
    for name, pa in a.named_parameters().items():
        npt.assert_array_equal(pa.data, b.named_parameters()[name].data)
    assert any(
        not np.array_equal(pa.data, c.named_parameters()[name].data)
        for name, pa in a.named_parameters().items())


def test_classifier_init_shared_across_stn_switch():
    # same seed must give the same classifier weights with or without the
    # localization stream, so conditions differ only where they should
    plain = init_model(small_cfg(use_stn=False), seed=3)
    stn = init_model(small_cfg(use_stn=True), seed=3)
    stn_named = stn.named_parameters()
    for name, p in plain.named_parameters().items():
        npt.assert_array_equal(p.data, stn_named[name].data)


def test_named_parameters_cover_the_whole_trunk():
    names = set(init_model(small_cfg(use_stn=True), seed=0)
                .named_parameters())
    for expected in ("stem.conv.kernels", "block0.layer0.conv.kernels",
                     "block1.layer1.conv.biases", "transition0.conv.kernels",
                     "head.weight", "head.bias", "loc.fc2.bias"):
        assert expected in names, expected
    assert all(n.startswith("loc.") for n in names
               if "fc" in n or n.startswith("loc"))


def test_parameters_list_matches_named_set():
    model = init_model(small_cfg(use_stn=True), seed=1)
    listed = {id(p) for p in model.parameters()}
    named = {id(p) for p in model.named_parameters().values()}
    assert listed == named


def test_stn_config_requires_loc_params():
    cfg = small_cfg(use_stn=True)
    net = init_model(small_cfg(use_stn=False), seed=0).net_params
    with pytest.raises(ValueError):
        Model(cfg, net, loc_params=None)


def test_forward_output_shape_and_stn_path(tmp_path):
    rng = np.random.default_rng(0)
    x = batch(rng)
    plain = init_model(small_cfg(use_stn=False), seed=5)
    stn = init_model(small_cfg(use_stn=True), seed=5)
    assert plain.forward(x).shape == (2, 2)
    assert stn.forward(x).shape == (2, 2)
    # zero-init regressor means the STN starts as identity, so both paths
    # agree at init (same classifier weights, untouched input)
    npt.assert_allclose(stn.forward(x).data, plain.forward(x).data,
                        atol=1e-5)


# --- checkpoints ----------------------------------------------------------------

@pytest.mark.parametrize("use_stn", [False, True])
def test_checkpoint_roundtrip_bit_exact(tmp_path, use_stn):
    model = init_model(small_cfg(use_stn=use_stn), seed=11)
    path = tmp_path / "model.stdn"
    save_model(path, model)
    loaded = load_model(path)
    got = loaded.named_parameters()
    want = model.named_parameters()
    assert set(got) == set(want)
    for name, p in want.items():
        assert got[name].data.tobytes() == p.data.tobytes(), name
        assert got[name].requires_grad
    assert loaded.cfg.use_stn == use_stn
    assert loaded.cfg.net.block_layout == model.cfg.net.block_layout
    rng = np.random.default_rng(1)
    x = batch(rng)
    npt.assert_array_equal(loaded.forward(x).data, model.forward(x).data)


def test_checkpoint_is_self_describing(tmp_path):
    model = init_model(small_cfg(use_stn=True), seed=0)
    path = tmp_path / "model.stdn"
    save_model(path, model)
    entries = read_container(path)
    for key in ("config.growth_rate", "config.block_layout",
                "config.initial_channels", "config.num_classes",
                "config.use_stn", "config.image_size",
                "config.loc_channels", "config.loc_hidden"):
        assert key in entries, key
    assert float(entries["config.growth_rate"].data) == 3
    npt.assert_array_equal(entries["config.block_layout"].data, [2, 2])


def _rewrite_without(path, out, dropped):
    entries = read_container(path)
    kept = {name: t.data for name, t in entries.items() if name != dropped}
    write_container(out, kept)


def test_missing_parameter_entry_raises_keyerror(tmp_path):
    path = tmp_path / "model.stdn"
    save_model(path, init_model(small_cfg(), seed=0))
    broken = tmp_path / "broken.stdn"
    _rewrite_without(path, broken, "head.weight")
    with pytest.raises(KeyError):
        load_model(broken)


def test_missing_config_entry_raises_keyerror(tmp_path):
    path = tmp_path / "model.stdn"
    save_model(path, init_model(small_cfg(), seed=0))
    broken = tmp_path / "broken.stdn"
    _rewrite_without(path, broken, "config.growth_rate")
    with pytest.raises(KeyError):
        load_model(broken)


def test_shape_mismatch_raises_shapeerror(tmp_path):
    path = tmp_path / "model.stdn"
    save_model(path, init_model(small_cfg(), seed=0))
    entries = {name: t.data for name, t in read_container(path).items()}
    entries["head.weight"] = np.zeros((3, 3), F32)
    broken = tmp_path / "broken.stdn"
    write_container(broken, entries)
    with pytest.raises(ShapeError):
        load_model(broken)


def test_image_size_guard():
    with pytest.raises(ValueError):
        ModelConfig(image_size=8)
