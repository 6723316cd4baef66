import numpy as np
import pytest

from emresformer.em import EmConfig
from emresformer.errors import ConfigError, ShapeError
from emresformer.gradcheck import grad_check
from emresformer.metrics import ssim_loss
from emresformer.model import ModelConfig, build, bases_names, forward, param_count
from emresformer.tensor import Tape, Tensor
from emresformer.train import OptState, adamw_step
from emresformer import tensor as T


def test_same_seed_builds_are_bitwise_identical():
    a, b = build(ModelConfig.desk(), seed=3), build(ModelConfig.desk(), seed=3)
    assert a.names() == b.names()
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
    assert param_count(a) == param_count(b)


def test_full_config_builds_with_stable_count():
    cfg = ModelConfig.full()
    assert cfg.depths == (9, 6, 3, 0)
    assert param_count(build(cfg, seed=0)) == param_count(build(cfg, seed=0))


def test_degenerate_depth_is_shallow_plus_final():
    cfg = ModelConfig.desk(depths=(0, 0, 0, 0), refinement_blocks=0)
    params = build(cfg)
    assert params.names() == ["shallow.weight", "shallow.bias", "final.weight", "final.bias"]
    c = cfg.base_channels
    assert param_count(params) == (c * 3 * 9 + c) + (3 * c * 9 + 3)


def test_count_increases_with_first_level_depth():
    counts = [param_count(build(ModelConfig.desk(depths=(n, 2, 2, 0)))) for n in (1, 2, 3)]
    assert counts[0] < counts[1] < counts[2]


def test_parameter_names_are_unique_and_hierarchical():
    params = build(ModelConfig.desk())
    names = params.names()
    assert len(names) == len(set(names))
    assert "encoder1.0.ioab.qkv.weight" in names and "skip1.0.lmb.reduce.weight" in names
    assert all(n.endswith(".bases") for n in bases_names(params))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(base_channels=6, heads=(4, 4, 4, 4))
    with pytest.raises(ConfigError):
        ModelConfig(depths=(1, 2, 3))
    with pytest.raises(ConfigError):
        ModelConfig(lmrb_placement="everywhere")


@pytest.mark.parametrize("size", [16, 24, 32])
def test_fresh_model_is_identity_and_preserves_shape(rng, size):
    params = build(ModelConfig.desk(), seed=1)
    x = rng.uniform(size=(2, 3, size, size))
    out = forward(params, Tensor(x))
    assert out.shape == x.shape
    assert out.data.tobytes() == x.tobytes()


def test_inference_clamp_only_applies_on_request(rng):
    params = build(ModelConfig.desk(), seed=1)
    x = rng.uniform(-0.5, 1.5, size=(1, 3, 8, 8))
    np.testing.assert_array_equal(forward(params, Tensor(x)).data, x)
    np.testing.assert_array_equal(forward(params, Tensor(x), clamp_output=True).data, np.clip(x, 0, 1))


def test_indivisible_extent_names_divisor():
    params = build(ModelConfig.desk())
    with pytest.raises(ShapeError, match="8"):
        forward(params, Tensor(np.zeros((1, 3, 12, 16))))


@pytest.mark.parametrize("placement", ["skip_paths", "bottleneck", "refinement", "none"])
def test_lmrb_placements_run(rng, placement):
    params = build(ModelConfig.desk(lmrb_placement=placement))
    assert forward(params, Tensor(rng.uniform(size=(1, 3, 8, 8)))).shape == (1, 3, 8, 8)


def test_one_adamw_step_decreases_ssim_loss(rng):
    params = build(ModelConfig.desk(), seed=0)
    clean = rng.uniform(0.2, 0.6, size=(1, 3, 16, 16))
    rainy = np.clip(clean + (rng.uniform(size=clean.shape) > 0.9) * 0.4, 0, 1)
    opt = dict(params.items())

    def loss():
        with Tape() as tape:
            value = ssim_loss(forward(params, Tensor(rainy)), Tensor(clean))
            grads = tape.backward(value, opt)
        return float(value.data), grads

    before, grads = loss()
    adamw_step(opt, grads, OptState(), lr=1e-3)
    after, _ = loss()
    assert after < before


def test_full_model_input_gradient():
    cfg = ModelConfig.desk(em=EmConfig(iterations=2))
    params = build(cfg, seed=5)
    r = np.random.default_rng(5)
    params["final.weight"].data = r.uniform(-0.1, 0.1, size=params["final.weight"].shape)
    w = r.uniform(0.5, 1.5, size=(1, 3, 8, 8))
    rep = grad_check(lambda x: T.sum(T.mul(forward(params, x), Tensor(w))), r.uniform(size=(1, 3, 8, 8)))
    assert rep.passed, str(rep)


def test_forward_deterministic(rng):
    params = build(ModelConfig.desk(), seed=2)
    params["final.weight"].data = rng.normal(size=params["final.weight"].shape)
    x = Tensor(rng.uniform(size=(1, 3, 16, 16)))
    assert forward(params, x).data.tobytes() == forward(params, x).data.tobytes()


def test_float32_params(rng):
    params = build(ModelConfig.desk(), seed=2, dtype=np.float32)
    out = forward(params, Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32)))
    assert out.dtype == np.float32
