import numpy as np
import pytest

from emresformer.blocks import (
    LmrbConfig,
    Scope,
    emb_forward,
    emb_init,
    ffn_hidden,
    init_bases,
    ioab_attention,
    ioab_forward,
    ioab_init,
    iofn_forward,
    iofn_init,
    lmb_forward,
    lmb_init,
    lmrb_forward,
    lmrb_init,
)
from emresformer.em import EmConfig
from emresformer.errors import ConfigError, ShapeError
from emresformer.nn import ConvKernel, conv2d, relu
from emresformer.tensor import Tensor, count_flops

EM = EmConfig(num_bases=4, iterations=3)


def scope(arrays, prefix=""):
    return Scope({k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}, prefix)


def zero(s: Scope, *keys):
    for k in keys:
        s[k].data = np.zeros_like(s[k].data)


def test_shapes_preserved(rng):
    x = Tensor(rng.normal(size=(2, 8, 4, 6)))
    p = scope(emb_init(rng, 8, 2, 2.66, EM))
    assert ioab_forward(x, p.sub("ioab"), 2, EM).shape == x.shape
    assert iofn_forward(x, p.sub("iofn"), EM).shape == x.shape
    assert emb_forward(x, p, 2, EM).shape == x.shape
    assert lmb_forward(x, scope(lmb_init(rng, 8, 4))).shape == x.shape
    assert lmrb_forward(x, scope(lmrb_init(rng, 8, LmrbConfig())), LmrbConfig()).shape == x.shape


def test_head_divisibility(rng):
    with pytest.raises(ShapeError):
        ioab_init(rng, 6, 4, EM)
    p = scope(ioab_init(rng, 8, 2, EM))
    with pytest.raises(ShapeError):
        ioab_forward(Tensor(np.ones((1, 8, 2, 2))), p, 3, EM)


def test_init_helpers(rng):
    b = init_bases(rng, 5, 7)
    np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0)
    assert ffn_hidden(8, 2.66) == 21
    with pytest.raises(ConfigError):
        LmrbConfig(cascades=0)


def test_ioab_zero_projection_is_identity(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    p = scope(ioab_init(rng, 4, 2, EM))
    zero(p, "proj.weight")
    assert ioab_forward(x, p, 2, EM).data.tobytes() == x.data.tobytes()


def test_iofn_zero_value_path_is_identity(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    p = scope(iofn_init(rng, 4, 2.0, EM))
    zero(p, "value_in.weight")
    assert iofn_forward(x, p, EM).data.tobytes() == x.data.tobytes()


def test_emb_all_zero_params_is_identity(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    arrays = {k: np.zeros_like(v) for k, v in emb_init(rng, 4, 2, 2.66, EM).items()}
    assert emb_forward(x, scope(arrays), 2, EM).data.tobytes() == x.data.tobytes()


def test_emb_is_ioab_then_iofn(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    p = scope(emb_init(rng, 4, 2, 2.66, EM))
    chained = iofn_forward(ioab_forward(x, p.sub("ioab"), 2, EM), p.sub("iofn"), EM)
    assert emb_forward(x, p, 2, EM).data.tobytes() == chained.data.tobytes()


def test_ioab_output_uses_scaled_reconstruction(rng):
    x = Tensor(rng.normal(size=(1, 4, 3, 3)))
    p = scope(ioab_init(rng, 4, 2, EM))
    _, D, V = ioab_attention(x, p, 2, EM)
    attn = (D.data / np.sqrt(2)) @ V.data
    proj = p["proj.weight"].data[:, :, 0, 0]
    want = x.data + np.einsum("oc,nchw->nohw", proj, attn.reshape(1, 4, 3, 3))
    np.testing.assert_allclose(ioab_forward(x, p, 2, EM).data, want, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_ioab_attention_rank_bounded(seed):
    rng = np.random.default_rng(seed)
    p = scope(ioab_init(rng, 8, 1, EM))
    A, D, _ = ioab_attention(Tensor(rng.normal(size=(1, 8, 8, 8))), p, 1, EM)
    assert np.linalg.matrix_rank(A.data[0, 0], tol=1e-8) == 8
    assert (np.linalg.svd(D.data[0, 0], compute_uv=False) > 1e-8).sum() <= EM.num_bases


@pytest.mark.xfail(strict=True, reason="soft clustering of 8 attention rows into 4 bases at beta=1/sqrt(d) "
                   "stays far from the dense matrix; see decisions ledger")
def test_ioab_reconstruction_close_to_dense_attention():
    rng = np.random.default_rng(0)
    p = scope(ioab_init(rng, 8, 1, EM))
    A, D, _ = ioab_attention(Tensor(rng.normal(size=(1, 8, 8, 8))), p, 1, EM)
    assert np.linalg.norm(D.data - A.data) / np.linalg.norm(A.data) < 0.5


def test_lmb_zero_expansion_gives_quarter_gain(rng):
    x = Tensor(rng.normal(size=(1, 4, 3, 5)))
    p = scope(lmb_init(rng, 4, 2))
    zero(p, "expand_h.weight", "expand_h.bias", "expand_w.weight", "expand_w.bias")
    np.testing.assert_allclose(lmb_forward(x, p).data, 1.25 * x.data, atol=1e-15)


def test_lmb_constant_input_stays_constant(rng):
    x = Tensor(np.full((1, 2, 3, 3), 0.4))
    out = lmb_forward(x, scope(lmb_init(rng, 2, 1))).data
    for c in range(2):
        np.testing.assert_allclose(out[0, c], out[0, c, 0, 0], atol=1e-15)


def test_lmb_single_stream_uses_global_pool(rng):
    x = Tensor(rng.normal(size=(1, 4, 3, 3)))
    p = scope(lmb_init(rng, 4, 2))
    out = lmb_forward(x, p, two_stream=False).data
    gate = out / x.data - 1.0
    for c in range(4):
        np.testing.assert_allclose(gate[0, c], gate[0, c, 0, 0], atol=1e-12)


def test_lmrb_zero_convs_are_identity(rng):
    cfg = LmrbConfig(cascades=2)
    p = scope(lmrb_init(rng, 4, cfg))
    zero(p, "0.conv.weight", "0.conv.bias", "1.conv.weight", "1.conv.bias")
    x = Tensor(rng.normal(size=(1, 4, 3, 3)))
    assert lmrb_forward(x, p, cfg).data.tobytes() == x.data.tobytes()


def test_lmrb_two_cascades_match_literal_chain(rng):
    cfg = LmrbConfig(cascades=2)
    p = scope(lmrb_init(rng, 4, cfg))
    x = Tensor(rng.normal(size=(1, 4, 3, 3)))

    def stage(t, i):
        s = p.sub(str(i))
        conv = conv2d(t, ConvKernel(s["conv.weight"], s["conv.bias"]))
        return t + lmb_forward(relu(conv), s.sub("lmb"))

    np.testing.assert_array_equal(lmrb_forward(x, p, cfg).data, stage(stage(x, 0), 1).data)


def test_lmrb_flops_linear_in_cascades(rng):
    x = Tensor(rng.normal(size=(1, 4, 6, 6)))
    counts = []
    for k in (1, 2, 3, 4):
        cfg = LmrbConfig(cascades=k)
        p = scope(lmrb_init(np.random.default_rng(0), 4, cfg))
        with count_flops() as n:
            lmrb_forward(x, p, cfg)
        counts.append(n[0])
    steps = np.diff(counts)
    assert counts[0] > 0 and (steps == steps[0]).all() and steps[0] == counts[0]
