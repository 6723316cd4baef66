"""Composite blocks: IOAB, IOFN, EMB, LMB and LMRB.

Every block is a pure function of its input and a :class:`Scope` over the
named parameter map.  Each ``*_init`` returns freshly initialised numpy
arrays keyed by local name; the model prefixes them hierarchically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .em import EmConfig, EmRecorder, em_iterate, reconstruct
from .errors import ConfigError, ShapeError
from .nn import ConvKernel, conv2d, directional_avg_pool, l2_normalize, layer_norm, relu, sigmoid
from .tensor import Tensor, broadcast_to, matmul, mul, reduce, reshape, scale, split, swapaxes, transpose


@dataclass
class LmrbConfig:
    cascades: int = 2
    reduction: int = 4
    two_stream: bool = True

    def __post_init__(self):
        if int(self.cascades) < 1:
            raise ConfigError(f"LMRB cascades must be >= 1, got {self.cascades}")
        if int(self.reduction) < 1:
            raise ConfigError(f"LMB reduction must be >= 1, got {self.reduction}")


class Scope:
    """Read view of a flat ``name -> Tensor`` map under a dotted prefix."""

    def __init__(self, tensors: dict, prefix: str = ""):
        self.tensors = tensors
        self.prefix = prefix

    def full(self, key: str) -> str:
        return f"{self.prefix}.{key}" if self.prefix else key

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[self.full(key)]

    def get(self, key: str):
        return self.tensors.get(self.full(key))

    def sub(self, name: str) -> "Scope":
        return Scope(self.tensors, self.full(name))


# -- initialisers ----------------------------------------------------------
def conv_weight(rng: np.random.Generator, out_c: int, in_c: int, kh: int = 1, kw: int = 1) -> np.ndarray:
    bound = 1.0 / math.sqrt(in_c * kh * kw)
    return rng.uniform(-bound, bound, size=(out_c, in_c, kh, kw))


def conv_bias(rng: np.random.Generator, out_c: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=out_c)


def init_bases(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    """Unit-variance uniform draws, L2-normalised per basis."""
    b = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(k, d))
    return b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)


def norm_init(c: int) -> dict:
    return {"gain": np.ones(c), "offset": np.zeros(c)}


def _nest(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


def ffn_hidden(channels: int, expansion: float) -> int:
    return max(1, int(round(channels * expansion)))


def ioab_init(rng, channels: int, heads: int, em: EmConfig) -> dict:
    if channels % heads:
        raise ShapeError(f"IOAB: {channels} channels not divisible by {heads} heads")
    p = _nest("norm", norm_init(channels))
    p["qkv.weight"] = conv_weight(rng, 3 * channels, channels)
    p["qkv_dw.weight"] = conv_weight(rng, 3 * channels, 1, 3, 3)
    p["proj.weight"] = conv_weight(rng, channels, channels)
    p["bases"] = init_bases(rng, em.num_bases, channels // heads)
    return p


def iofn_init(rng, channels: int, expansion: float, em: EmConfig) -> dict:
    hidden = ffn_hidden(channels, expansion)
    p = _nest("norm", norm_init(channels))
    p["gate_in.weight"] = conv_weight(rng, hidden, channels)
    p["gate_dw.weight"] = conv_weight(rng, hidden, 1, 3, 3)
    p["value_in.weight"] = conv_weight(rng, hidden, channels)
    p["value_dw.weight"] = conv_weight(rng, hidden, 1, 3, 3)
    p["proj.weight"] = conv_weight(rng, channels, hidden)
    p["bases"] = init_bases(rng, em.num_bases, hidden)
    return p


def emb_init(rng, channels: int, heads: int, expansion: float, em: EmConfig) -> dict:
    p = _nest("ioab", ioab_init(rng, channels, heads, em))
    p.update(_nest("iofn", iofn_init(rng, channels, expansion, em)))
    return p


def lmb_init(rng, channels: int, reduction: int) -> dict:
    mid = max(1, channels // reduction)
    p = {
        "reduce.weight": conv_weight(rng, mid, channels),
        "reduce.bias": conv_bias(rng, mid, channels),
    }
    p.update(_nest("norm", norm_init(mid)))
    for stream in ("h", "w"):
        p[f"expand_{stream}.weight"] = conv_weight(rng, channels, mid)
        p[f"expand_{stream}.bias"] = conv_bias(rng, channels, mid)
    return p


def lmrb_init(rng, channels: int, cfg: LmrbConfig) -> dict:
    p = {}
    for i in range(int(cfg.cascades)):
        p[f"{i}.conv.weight"] = conv_weight(rng, channels, channels)
        p[f"{i}.conv.bias"] = conv_bias(rng, channels, channels)
        p.update(_nest(f"{i}.lmb", lmb_init(rng, channels, cfg.reduction)))
    return p


# -- forward passes --------------------------------------------------------
def _conv(x, p: Scope, name: str, groups: int = 1) -> Tensor:
    return conv2d(x, ConvKernel(p[f"{name}.weight"], p.get(f"{name}.bias"), groups=groups))


def _norm(x, p: Scope, name: str = "norm") -> Tensor:
    return layer_norm(x, p[f"{name}.gain"], p[f"{name}.offset"])


def ioab_attention(F_b: Tensor, p: Scope, heads: int, em: EmConfig, normalize_qk: bool = True,
                   recorder: EmRecorder | None = None):
    """Return ``(A, D, V)``: dense channel attention, its EM reconstruction, values.

    ``A`` and ``D`` are ``[N, heads, d, d]``; ``V`` is ``[N, heads, d, H*W]``.
    """
    n, c, h, w = F_b.shape
    if c % heads:
        raise ShapeError(f"IOAB: {c} channels not divisible by {heads} heads", F_b.shape)
    d = c // heads
    z = _norm(F_b, p)
    qkv = _conv(_conv(z, p, "qkv"), p, "qkv_dw", groups=3 * c)
    q, k, v = (reshape(t, (n, heads, d, h * w)) for t in split(qkv, 3, axis=1))
    if normalize_qk:
        q, k = l2_normalize(q, -1), l2_normalize(k, -1)
    A = matmul(q, swapaxes(k, -1, -2))
    state = em_iterate(A, p["bases"], em)
    if recorder is not None:
        recorder.record(p.full("bases"), state)
    return A, reconstruct(state), v


def ioab_forward(F_b: Tensor, p: Scope, heads: int, em: EmConfig, normalize_qk: bool = True,
                 recorder: EmRecorder | None = None) -> Tensor:
    """Channel attention whose score matrix is replaced by its EM reconstruction.

    Output is ``F_b + proj((D / sqrt(d)) @ V)``.
    """
    n, c, h, w = F_b.shape
    _, D, v = ioab_attention(F_b, p, heads, em, normalize_qk, recorder)
    attn = matmul(scale(D, 1.0 / math.sqrt(c // heads)), v)
    return F_b + _conv(reshape(attn, (n, c, h, w)), p, "proj")


def iofn_forward(F_in: Tensor, p: Scope, em: EmConfig, recorder: EmRecorder | None = None) -> Tensor:
    """Gated feed-forward whose gate map is EM-reconstructed over spatial positions."""
    n, c, h, w = F_in.shape
    fk = _norm(F_in, p)
    gate = _conv(_conv(fk, p, "gate_in"), p, "gate_dw", groups=p["gate_dw.weight"].shape[0])
    value = _conv(_conv(fk, p, "value_in"), p, "value_dw", groups=p["value_dw.weight"].shape[0])
    hidden = gate.shape[1]
    points = transpose(reshape(gate, (n, hidden, h * w)), (0, 2, 1))
    state = em_iterate(points, p["bases"], em)
    if recorder is not None:
        recorder.record(p.full("bases"), state)
    gate_t = reshape(transpose(reconstruct(state), (0, 2, 1)), (n, hidden, h, w))
    return F_in + _conv(mul(gate_t, value), p, "proj")


def emb_forward(F_b: Tensor, p: Scope, heads: int, em: EmConfig, normalize_qk: bool = True,
                recorder: EmRecorder | None = None) -> Tensor:
    mid = ioab_forward(F_b, p.sub("ioab"), heads, em, normalize_qk, recorder)
    return iofn_forward(mid, p.sub("iofn"), em, recorder)


def _bottleneck(t: Tensor, p: Scope) -> Tensor:
    return relu(_norm(_conv(t, p, "reduce"), p))


def lmb_forward(F_i: Tensor, p: Scope, two_stream: bool = True) -> Tensor:
    """Directional pooled attention: ``F_i + F_i * a_h * a_w``."""
    shape = F_i.shape
    if two_stream:
        a_h = sigmoid(_conv(_bottleneck(directional_avg_pool(F_i, "vertical"), p), p, "expand_h"))
        a_w = sigmoid(_conv(_bottleneck(directional_avg_pool(F_i, "horizontal"), p), p, "expand_w"))
        gate = mul(broadcast_to(a_h, shape), broadcast_to(a_w, shape))
    else:
        pooled = reduce("mean", F_i, (2, 3), keep_dims=True)
        gate = broadcast_to(sigmoid(_conv(_bottleneck(pooled, p), p, "expand_h")), shape)
    return F_i + mul(F_i, gate)


def lmrb_forward(F_l: Tensor, p: Scope, cfg: LmrbConfig) -> Tensor:
    """``cfg.cascades`` residual stages of ``x + LMB(relu(conv1x1(x)))``."""
    x = F_l
    for i in range(int(cfg.cascades)):
        stage = p.sub(str(i))
        x = x + lmb_forward(relu(_conv(x, stage, "conv")), stage.sub("lmb"), cfg.two_stream)
    return x
