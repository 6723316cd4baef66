"""The finite-difference suite run by ``emresformer gradcheck`` and the tests.

Each case reduces its op output to a scalar with a fixed random weighting so
that every output element contributes a distinct coefficient.  Inputs keep
clear of kinks (relu, clamp, max ties) where central differences break.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import blocks
from . import tensor as T
from .blocks import LmrbConfig, Scope, emb_init, ioab_forward, iofn_forward, lmb_forward, lmb_init, lmrb_forward, lmrb_init
from .em import EmConfig, e_step, em_iterate, m_step, reconstruct
from .gradcheck import GradCheckReport, grad_check, grad_check_param
from .metrics import ssim_loss
from .model import ModelConfig, build, forward
from .nn import (
    ConvKernel,
    conv2d,
    depth_to_space,
    directional_avg_pool,
    gelu,
    l2_normalize,
    layer_norm,
    relu,
    sigmoid,
    softmax,
    space_to_depth,
    tanh,
)
from .tensor import Tensor

STEP = 1e-5
TOL = 1e-4


class _Suite:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.results: list = []

    def arr(self, *shape, lo=-1.0, hi=1.0):
        return self.rng.uniform(lo, hi, size=shape)

    def away(self, *shape, gap=0.1):
        a = self.arr(*shape)
        return np.where(np.abs(a) < gap, np.sign(a + 1e-300) * gap + a, a)

    def reducer(self):
        weights = {}

        def r(y):
            w = weights.get(y.shape)
            if w is None:
                w = weights[y.shape] = self.rng.uniform(0.5, 1.5, size=y.shape)
            return T.sum(T.mul(y, Tensor(w)))

        return r

    def check(self, name: str, f, x):
        r = self.reducer()
        self.results.append((name, grad_check(lambda t: r(f(t)), x, STEP, TOL)))

    def check_param(self, name: str, f, param: Tensor, count: int | None = None):
        r = self.reducer()
        idx = None
        if count is not None and param.size > count:
            idx = np.sort(self.rng.choice(param.size, size=count, replace=False))
        self.results.append((name, grad_check_param(lambda: r(f()), param, STEP, TOL, idx)))


def _tensor_ops(s: _Suite) -> None:
    b = Tensor(s.arr(3, 4))
    pos = Tensor(s.arr(3, 4, lo=0.5, hi=2.0))
    s.check("add", lambda t: T.add(t, b), s.arr(3, 4))
    s.check("sub", lambda t: T.sub(b, t), s.arr(3, 4))
    s.check("mul", lambda t: T.mul(t, b), s.arr(3, 4))
    s.check("div.numerator", lambda t: T.div(t, pos), s.arr(3, 4))
    s.check("div.denominator", lambda t: T.div(b, t), s.arr(3, 4, lo=0.5, hi=2.0))
    s.check("scale", lambda t: T.scale(t, -2.5), s.arr(3, 4))
    s.check("neg", T.neg, s.arr(3, 4))
    s.check("reciprocal", T.reciprocal, s.arr(3, 4, lo=0.5, hi=2.0))
    # magnitudes in [0.1, 0.4] or [0.6, 0.9] keep clear of the clamp edges
    mag = np.where(s.arr(3, 4) > 0, s.arr(3, 4, lo=0.1, hi=0.4), s.arr(3, 4, lo=0.6, hi=0.9))
    s.check("clamp", lambda t: T.clamp(t, -0.5, 0.5), mag * np.sign(s.away(3, 4)))
    s.check("exp", T.exp, s.arr(3, 4))
    s.check("log", T.log, s.arr(3, 4, lo=0.5, hi=2.0))
    s.check("sqrt", T.sqrt, s.arr(3, 4, lo=0.5, hi=2.0))
    s.check("square", T.square, s.arr(3, 4))
    mask = s.arr(3, 4) > 0
    s.check("where", lambda t: T.where(mask, t, b), s.arr(3, 4))
    m = Tensor(s.arr(2, 4, 5))
    s.check("matmul.left", lambda t: T.matmul(t, m), s.arr(2, 3, 4))
    left = Tensor(s.arr(2, 3, 4))
    s.check("matmul.right", lambda t: T.matmul(left, t), s.arr(2, 4, 5))
    s.check("sum", lambda t: T.reduce("sum", t, 1, keep_dims=True), s.arr(2, 3, 4))
    s.check("mean", lambda t: T.reduce("mean", t, (0, 2)), s.arr(2, 3, 4))
    s.check("max", lambda t: T.reduce("max", t, -1), s.arr(2, 3, 4))
    s.check("reshape", lambda t: T.reshape(t, (4, 6)), s.arr(2, 3, 4))
    s.check("transpose", lambda t: T.transpose(t, (2, 0, 1)), s.arr(2, 3, 4))
    s.check("swapaxes", lambda t: T.swapaxes(t, 0, 2), s.arr(2, 3, 4))
    s.check("broadcast_to", lambda t: T.broadcast_to(t, (2, 3, 4)), s.arr(3, 1))
    c = Tensor(s.arr(2, 2, 4))
    s.check("concat", lambda t: T.concat([t, c], axis=1), s.arr(2, 3, 4))
    s.check("split", lambda t: T.split(t, 2, axis=2)[1], s.arr(2, 3, 4))
    s.check("getitem", lambda t: t[:, 1:, ::2], s.arr(2, 3, 4))


def _nn_ops(s: _Suite) -> None:
    x = s.arr(2, 4, 5, 6)
    cases = {
        "conv2d.pointwise": ConvKernel(Tensor(s.arr(3, 4, 1, 1)), Tensor(s.arr(3))),
        "conv2d.depthwise": ConvKernel(Tensor(s.arr(4, 1, 3, 3)), Tensor(s.arr(4)), groups=4),
        "conv2d.dense": ConvKernel(Tensor(s.arr(3, 4, 3, 3)), Tensor(s.arr(3))),
        "conv2d.strided": ConvKernel(Tensor(s.arr(3, 4, 3, 3)), stride=2, padding=0),
        "conv2d.grouped": ConvKernel(Tensor(s.arr(4, 2, 3, 3)), groups=2),
    }
    for name, k in cases.items():
        s.check(name, lambda t, k=k: conv2d(t, k), x)
        s.check_param(name + ".weight", lambda k=k: conv2d(Tensor(x), k), k.weight)
        if k.bias is not None:
            s.check_param(name + ".bias", lambda k=k: conv2d(Tensor(x), k), k.bias)
    gain, off = Tensor(s.arr(4, lo=0.5, hi=1.5)), Tensor(s.arr(4))
    s.check("layer_norm", lambda t: layer_norm(t, gain, off), x)
    s.check_param("layer_norm.gain", lambda: layer_norm(Tensor(x), gain, off), gain)
    s.check_param("layer_norm.offset", lambda: layer_norm(Tensor(x), gain, off), off)
    s.check("softmax", lambda t: softmax(t, axis=-1), s.arr(3, 5) * 3)
    s.check("relu", relu, s.away(3, 5))
    s.check("sigmoid", sigmoid, s.arr(3, 5) * 3)
    s.check("gelu", gelu, s.arr(3, 5) * 3)
    s.check("tanh", tanh, s.arr(3, 5) * 2)
    s.check("pool.vertical", lambda t: directional_avg_pool(t, "vertical"), x)
    s.check("pool.horizontal", lambda t: directional_avg_pool(t, "horizontal"), x)
    s.check("space_to_depth", space_to_depth, s.arr(1, 2, 4, 6))
    s.check("depth_to_space", depth_to_space, s.arr(1, 8, 2, 3))
    s.check("l2_normalize", lambda t: l2_normalize(t, -1), s.arr(3, 5))


def _em_ops(s: _Suite) -> None:
    X, mu = s.arr(2, 7, 3), s.arr(4, 3)
    s.check("em.e_step.points", lambda t: e_step(t, Tensor(mu), 0.8), X)
    s.check("em.e_step.bases", lambda t: e_step(Tensor(X), t, 0.8), mu)
    Z = np.asarray(e_step(Tensor(X), Tensor(mu), 0.8).data)
    s.check("em.m_step.points", lambda t: m_step(t, Tensor(Z))[0], X)
    s.check("em.m_step.responsibilities", lambda t: m_step(Tensor(X), t)[0], Z)
    cfg = EmConfig(num_bases=4, iterations=3)
    s.check("em.unrolled.points", lambda t: reconstruct(em_iterate(t, Tensor(mu), cfg)), X)
    s.check("em.unrolled.bases", lambda t: reconstruct(em_iterate(Tensor(X), t, cfg)), mu)
    ncfg = EmConfig(num_bases=4, iterations=2, normalize_bases=True)
    s.check("em.unrolled.normalized", lambda t: reconstruct(em_iterate(t, Tensor(mu), ncfg)), X)


def _named(arrays: dict) -> dict:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def _blocks(s: _Suite) -> None:
    em = EmConfig(num_bases=3, iterations=2)
    x = s.arr(1, 4, 4, 4)
    p = _named(emb_init(s.rng, 4, 2, 2.0, em))
    ioab, iofn = Scope(p, "ioab"), Scope(p, "iofn")
    s.check("ioab.input", lambda t: ioab_forward(t, ioab, 2, em), x)
    s.check("ioab.input.raw_qk", lambda t: ioab_forward(t, ioab, 2, em, normalize_qk=False), x)
    for key in ("qkv.weight", "qkv_dw.weight", "proj.weight", "bases", "norm.gain"):
        s.check_param(f"ioab.{key}", lambda: ioab_forward(Tensor(x), ioab, 2, em), ioab[key], count=12)
    s.check("iofn.input", lambda t: iofn_forward(t, iofn, em), x)
    for key in ("gate_in.weight", "gate_dw.weight", "value_in.weight", "proj.weight", "bases", "norm.offset"):
        s.check_param(f"iofn.{key}", lambda: iofn_forward(Tensor(x), iofn, em), iofn[key], count=12)
    lp = Scope(_named(lmb_init(s.rng, 4, 2)))
    s.check("lmb.two_stream", lambda t: lmb_forward(t, lp, True), x)
    s.check("lmb.single_stream", lambda t: lmb_forward(t, lp, False), x)
    for key in ("reduce.weight", "expand_h.weight", "expand_w.bias"):
        s.check_param(f"lmb.{key}", lambda: lmb_forward(Tensor(x), lp, True), lp[key], count=12)
    cfg = LmrbConfig(cascades=2, reduction=2)
    rp = Scope(_named(lmrb_init(s.rng, 4, cfg)))
    s.check("lmrb.input", lambda t: lmrb_forward(t, rp, cfg), x)
    s.check_param("lmrb.0.conv.weight", lambda: lmrb_forward(Tensor(x), rp, cfg), rp["0.conv.weight"], count=12)


def _metrics(s: _Suite) -> None:
    gt = Tensor(s.arr(1, 3, 12, 12, lo=0.0, hi=1.0))
    s.check("ssim_loss", lambda t: ssim_loss(t, gt), s.arr(1, 3, 12, 12, lo=0.0, hi=1.0))


@contextmanager
def _relu_inputs():
    """Collect every array passed to the block-level relu while active."""
    seen = []
    inner = blocks.relu

    def watched(x):
        seen.append(np.asarray(x.data))
        return inner(x)

    blocks.relu = watched
    try:
        yield seen
    finally:
        blocks.relu = inner


def relu_margin(f) -> float:
    """Smallest ``|pre-activation|`` over all relus evaluated by ``f()``."""
    with _relu_inputs() as seen:
        f()
    return min((float(np.abs(a).min()) for a in seen), default=np.inf)


KINK_MARGIN = 1e-4
MAX_DRAWS = 50


def model_case(s: _Suite, per_tensor: int = 2) -> None:
    # the network is piecewise smooth; redraw until no relu sits within reach of the step
    cfg = ModelConfig.desk(em=EmConfig(iterations=2))
    for _ in range(MAX_DRAWS):
        params = build(cfg, seed=int(s.rng.integers(1 << 31)))
        # a zero final conv blocks every path but the identity; perturb it
        params["final.weight"].data = s.arr(*params["final.weight"].shape) * 0.1
        params["final.bias"].data = s.arr(3) * 0.1
        x = s.arr(1, 3, 8, 8, lo=0.0, hi=1.0)
        if relu_margin(lambda: forward(params, Tensor(x))) > KINK_MARGIN:
            break
    else:
        raise RuntimeError(f"no kink-free model draw in {MAX_DRAWS} attempts")
    s.check("model.input", lambda t: forward(params, t), x)
    for name, t in params.items():
        s.check_param(f"model.{name}", lambda: forward(params, Tensor(x)), t, count=per_tensor)


def run_suite(seed: int = 0, include_model: bool = True, per_tensor: int = 2) -> list:
    """Return ``[(case name, GradCheckReport), ...]`` for every case."""
    s = _Suite(seed)
    _tensor_ops(s)
    _nn_ops(s)
    _em_ops(s)
    _blocks(s)
    _metrics(s)
    if include_model:
        model_case(s, per_tensor)
    return s.results


def failures(results: list) -> list:
    return [(name, rep) for name, rep in results if not rep.passed]


__all__ = ["GradCheckReport", "run_suite", "failures", "model_case", "STEP", "TOL"]
