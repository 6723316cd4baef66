"""Four-level encoder-decoder deraining network with residual reconstruction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    LmrbConfig,
    Scope,
    conv_bias,
    conv_weight,
    emb_forward,
    emb_init,
    lmrb_forward,
    lmrb_init,
)
from .em import EmConfig, EmRecorder
from .errors import ConfigError, ShapeError
from .nn import ConvKernel, conv2d, resample
from .tensor import Tensor, clamp, concat

LMRB_PLACEMENTS = ("skip_paths", "bottleneck", "refinement", "both", "none")
LEVELS = 4


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Defaults describe the full-size network; :meth:`desk` gives the small
    preset used for CPU training and tests.  ``lmrb_placement="both"`` puts
    an LMRB on every skip path and one after the refinement stage.
    """

    base_channels: int = 48
    depths: tuple = (9, 6, 3, 0)
    refinement_blocks: int = 4
    heads: tuple = (2, 2, 2, 2)
    ffn_expansion: float = 2.66
    shallow_bias: bool = True
    normalize_qk: bool = True
    lmrb_placement: str = "both"
    em: EmConfig = field(default_factory=EmConfig)
    lmrb: LmrbConfig = field(default_factory=LmrbConfig)

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.heads = tuple(int(h) for h in self.heads)
        if isinstance(self.em, dict):
            self.em = EmConfig(**self.em)
        if isinstance(self.lmrb, dict):
            self.lmrb = LmrbConfig(**self.lmrb)
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        base = dict(base_channels=8, depths=(2, 2, 2, 0), refinement_blocks=1)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if len(self.depths) != LEVELS or any(d < 0 for d in self.depths):
            raise ConfigError(f"depths must be {LEVELS} non-negative ints, got {self.depths}")
        if len(self.heads) != LEVELS or any(h < 1 for h in self.heads):
            raise ConfigError(f"heads must be {LEVELS} positive ints, got {self.heads}")
        if self.refinement_blocks < 0:
            raise ConfigError("refinement_blocks must be >= 0")
        if self.lmrb_placement not in LMRB_PLACEMENTS:
            raise ConfigError(f"lmrb_placement must be one of {LMRB_PLACEMENTS}")
        for level, heads in enumerate(self.heads):
            width = self.width(level)
            if width % heads:
                raise ConfigError(f"level {level + 1} width {width} not divisible by {heads} heads")
        self.em.validate()

    def width(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def has_deep_stage(self) -> bool:
        return sum(self.depths) + self.refinement_blocks > 0

    def lmrb_on(self, site: str) -> bool:
        p = self.lmrb_placement
        if site == "skip":
            return p in ("skip_paths", "both")
        if site == "refinement":
            return p in ("refinement", "both")
        if site == "bottleneck":
            return p == "bottleneck"
        return False


@dataclass
class ModelParams:
    """Model configuration plus the ordered map of named learnable tensors."""

    config: ModelConfig
    tensors: dict

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list:
        return list(self.tensors)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k)
                                         for k, v in self.tensors.items()})


def _layout(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """Initial arrays for every parameter, in a fixed order."""
    c = cfg.base_channels
    p = {"shallow.weight": conv_weight(rng, c, 3, 3, 3)}
    if cfg.shallow_bias:
        p["shallow.bias"] = conv_bias(rng, c, 3 * 9)

    def add(prefix, d):
        p.update({f"{prefix}.{k}": v for k, v in d.items()})

    if cfg.has_deep_stage:
        for level in range(LEVELS - 1):
            width = cfg.width(level)
            for i in range(cfg.depths[level]):
                add(f"encoder{level + 1}.{i}", emb_init(rng, width, cfg.heads[level], cfg.ffn_expansion, cfg.em))
            p[f"down{level + 1}.weight"] = conv_weight(rng, 2 * width, 4 * width)
        latent = cfg.width(LEVELS - 1)
        for i in range(cfg.depths[-1]):
            add(f"latent.{i}", emb_init(rng, latent, cfg.heads[-1], cfg.ffn_expansion, cfg.em))
        if cfg.lmrb_on("bottleneck"):
            add("latent_lmrb", lmrb_init(rng, latent, cfg.lmrb))
        for level in reversed(range(LEVELS - 1)):
            width = cfg.width(level)
            p[f"up{level + 1}.weight"] = conv_weight(rng, 4 * width, 2 * width)
            if cfg.lmrb_on("skip"):
                add(f"skip{level + 1}", lmrb_init(rng, width, cfg.lmrb))
            p[f"fuse{level + 1}.weight"] = conv_weight(rng, width, 2 * width)
            for i in range(cfg.depths[level]):
                add(f"decoder{level + 1}.{i}", emb_init(rng, width, cfg.heads[level], cfg.ffn_expansion, cfg.em))
        for i in range(cfg.refinement_blocks):
            add(f"refine.{i}", emb_init(rng, c, cfg.heads[0], cfg.ffn_expansion, cfg.em))
        if cfg.lmrb_on("refinement"):
            add("refine_lmrb", lmrb_init(rng, c, cfg.lmrb))
    # zero reconstruction conv: the untrained network is the identity map
    p["final.weight"] = np.zeros((3, c, 3, 3))
    p["final.bias"] = np.zeros(3)
    return p


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Deterministically initialise every parameter from ``seed``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    arrays = _layout(cfg, rng)
    tensors = {name: Tensor(np.asarray(a, dtype=dtype), requires_grad=True, name=name) for name, a in arrays.items()}
    return ModelParams(cfg, tensors)


def param_count(params: ModelParams) -> int:
    return int(sum(t.size for t in params.tensors.values()))


def bases_names(params: ModelParams) -> list:
    return [n for n in params.tensors if n.endswith(".bases")]


def forward(params: ModelParams, I_rain, recorder: EmRecorder | None = None, clamp_output: bool = False) -> Tensor:
    """Derain ``I_rain`` (N×3×H×W, H and W divisible by 8).

    Returns ``I_rain + R`` where ``R`` is the predicted residual; with
    ``clamp_output`` the result is saturated into [0, 1] (inference only).
    """
    cfg = params.config
    x = I_rain if isinstance(I_rain, Tensor) else Tensor(I_rain)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError("forward expects an N×3×H×W batch", x.shape)
    divisor = 2 ** (LEVELS - 1)
    if x.shape[2] % divisor or x.shape[3] % divisor:
        raise ShapeError(f"spatial extents must be divisible by {divisor}", x.shape)
    root = Scope(params.tensors)
    feats = conv2d(x, ConvKernel(params["shallow.weight"], params.tensors.get("shallow.bias")))

    def embs(t, prefix, count, heads):
        for i in range(count):
            t = emb_forward(t, root.sub(f"{prefix}.{i}"), heads, cfg.em, cfg.normalize_qk, recorder)
        return t

    if cfg.has_deep_stage:
        skips = []
        t = feats
        for level in range(LEVELS - 1):
            t = embs(t, f"encoder{level + 1}", cfg.depths[level], cfg.heads[level])
            skips.append(t)
            t = resample(t, "down", ConvKernel(params[f"down{level + 1}.weight"]))
        t = embs(t, "latent", cfg.depths[-1], cfg.heads[-1])
        if cfg.lmrb_on("bottleneck"):
            t = lmrb_forward(t, root.sub("latent_lmrb"), cfg.lmrb)
        for level in reversed(range(LEVELS - 1)):
            t = resample(t, "up", ConvKernel(params[f"up{level + 1}.weight"]))
            skip = skips[level]
            if cfg.lmrb_on("skip"):
                skip = lmrb_forward(skip, root.sub(f"skip{level + 1}"), cfg.lmrb)
            t = conv2d(concat([t, skip], axis=1), ConvKernel(params[f"fuse{level + 1}.weight"]))
            t = embs(t, f"decoder{level + 1}", cfg.depths[level], cfg.heads[level])
        t = embs(t, "refine", cfg.refinement_blocks, cfg.heads[0])
        if cfg.lmrb_on("refinement"):
            t = lmrb_forward(t, root.sub("refine_lmrb"), cfg.lmrb)
        feats = t
    residual = conv2d(feats, ConvKernel(params["final.weight"], params["final.bias"]))
    out = x + residual
    return clamp(out, 0.0, 1.0) if clamp_output else out
