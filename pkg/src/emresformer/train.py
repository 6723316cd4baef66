"""AdamW training loop with SSIM loss, patch sampling and per-epoch logging."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .em import EmRecorder, momentum_update
from .errors import ConfigError, ShapeError, TrainingDiverged
from .metrics import psnr, ssim, ssim_loss
from .model import ModelConfig, ModelParams, build, forward
from .rain import load_pairs
from .tensor import Tape, Tensor

LOG_FIELDS = ("epoch", "ssim_loss", "val_psnr_y", "val_ssim_y")
DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    patch: int = 128
    epochs: int = 500
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"
    schedule: str = "constant"   # or "cosine"
    hflip: bool = True
    val_fraction: float = 0.1
    max_steps: int | None = None

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(learning_rate=2e-3, patch=32, epochs=40)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.patch < 1 or self.epochs < 0:
            raise ConfigError("batch_size and patch must be positive, epochs non-negative")
        if self.patch % 8:
            raise ConfigError(f"patch must be divisible by 8, got {self.patch}")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("weight_decay must be >= 0 and eps > 0")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"schedule must be 'constant' or 'cosine', got {self.schedule!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict, grads: dict, state: OptState, lr: float, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0) -> OptState:
    """One in-place AdamW update of ``params`` (name -> Tensor)."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ConfigError(f"adamw_step: no gradient for parameter {name!r}")
        g = np.asarray(getattr(g, "data", g), dtype=p.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"adamw_step: gradient shape mismatch for {name!r}", p.shape, g.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data * (1.0 - lr * weight_decay) - lr * update).astype(p.dtype)
    return state


def sample_patches(pairs: list, patch: int, rng: np.random.Generator, hflip: bool = False):
    """Aligned random crops (and optional mirrored copies) of each (rainy, clean) pair."""
    rainy, clean = [], []
    for r, c in pairs:
        if r.shape != c.shape:
            raise ShapeError("sample_patches: rainy and clean differ in shape", r.shape, c.shape)
        _, h, w = r.shape
        if h < patch or w < patch:
            raise ShapeError(f"sample_patches: image smaller than patch {patch}", r.shape)
        y = int(rng.integers(0, h - patch + 1))
        x = int(rng.integers(0, w - patch + 1))
        cr, cc = r[:, y:y + patch, x:x + patch], c[:, y:y + patch, x:x + patch]
        if hflip and rng.random() < 0.5:
            cr, cc = cr[:, :, ::-1], cc[:, :, ::-1]
        rainy.append(cr)
        clean.append(cc)
    return np.stack(rainy), np.stack(clean)


def split_pairs(pairs: list, val_fraction: float) -> tuple[list, list]:
    n_val = int(round(len(pairs) * val_fraction))
    if val_fraction > 0 and len(pairs) > 1:
        n_val = max(1, n_val)
    n_val = min(n_val, len(pairs) - 1)
    return pairs[:len(pairs) - n_val], pairs[len(pairs) - n_val:]


def infer(params: ModelParams, images: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Forward a batch without recording; returns a numpy array."""
    x = Tensor(np.asarray(images, dtype=params["final.weight"].dtype))
    return forward(params, x, clamp_output=clamp).data


def evaluate(params: ModelParams, pairs: list) -> dict:
    """Mean Y-channel PSNR/SSIM of the derained images, next to the rainy baseline."""
    if not pairs:
        return {"psnr_y": math.nan, "ssim_y": math.nan, "baseline_psnr_y": math.nan, "baseline_ssim_y": math.nan}
    ps, ss, bp, bs = [], [], [], []
    for r, c in pairs:
        out = infer(params, r[None])[0].astype(np.float64)
        ps.append(psnr(out, c, y_channel=True))
        ss.append(ssim(out, c, y_channel=True))
        bp.append(psnr(r, c, y_channel=True))
        bs.append(ssim(r, c, y_channel=True))
    return {"psnr_y": float(np.mean(ps)), "ssim_y": float(np.mean(ss)),
            "baseline_psnr_y": float(np.mean(bp)), "baseline_ssim_y": float(np.mean(bs))}


def probe_loss(params: ModelParams, pairs: list) -> float:
    """Full-image SSIM loss averaged over ``pairs`` (no clamping, no tape)."""
    vals = []
    for r, c in pairs:
        out = infer(params, r[None], clamp=False)
        vals.append(float(ssim_loss(Tensor(out.astype(np.float64)), Tensor(c[None])).data))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    params: ModelParams
    rows: list
    step_losses: list
    initial_train_loss: float
    final_train_loss: float
    val: dict
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.schedule == "cosine" and total > 0:
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total))
    return cfg.learning_rate


def _write_log(path: Path, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_FIELDS})


def train(model_cfg: ModelConfig, cfg: TrainConfig, manifest, out_dir=None, pairs: list | None = None,
          progress=None) -> TrainResult:
    """Train from scratch on the pairs listed in ``manifest``.

    With ``out_dir`` set, ``log.csv``, ``best.emrf`` and ``last.emrf`` are
    written there.  ``pairs`` may supply preloaded arrays instead.
    """
    cfg.validate()
    if pairs is None:
        pairs = load_pairs(manifest)
    if not pairs:
        raise ConfigError("training manifest lists no pairs")
    train_pairs, val_pairs = split_pairs(pairs, cfg.val_fraction)
    dtype = DTYPES[cfg.dtype]
    params = build(model_cfg, cfg.seed, dtype)
    rng = np.random.default_rng(cfg.seed)
    opt_params = dict(params.items())
    state = OptState()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    steps_per_epoch = math.ceil(len(train_pairs) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    initial = probe_loss(params, train_pairs)
    rows, step_losses = [], []
    best_psnr = -math.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        if step >= total:
            break
        order = rng.permutation(len(train_pairs))
        epoch_losses = []
        for b in range(steps_per_epoch):
            if step >= total:
                break
            batch = [train_pairs[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            rainy, clean = sample_patches(batch, cfg.patch, rng, cfg.hflip)
            recorder = EmRecorder()
            with Tape() as tape:
                pred = forward(params, Tensor(rainy.astype(dtype)), recorder=recorder)
                loss = ssim_loss(pred, Tensor(clean.astype(dtype)))
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {n: float(np.linalg.norm(t.data)) for n, t in params.items()}
                raise TrainingDiverged(epoch, b, value, norms)
            grads = tape.backward(loss, opt_params)
            for t in params.tensors.values():
                t.zero_grad()
            lr = _lr_at(cfg, step, total)
            adamw_step(opt_params, grads, state, lr, cfg.betas, cfg.eps, cfg.weight_decay)
            if lr > 0 and model_cfg.em.momentum > 0:
                for name, finals in recorder.final_bases.items():
                    momentum_update(params[name], np.mean(finals, axis=0), model_cfg.em.momentum,
                                    model_cfg.em.normalize_bases)
            epoch_losses.append(value)
            step_losses.append(value)
            step += 1
        val = evaluate(params, val_pairs)
        row = {"epoch": epoch, "ssim_loss": float(np.mean(epoch_losses)),
               "val_psnr_y": val["psnr_y"], "val_ssim_y": val["ssim_y"]}
        rows.append(row)
        if progress is not None:
            progress(row)
        if out is not None:
            _write_log(out / "log.csv", rows)
            if val["psnr_y"] > best_psnr or not math.isfinite(best_psnr):
                best_psnr = val["psnr_y"]
                save_checkpoint(out / "best.emrf", model_cfg, params)

    result = TrainResult(params, rows, step_losses, initial, probe_loss(params, train_pairs),
                         evaluate(params, val_pairs))
    if out is not None:
        _write_log(out / "log.csv", rows)
        save_checkpoint(out / "last.emrf", model_cfg, params)
        if not (out / "best.emrf").exists():
            save_checkpoint(out / "best.emrf", model_cfg, params)
        result.best_checkpoint, result.last_checkpoint = out / "best.emrf", out / "last.emrf"
    return result
