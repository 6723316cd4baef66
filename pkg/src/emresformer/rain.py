"""Additive rain-streak degradation and paired dataset synthesis.

A rainy observation is the clean scene plus a streak layer, clipped to
[0, 1].  Streaks are anti-aliased line segments with a Gaussian
cross-section whose position, orientation, length and brightness are drawn
from :class:`StreakParams`.  Everything is a pure function of the seeds.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ImageFormatError, ShapeError
from .imageio import list_images, read_image, write_image

ROLES = ("clean", "streak", "rainy", "derained", "gt")
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass
class StreakParams:
    density: float = 4.0          # expected streaks per 1000 pixels
    angle_deg: float = 80.0       # from the image x-axis; 90 is vertical
    angle_jitter_deg: float = 6.0
    length_px: float = 12.0
    length_jitter_px: float = 5.0
    width_px: float = 1.2
    intensity: float = 0.55
    intensity_jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("density", "angle_jitter_deg", "length_px", "length_jitter_px", "width_px",
                     "intensity", "intensity_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"StreakParams.{name} must be non-negative")
        if self.intensity + self.intensity_jitter > 1.0 + 1e-12:
            raise ConfigError("StreakParams: intensity + intensity_jitter must not exceed 1")

    def with_seed(self, seed: int) -> "StreakParams":
        return StreakParams(**{**asdict(self), "seed": int(seed)})


@dataclass
class Image:
    """A 3×H×W image in [0, 1] tagged with its role in the deraining pipeline."""

    pixels: np.ndarray
    role: str = "clean"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError("Image pixels must be 3×H×W", self.pixels.shape)
        if self.role not in ROLES:
            raise ValueError(f"unknown image role {self.role!r}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("Image pixels must lie in [0, 1]")

    @property
    def shape(self) -> tuple:
        return self.pixels.shape


def splitmix64(state: int) -> int:
    """One SplitMix64 output for ``state`` (the generator adds the golden gamma first)."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root_seed: int, index: int) -> int:
    """The ``index``-th SplitMix64 output of a stream seeded with ``root_seed``."""
    return splitmix64((int(root_seed) + int(index) * _GOLDEN) & _MASK64)


def _render_streak(canvas: np.ndarray, cx, cy, theta, length, sigma, amp) -> None:
    h, w = canvas.shape
    ux, uy = math.cos(theta), math.sin(theta)
    reach = length / 2.0 + 3.0 * sigma + 1.0
    x0, x1 = max(0, int(cx - reach)), min(w, int(cx + reach) + 2)
    y0, y1 = max(0, int(cy - reach)), min(h, int(cy + reach) + 2)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs + 0.5 - cx, ys + 0.5 - cy
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    ends = np.clip(length / 2.0 + 0.5 - np.abs(along), 0.0, 1.0)
    canvas[y0:y1, x0:x1] += amp * ends * np.exp(-(across ** 2) / (2.0 * sigma ** 2))


def synth_streaks(h: int, w: int, p: StreakParams) -> Image:
    """Render a streak layer (grey, replicated over RGB) from ``p.seed``."""
    if h <= 0 or w <= 0:
        raise ShapeError(f"streak canvas must be non-empty, got {h}x{w}")
    rng = np.random.default_rng(p.seed)
    canvas = np.zeros((h, w))
    count = rng.poisson(p.density * h * w / 1000.0) if p.density > 0 else 0
    sigma = max(p.width_px, 0.25) / 2.0
    for _ in range(count):
        length = max(1.0, p.length_px + rng.uniform(-p.length_jitter_px, p.length_jitter_px))
        cx = rng.uniform(-length / 2.0, w + length / 2.0)
        cy = rng.uniform(-length / 2.0, h + length / 2.0)
        theta = math.radians(p.angle_deg + rng.uniform(-p.angle_jitter_deg, p.angle_jitter_deg))
        amp = float(np.clip(p.intensity + rng.uniform(-p.intensity_jitter, p.intensity_jitter), 0.0, 1.0))
        _render_streak(canvas, cx, cy, theta, length, sigma, amp)
    layer = np.clip(canvas, 0.0, 1.0)
    return Image(np.repeat(layer[None], 3, axis=0), role="streak")


def compose_rainy(clean, streaks) -> Image:
    """``clip(clean + streaks, 0, 1)``."""
    c = np.asarray(getattr(clean, "pixels", clean), dtype=np.float64)
    s = np.asarray(getattr(streaks, "pixels", streaks), dtype=np.float64)
    if c.shape != s.shape:
        raise ShapeError("compose_rainy: clean and streak layers differ in shape", c.shape, s.shape)
    return Image(np.clip(c + s, 0.0, 1.0), role="rainy")


def procedural_scene(h: int, w: int, seed: int) -> Image:
    """A smooth synthetic background with a few flat-coloured shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / float(max(h, w))
    img = np.empty((3, h, w))
    for c in range(3):
        base = rng.uniform(0.15, 0.6) + rng.uniform(-0.2, 0.2) * xx + rng.uniform(-0.2, 0.2) * yy
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 4.0, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            base = base + rng.uniform(0.02, 0.08) * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        img[c] = base
    for _ in range(rng.integers(2, 6)):
        colour = rng.uniform(0.05, 0.75, size=3)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            y1, x1 = min(h, y0 + rng.integers(4, max(5, h // 2))), min(w, x0 + rng.integers(4, max(5, w // 2)))
            img[:, y0:y1, x0:x1] = colour[:, None, None]
        else:
            cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(3, max(4, min(h, w) / 4))
            mask = (np.mgrid[0:h, 0:w][0] - cy) ** 2 + (np.mgrid[0:h, 0:w][1] - cx) ** 2 < r * r
            img[:, mask] = colour[:, None]
    return Image(np.clip(img, 0.0, 0.85), role="clean")


def write_procedural_scenes(out_dir, count: int, size: int, seed: int) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out_dir / f"scene_{i:04d}.ppm"
        write_image(path, procedural_scene(size, size, derive_seed(seed, i)).pixels)
        paths.append(path)
    return paths


def _created_at() -> str:
    # reproducible unless SOURCE_DATE_EPOCH pins a different instant
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(epoch))


def _crop8(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[1] - a.shape[1] % 8, a.shape[2] - a.shape[2] % 8
    if h == 0 or w == 0:
        raise ShapeError("clean images must be at least 8×8", a.shape)
    return a[:, :h, :w]


def make_dataset(clean_dir, out_dir, p: StreakParams, count: int, root_seed: int | None = None,
                 seeds: list | None = None) -> dict:
    """Write ``count`` rainy/clean PPM pairs plus ``manifest.json``.

    Clean sources are cycled in sorted order and cropped to multiples of 8.
    Per-pair seeds come from :func:`derive_seed` unless ``seeds`` replays a
    recorded list.  Returns the manifest dictionary.
    """
    root_seed = p.seed if root_seed is None else int(root_seed)
    out_dir = Path(out_dir)
    manifest = {"pairs": [], "params": asdict(p), "root_seed": root_seed, "created_at": _created_at()}
    if count == 0:
        return manifest
    try:
        sources = list_images(clean_dir)
    except OSError as exc:
        raise ImageFormatError(f"cannot list clean directory: {exc.strerror}", path=clean_dir) from exc
    if not sources:
        raise ImageFormatError("clean directory holds no readable images", path=clean_dir)
    try:
        (out_dir / "rainy").mkdir(parents=True, exist_ok=True)
        (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageFormatError(f"cannot create output directory: {exc.strerror}", path=out_dir) from exc
    cache = {}
    for i in range(count):
        src = sources[i % len(sources)]
        if src not in cache:
            cache[src] = _crop8(read_image(src))
        clean = cache[src]
        seed = derive_seed(root_seed, i) if seeds is None else int(seeds[i])
        streaks = synth_streaks(clean.shape[1], clean.shape[2], p.with_seed(seed))
        rainy = compose_rainy(clean, streaks)
        name = f"{i:04d}.ppm"
        write_image(out_dir / "rainy" / name, rainy.pixels)
        write_image(out_dir / "clean" / name, clean)
        manifest["pairs"].append({"rainy": f"rainy/{name}", "clean": f"clean/{name}", "seed": seed,
                                  "source": src.name})
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def regenerate(manifest: dict, clean_dir, out_dir) -> dict:
    """Rebuild a dataset from the parameters and seeds recorded in ``manifest``."""
    params = StreakParams(**manifest["params"])
    seeds = [pair["seed"] for pair in manifest["pairs"]]
    out = make_dataset(clean_dir, out_dir, params, len(seeds), manifest["root_seed"], seeds=seeds)
    out["created_at"] = manifest.get("created_at", out["created_at"])
    write_manifest(Path(out_dir) / "manifest.json", out)
    return out


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ImageFormatError(f"cannot read manifest: {exc}", path=path) from exc
    for key in ("pairs", "params", "root_seed"):
        if key not in manifest:
            raise ImageFormatError(f"manifest missing {key!r}", path=path)
    return manifest


def load_pairs(manifest_path) -> list:
    """Read every (rainy, clean) pair listed in a manifest as float arrays."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    return [(read_image(base / pair["rainy"]), read_image(base / pair["clean"])) for pair in manifest["pairs"]]


def synth_dataset(out_dir, p: StreakParams, count: int = 20, size: int = 64, clean_dir=None) -> dict:
    """Paired dataset from ``clean_dir``, or from procedural scenes when it is None.

    Procedural sources go to ``out_dir/sources`` and are seeded from ``p.seed``.
    """
    out_dir = Path(out_dir)
    if clean_dir is None:
        clean_dir = out_dir / "sources"
        write_procedural_scenes(clean_dir, count, size, p.seed)
    return make_dataset(clean_dir, out_dir, p, count)
