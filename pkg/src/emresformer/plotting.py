"""Report figures, rendered headless to files next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
    "svg.hashsalt": "emresformer",
}


def _save(fig, path) -> Path:
    path = Path(path)
    # fixed metadata keeps repeated renders byte-identical
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None}
    fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def loss_curve(rows: list, path) -> Path:
    """Epoch SSIM loss with validation PSNR on a twin axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [r["epoch"] for r in rows]
        ax.plot(epochs, [r["ssim_loss"] for r in rows], color="tab:blue", marker=".", label="train 1-SSIM")
        ax.set_xlabel("epoch")
        ax.set_ylabel("1 - SSIM", color="tab:blue")
        twin = ax.twinx()
        twin.plot(epochs, [r["val_psnr_y"] for r in rows], color="tab:red", marker=".", label="val PSNR (Y)")
        twin.set_ylabel("PSNR [dB]", color="tab:red")
        twin.grid(False)
        return _save(fig, path)


def ablation_bars(rows: list, path) -> Path:
    """Median validation PSNR per swept setting, one panel per swept knob."""
    knobs = sorted({r["knob"] for r in rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(knobs), figsize=(2.6 * len(knobs), 3.0), squeeze=False)
        for ax, knob in zip(axes[0], knobs):
            sel = [r for r in rows if r["knob"] == knob]
            labels = [str(r["value"]) for r in sel]
            vals = [r["psnr_y"] for r in sel]
            ax.bar(labels, vals, color="0.55")
            lo = min(vals) - 0.5 if vals else 0.0
            ax.set_ylim(bottom=max(0.0, lo))
            ax.set_xlabel(knob)
            ax.set_ylabel("median val PSNR (Y) [dB]")
        return _save(fig, path)


def metric_histogram(rows: list, path, key: str = "psnr_y") -> Path:
    """Distribution of one per-image metric (infinite values omitted)."""
    vals = np.array([r[key] for r in rows], dtype=float)
    finite = vals[np.isfinite(vals)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if finite.size:
            ax.hist(finite, bins=max(1, min(20, finite.size)), color="0.55")
        skipped = vals.size - finite.size
        title = f"{key} over {vals.size} images"
        if skipped:
            title += f" ({skipped} infinite)"
        ax.set_title(title)
        ax.set_xlabel(key)
        ax.set_ylabel("count")
        return _save(fig, path)


def image_strip(images: list, titles: list, path) -> Path:
    """Side-by-side panels of 3×H×W images in [0, 1]."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=(2.2 * len(images), 2.4), squeeze=False)
        for ax, img, title in zip(axes[0], images, titles):
            ax.imshow(np.clip(np.transpose(np.asarray(img), (1, 2, 0)), 0.0, 1.0), interpolation="nearest")
            ax.set_title(title)
            ax.axis("off")
        return _save(fig, path)

