"""Desk-scale sweeps over EM iterations and LMRB cascade depth.

Each setting trains a fresh model per seed; the reported value is the median
over seeds of the final held-out Y-channel PSNR.  Settings shared by both
sweeps (the baseline t and k) are trained once and reused.
"""
from __future__ import annotations

import statistics
from dataclasses import replace

from .config import RunConfig
from .train import train

T_VALUES = (1, 2, 3, 4)
K_VALUES = (1, 2, 3, 4)
FIELDS = ("knob", "value", "psnr_y", "ssim_y", "seed_psnr_y")


def _variant(base: RunConfig, t: int, k: int, seed: int):
    model = replace(base.model, em=replace(base.model.em, iterations=t), lmrb=replace(base.model.lmrb, cascades=k))
    return model, replace(base.train, seed=seed)


def run_ablation(base: RunConfig, pairs: list, seeds: list, t_fixed: int = 3, k_fixed: int = 2,
                 t_values=T_VALUES, k_values=K_VALUES, progress=None) -> list:
    """Return one row per swept value: t first, then k."""
    cache = {}

    def measure(t, k):
        key = (t, k)
        if key not in cache:
            runs = []
            for seed in seeds:
                model, tcfg = _variant(base, t, k, seed)
                res = train(model, tcfg, None, pairs=pairs)
                runs.append(res.val)
                if progress is not None:
                    progress(t, k, seed, res.val)
            cache[key] = runs
        return cache[key]

    rows = []
    for knob, values in (("t", t_values), ("k", k_values)):
        for v in values:
            runs = measure(v, k_fixed) if knob == "t" else measure(t_fixed, v)
            ps = [r["psnr_y"] for r in runs]
            rows.append({"knob": knob, "value": v, "psnr_y": statistics.median(ps),
                         "ssim_y": statistics.median(r["ssim_y"] for r in runs),
                         "seed_psnr_y": ps})
    return rows
