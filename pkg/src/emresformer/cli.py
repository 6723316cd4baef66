"""Command-line entry point: ``emresformer {synth,train,derain,eval,ablate,gradcheck}``.

Any configuration leaf can be overridden with a flag named by its dotted
path, e.g. ``--model.em.iterations 2`` or ``--model.depths 2,2,2,0``.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig, leaf_paths, load_config
from .errors import EmresError, ShapeError

SUBCOMMANDS = ("synth", "train", "derain", "eval", "ablate", "gradcheck")
EVAL_FIELDS = ("name", "psnr_y", "ssim_y", "mae", "psnr_rgb", "ssim_rgb")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def workers() -> int:
    try:
        n = int(os.environ.get("EMRF_THREADS", "0"))
    except ValueError:
        n = 0
    return max(1, n) if n else max(1, min(4, os.cpu_count() or 1))


def fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(row[f]) for f in fields])


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--preset", choices=PRESETS, help="start from a named preset")
    p.add_argument("--seed", type=int, help="seed for the rain simulator and training")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emresformer", description="EM low-rank attention deraining: data, training, inference, scoring.",
                     epilog="Dotted configuration overrides (--model.em.iterations 3) follow the subcommand.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a paired rainy/clean dataset")
    _add_common(p)
    p.add_argument("--clean", type=Path, help="directory of clean images (default: procedural scenes)")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64, help="procedural scene size in pixels")

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("derain", help="run a checkpoint over images")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="image file or directory")

    p = sub.add_parser("eval", help="score derained images against ground truth")
    _add_common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)

    p = sub.add_parser("ablate", help="desk-scale sweeps over EM iterations and LMRB cascades")
    _add_common(p)
    p.add_argument("--manifest", type=Path, help="dataset manifest (default: synthesise the desk set)")
    p.add_argument("--seeds", type=int, default=3, help="training seeds per setting")
    p.add_argument("--t-values", type=_int_list, default=None, help="EM iteration counts to sweep (default 1,2,3,4)")
    p.add_argument("--k-values", type=_int_list, default=None, help="LMRB cascade counts to sweep (default 1,2,3,4)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _add_common(p, out_required=False)
    p.add_argument("--no-model", action="store_true", help="skip the full-model case")
    return parser


def split_overrides(parser, extras: list) -> list:
    known = set(leaf_paths())
    out = []
    i = 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--"):
            parser.error(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if key not in known:
            parser.error(f"unrecognized arguments: {tok}")
        if not eq:
            if i + 1 >= len(extras):
                parser.error(f"argument {tok}: expected a value")
            value = extras[i + 1]
            i += 1
        out.append((key, value))
        i += 1
    return out


def resolve_config(args, overrides: list, default_preset: str | None = None) -> RunConfig:
    seeds = []
    if args.seed is not None:
        seeds = [("train.seed", str(args.seed)), ("rain.seed", str(args.seed))]
    return load_config(args.config, args.preset or default_preset, seeds + overrides)


# -- subcommands -----------------------------------------------------------
def cmd_synth(args, cfg: RunConfig) -> int:
    from .rain import synth_dataset

    manifest = synth_dataset(args.out, cfg.rain, args.count, args.size, args.clean)
    print(f"wrote {len(manifest['pairs'])} pairs to {args.out / 'manifest.json'}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .plotting import loss_curve
    from .train import train

    args.out.mkdir(parents=True, exist_ok=True)
    cfg.save(args.out / "config.json")

    def progress(row):
        print(f"epoch {row['epoch']:4d}  loss {row['ssim_loss']:.5f}  val psnr_y {row['val_psnr_y']:.3f}  "
              f"ssim_y {row['val_ssim_y']:.4f}", flush=True)

    res = train(cfg.model, cfg.train, args.manifest, args.out, progress=progress)
    if res.rows:
        loss_curve(res.rows, args.out / "loss.png")
    print(f"train loss {res.initial_train_loss:.5f} -> {res.final_train_loss:.5f}; "
          f"val psnr_y {res.val['baseline_psnr_y']:.3f} (rainy) -> {res.val['psnr_y']:.3f}")
    return 0


def _pad8(a: np.ndarray) -> tuple[np.ndarray, tuple]:
    h, w = a.shape[1:]
    ph, pw = (-h) % 8, (-w) % 8
    if ph == 0 and pw == 0:
        return a, (h, w)
    mode = "reflect" if h > ph and w > pw else "edge"
    return np.pad(a, ((0, 0), (0, ph), (0, pw)), mode=mode), (h, w)


def derain_image(params, img: np.ndarray) -> np.ndarray:
    """Derain one 3×H×W image of any size (reflect-padded to a multiple of 8)."""
    from .train import infer

    padded, (h, w) = _pad8(img)
    return infer(params, padded[None])[0, :, :h, :w].astype(np.float64)


def _inputs(path: Path) -> list:
    from .imageio import list_images

    if path.is_dir():
        return list_images(path)
    if path.is_file():
        return [path]
    raise ShapeError(f"input {path} is neither a file nor a directory")


def cmd_derain(args, cfg: RunConfig) -> int:
    from .checkpoint import load_checkpoint
    from .imageio import read_image, write_image

    _, params = load_checkpoint(args.checkpoint)
    files = _inputs(args.input)
    args.out.mkdir(parents=True, exist_ok=True)

    def one(src: Path) -> Path:
        dst = args.out / (src.stem + ".ppm")
        write_image(dst, derain_image(params, read_image(src)))
        return dst

    with ThreadPoolExecutor(max_workers=workers()) as pool:
        written = list(pool.map(one, files))
    print(f"derained {len(written)} images into {args.out}")
    return 0


def eval_dirs(pred: Path, gt: Path, params) -> list:
    from .imageio import list_images, read_image
    from .metrics import evaluate_pair

    preds = {p.stem: p for p in list_images(pred)}
    gts = {p.stem: p for p in list_images(gt)}
    names = sorted(set(preds) & set(gts))
    if not names:
        raise ShapeError(f"no matching image names between {pred} and {gt}")

    def one(name):
        row = evaluate_pair(read_image(preds[name]), read_image(gts[name]), params)
        return {"name": name, **row}

    with ThreadPoolExecutor(max_workers=workers()) as pool:
        return list(pool.map(one, names))


def summarise(rows: list) -> list:
    out = []
    for key in EVAL_FIELDS[1:]:
        vals = [r[key] for r in rows]
        mean = math.inf if any(math.isinf(v) for v in vals) else statistics.fmean(vals)
        finite = [v for v in vals if math.isfinite(v)]
        std = statistics.pstdev(finite) if len(finite) == len(vals) else math.nan
        out.append({"metric": key, "mean": mean, "std": std, "count": len(vals)})
    return out


def cmd_eval(args, cfg: RunConfig) -> int:
    from .plotting import metric_histogram

    rows = eval_dirs(args.pred, args.gt, cfg.metrics)
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "eval.csv", EVAL_FIELDS, rows)
    summary = summarise(rows)
    write_csv(args.out / "summary.csv", ("metric", "mean", "std", "count"), summary)
    metric_histogram(rows, args.out / "psnr_y.png")
    for s in summary:
        print(f"{s['metric']:9s} {fmt(s['mean'])}")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .ablation import FIELDS, K_VALUES, T_VALUES, run_ablation
    from .plotting import ablation_bars
    from .rain import load_pairs, synth_dataset

    args.out.mkdir(parents=True, exist_ok=True)
    manifest = args.manifest
    if manifest is None:
        synth_dataset(args.out / "data", cfg.rain)
        manifest = args.out / "data" / "manifest.json"
    pairs = load_pairs(manifest)
    seeds = [cfg.train.seed + i for i in range(args.seeds)]

    def progress(t, k, seed, val):
        print(f"t={t} k={k} seed={seed}: val psnr_y {val['psnr_y']:.3f}", flush=True)

    rows = run_ablation(cfg, pairs, seeds, t_values=args.t_values or T_VALUES,
                        k_values=args.k_values or K_VALUES, progress=progress)
    for r in rows:
        r["seed_psnr_y"] = ";".join(fmt(v) for v in r["seed_psnr_y"])
    write_csv(args.out / "ablation.csv", FIELDS, rows)
    ablation_bars(rows, args.out / "ablation.png")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck_suite import run_suite

    seed = 0 if args.seed is None else args.seed
    results = run_suite(seed=seed, include_model=not args.no_model)
    bad = 0
    for name, rep in results:
        print(f"{name:40s} {rep}")
        bad += not rep.passed
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rows = [{"case": n, "max_rel_error": r.max_rel_error, "elements": r.rel_error.size, "passed": r.passed}
                for n, r in results]
        write_csv(args.out / "gradcheck.csv", ("case", "max_rel_error", "elements", "passed"), rows)
    print(f"{len(results) - bad}/{len(results)} cases passed")
    return 1 if bad else 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "derain": cmd_derain, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}
DEFAULT_PRESET = {"ablate": "desk"}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        overrides = split_overrides(parser, extras)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args, overrides, DEFAULT_PRESET.get(args.command))
        return COMMANDS[args.command](args, cfg)
    except EmresError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
