import csv
import math

import numpy as np
import pytest

from emresformer.cli import fmt, run_cli, summarise
from emresformer.imageio import read_image, write_image
from emresformer.metrics import SsimParams, evaluate_pair

TINY = ["--preset", "desk", "--model.depths", "1,1,0,0", "--model.refinement_blocks", "0",
        "--train.patch", "16", "--train.batch_size", "2"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert run_cli(["synth", "--out", str(out), "--seed", "4", "--count", "5", "--size", "16"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir):
    out = synth_dir.parent / "run"
    argv = ["train", "--manifest", str(synth_dir / "manifest.json"), "--out", str(out), "--train.epochs", "2"] + TINY
    assert run_cli(argv) == 0
    return out


def test_synth_is_deterministic(synth_dir, tmp_path):
    other = tmp_path / "again"
    assert run_cli(["synth", "--out", str(other), "--seed", "4", "--count", "5", "--size", "16"]) == 0
    for name in ("manifest.json", "rainy/0000.ppm", "clean/0004.ppm"):
        assert (synth_dir / name).read_bytes() == (other / name).read_bytes()


def test_train_outputs(trained):
    for name in ("config.json", "log.csv", "best.emrf", "last.emrf", "loss.png"):
        assert (trained / name).exists(), name
    assert len(read_csv(trained / "log.csv")) == 2


def test_identity_checkpoint_derains_to_input(synth_dir, tmp_path):
    run = tmp_path / "zero"
    assert run_cli(["train", "--manifest", str(synth_dir / "manifest.json"), "--out", str(run),
                    "--train.epochs", "0"] + TINY) == 0
    assert run_cli(["derain", "--checkpoint", str(run / "last.emrf"), "--input", str(synth_dir / "rainy"),
                    "--out", str(tmp_path / "d")]) == 0
    for src in sorted((synth_dir / "rainy").iterdir()):
        assert (tmp_path / "d" / src.name).read_bytes() == src.read_bytes()


def test_derain_odd_sized_single_file(trained, tmp_path):
    img = np.random.default_rng(0).random((3, 13, 10))
    write_image(tmp_path / "odd.ppm", img)
    assert run_cli(["derain", "--checkpoint", str(trained / "last.emrf"), "--input", str(tmp_path / "odd.ppm"),
                    "--out", str(tmp_path / "o")]) == 0
    assert read_image(tmp_path / "o" / "odd.ppm").shape == (3, 13, 10)


def test_eval_matches_library(synth_dir, tmp_path):
    assert run_cli(["eval", "--pred", str(synth_dir / "rainy"), "--gt", str(synth_dir / "clean"),
                    "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert [r["name"] for r in rows] == [f"{i:04d}" for i in range(5)]
    for r in rows:
        lib = evaluate_pair(read_image(synth_dir / "rainy" / f"{r['name']}.ppm"),
                            read_image(synth_dir / "clean" / f"{r['name']}.ppm"), SsimParams())
        for key, value in lib.items():
            assert float(r[key]) == value
    summary = {r["metric"]: r for r in read_csv(tmp_path / "summary.csv")}
    assert float(summary["psnr_y"]["mean"]) == pytest.approx(np.mean([float(r["psnr_y"]) for r in rows]))
    assert (tmp_path / "psnr_y.png").exists()


def test_eval_identical_dirs_gives_inf(synth_dir, tmp_path):
    assert run_cli(["eval", "--pred", str(synth_dir / "clean"), "--gt", str(synth_dir / "clean"),
                    "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert all(r["psnr_y"] == "inf" and float(r["ssim_y"]) == 1.0 for r in rows)


def test_summarise_and_fmt():
    rows = [{"psnr_y": 10.0, "ssim_y": 0.5, "mae": 0.1, "psnr_rgb": math.inf, "ssim_rgb": 1.0},
            {"psnr_y": 20.0, "ssim_y": 0.7, "mae": 0.3, "psnr_rgb": 30.0, "ssim_rgb": 1.0}]
    s = {r["metric"]: r for r in summarise(rows)}
    assert s["psnr_y"]["mean"] == 15.0 and s["psnr_y"]["std"] == 5.0
    assert math.isinf(s["psnr_rgb"]["mean"]) and math.isnan(s["psnr_rgb"]["std"])
    assert fmt(math.inf) == "inf" and fmt(0.1) == "0.1" and fmt(3) == "3"


def test_gradcheck_subcommand(tmp_path, capsys):
    assert run_cli(["gradcheck", "--no-model", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "gradcheck.csv")
    assert rows and all(r["passed"] == "True" for r in rows)
    assert "cases passed" in capsys.readouterr().out


def test_ablate_subcommand(synth_dir, tmp_path):
    argv = ["ablate", "--manifest", str(synth_dir / "manifest.json"), "--out", str(tmp_path), "--seeds", "1",
            "--t-values", "1,2", "--k-values", "1,2",
            "--train.epochs", "1"] + TINY
    assert run_cli(argv) == 0
    rows = read_csv(tmp_path / "ablation.csv")
    assert [(r["knob"], r["value"]) for r in rows] == [("t", "1"), ("t", "2"), ("k", "1"), ("k", "2")]
    assert (tmp_path / "ablation.png").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["synth"],
    ["synth", "--out", "x", "--model.nope", "1"],
    ["synth", "--out", "x", "--model.em.iterations"],
    ["synth", "--out", "x", "stray"],
    ["ablate", "--out", "x", "--t-values", "0,a"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run_cli(argv) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["train", "--manifest", "/nonexistent/manifest.json", "--out", "{tmp}"],
    ["derain", "--checkpoint", "/nonexistent.emrf", "--input", "{tmp}", "--out", "{tmp}"],
    ["synth", "--out", "{tmp}", "--model.em.iterations", "zero"],
    ["eval", "--pred", "{tmp}", "--gt", "{tmp}", "--out", "{tmp}"],
])
def test_runtime_errors_exit_1(argv, tmp_path, capsys):
    assert run_cli([a.replace("{tmp}", str(tmp_path)) for a in argv]) == 1
    assert "error" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert run_cli(["--help"]) == 0
    assert "synth" in capsys.readouterr().out
