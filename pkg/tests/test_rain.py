import json
import time

import numpy as np
import pytest

from emresformer.errors import ConfigError, ImageFormatError, ShapeError
from emresformer.imageio import read_image, write_image
from emresformer.metrics import psnr
from emresformer.rain import (
    Image,
    StreakParams,
    compose_rainy,
    derive_seed,
    make_dataset,
    procedural_scene,
    read_manifest,
    regenerate,
    splitmix64,
    synth_dataset,
    synth_streaks,
)


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert derive_seed(0, 1) == 0x6E789E6AA1B965F4
    assert derive_seed(0, 2) == 0x06C45D188009454F


def test_streak_params_invariants():
    with pytest.raises(ConfigError):
        StreakParams(intensity=0.8, intensity_jitter=0.3)
    with pytest.raises(ConfigError):
        StreakParams(density=-1.0)


def test_zero_density_gives_empty_layer():
    layer = synth_streaks(16, 20, StreakParams(density=0.0))
    assert layer.role == "streak" and layer.shape == (3, 16, 20)
    assert not layer.pixels.any()


def test_streaks_are_deterministic_grey_and_in_range():
    a = synth_streaks(32, 32, StreakParams(seed=9))
    b = synth_streaks(32, 32, StreakParams(seed=9))
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0 and a.pixels.any()
    np.testing.assert_array_equal(a.pixels[0], a.pixels[2])


def test_mean_intensity_grows_with_density():
    means = []
    for density in (1.0, 5.0, 20.0):
        means.append(np.mean([synth_streaks(48, 48, StreakParams(density=density, seed=s)).pixels.mean()
                              for s in range(10)]))
    assert means[0] < means[1] < means[2]


def test_compose_rainy():
    clean = procedural_scene(16, 16, 0)
    zero = Image(np.zeros((3, 16, 16)), role="streak")
    assert compose_rainy(clean, zero).pixels.tobytes() == clean.pixels.tobytes()
    sat = compose_rainy(np.full((3, 2, 2), 0.9), np.full((3, 2, 2), 0.3))
    np.testing.assert_array_equal(sat.pixels, 1.0)
    with pytest.raises(ShapeError):
        compose_rainy(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))


def test_psnr_falls_with_density():
    clean = procedural_scene(48, 48, 4)
    vals = [psnr(compose_rainy(clean, synth_streaks(48, 48, StreakParams(density=d, seed=2))), clean)
            for d in (1.0, 5.0, 20.0)]
    assert vals[0] > vals[1] > vals[2]


def test_image_invariants():
    with pytest.raises(ValueError):
        Image(np.full((3, 2, 2), 1.5))
    with pytest.raises(ShapeError):
        Image(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Image(np.zeros((3, 2, 2)), role="weird")


def test_empty_dataset(tmp_path):
    out = tmp_path / "out"
    manifest = make_dataset(tmp_path, out, StreakParams(), 0)
    assert manifest["pairs"] == []
    assert not out.exists()


def test_dataset_layout_and_manifest(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    write_image(src / "a.ppm", procedural_scene(20, 27, 1).pixels)
    manifest = make_dataset(src, tmp_path / "ds", StreakParams(seed=5), 3)
    on_disk = read_manifest(tmp_path / "ds" / "manifest.json")
    assert on_disk == json.loads(json.dumps(manifest))
    assert set(on_disk) == {"pairs", "params", "root_seed", "created_at"}
    assert [p["seed"] for p in on_disk["pairs"]] == [derive_seed(5, i) for i in range(3)]
    img = read_image(tmp_path / "ds" / on_disk["pairs"][0]["rainy"])
    assert img.shape == (3, 16, 24)


def test_regenerate_is_bitwise_identical(tmp_path):
    first = synth_dataset(tmp_path / "a", StreakParams(seed=21), count=4, size=16)
    regenerate(first, tmp_path / "a" / "sources", tmp_path / "b")
    for name in ("manifest.json", "rainy/0002.ppm", "clean/0003.ppm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_clean_dir(tmp_path):
    with pytest.raises(ImageFormatError):
        make_dataset(tmp_path / "nope", tmp_path / "out", StreakParams(), 2)
    (tmp_path / "empty").mkdir()
    with pytest.raises(ImageFormatError):
        make_dataset(tmp_path / "empty", tmp_path / "out", StreakParams(), 2)


def test_desk_dataset_builds_quickly(tmp_path):
    start = time.perf_counter()
    synth_dataset(tmp_path, StreakParams(seed=1), count=20, size=64)
    assert time.perf_counter() - start < 10.0
