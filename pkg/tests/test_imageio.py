import numpy as np
import pytest

from emresformer.errors import ImageFormatError
from emresformer.imageio import decode_pnm, encode_ppm, read_image, write_image


def test_round_trip_is_bit_exact(tmp_path):
    payload = np.random.default_rng(0).integers(0, 256, size=(3, 7, 5), dtype=np.uint8)
    write_image(tmp_path / "a.ppm", payload / 255.0)
    back = read_image(tmp_path / "a.ppm")
    assert np.round(back * 255).astype(np.uint8).tobytes() == payload.tobytes()
    write_image(tmp_path / "b.ppm", back)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_single_white_pixel():
    img = decode_pnm(b"P6\n1 1\n255\n\xff\xff\xff")
    assert img.shape == (3, 1, 1)
    np.testing.assert_array_equal(img.ravel(), [1.0, 1.0, 1.0])


def test_grey_replicated_and_comments():
    img = decode_pnm(b"P5 # comment\n2 1\n255\n\x00\x80")
    np.testing.assert_array_equal(img[:, 0, 1], [128 / 255] * 3)


def test_write_clamps_and_rounds():
    data = encode_ppm(np.array([-0.2, 0.5, 1.7]).reshape(3, 1, 1))
    assert data.endswith(bytes([0, 128, 255]))


@pytest.mark.parametrize("buf, offset", [
    (b"P3\n1 1\n255\n", 0),
    (b"P6\n1 1\n65535\n\x00\x00", 7),
    (b"P6\n0 1\n255\n", 3),
    (b"P6\n2 2\n255\n\x00\x00\x00", 14),
    (b"P6\n1", None),
    (b"P6\nx 1\n255\n", 3),
])
def test_malformed_headers_report_offsets(buf, offset):
    with pytest.raises(ImageFormatError) as info:
        decode_pnm(buf)
    if offset is not None:
        assert info.value.offset == offset


def test_missing_file(tmp_path):
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "none.ppm")


def test_png_input_via_pillow(tmp_path):
    PIL = pytest.importorskip("PIL.Image")
    a = np.random.default_rng(1).integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    PIL.fromarray(a).save(tmp_path / "x.png")
    np.testing.assert_array_equal(read_image(tmp_path / "x.png"), a.transpose(2, 0, 1) / 255.0)
