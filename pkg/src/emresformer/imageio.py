"""Binary PPM/PGM image I/O (maxval 255), plus optional PNG reading.

Pixels are mapped to [0, 1] floats as ``v / 255`` and written back as
``round(255 * clip(x, 0, 1))``, so an 8-bit payload survives a
read/write round trip bit for bit.  Arrays are channel-first (3×H×W).
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import ImageFormatError

IMAGE_SUFFIXES = (".ppm", ".pgm", ".png")


def _read_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header", offset=start, path=path)
    return buf[start:pos], pos


def decode_pnm(buf: bytes, path=None) -> np.ndarray:
    """Decode P6 (RGB) or P5 (grey, replicated to 3 channels) bytes."""
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P6 or P5", offset=0, path=path)
    pos = 2
    fields, starts = [], []
    for _ in range(3):
        tok, pos = _read_token(buf, pos, path)
        starts.append(pos - len(tok))
        if not tok.isdigit():
            raise ImageFormatError(f"non-numeric header field {tok!r}", offset=starts[-1], path=path)
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid extent {width}x{height}", offset=starts[0 if width <= 0 else 1], path=path)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 255 is handled", offset=starts[2], path=path)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header", offset=pos, path=path)
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload: expected {need} bytes, found {len(payload)}",
                               offset=pos + len(payload), path=path)
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        pix = np.repeat(pix, 3, axis=2)
    return pix.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    a = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    return np.round(255.0 * np.clip(a, 0.0, 1.0)).astype(np.uint8)


def encode_ppm(img) -> bytes:
    a = to_uint8(img)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ImageFormatError(f"cannot encode array of shape {a.shape}; expected C×H×W with C in (1, 3)")
    if a.shape[0] == 1:
        a = np.repeat(a, 3, axis=0)
    _, h, w = a.shape
    return b"P6\n%d %d\n255\n" % (w, h) + a.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    """Read an image file into a 3×H×W float array in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image: {exc.strerror}", path=path) from exc
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    return decode_pnm(buf, path)


def _read_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # optional dependency
        raise ImageFormatError("PNG input needs Pillow (pip install emresformer[png])", path=path) from exc
    with PILImage.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return a.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path, img) -> None:
    """Write a 3×H×W (or 1×H×W) array as binary P6, atomically."""
    path = Path(path)
    data = encode_ppm(img)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise ImageFormatError(f"cannot write image: {exc.strerror}", path=path) from exc


def list_images(directory) -> list:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
