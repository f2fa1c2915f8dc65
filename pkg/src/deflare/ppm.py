"""Binary P6 PPM reader/writer.

Only 8-bit, maxval-255 files are supported; that keeps round trips
bit-exact and the format trivially diffable.  Float images in [0, 1]
quantize with round-half-away-from-zero, which the metric regression
tests rely on.
"""

from __future__ import annotations

import numpy as np

from .errors import PpmError, ShapeError


def write_ppm_u8(path: str, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ShapeError(f"write_ppm_u8 expects uint8 (H, W, 3), got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] float to uint8, round half away from zero."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path: str, img: np.ndarray) -> None:
    write_ppm_u8(path, quantize(img))


def _tokens(data: bytes):
    """Yield header tokens, skipping whitespace and '#' comments."""
    i = 0
    n = len(data)
    while True:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i] not in (0x0A, 0x0D):
                i += 1
            continue
        if i >= n:
            raise PpmError("unexpected end of PPM header")
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        yield data[start:i], i


def read_ppm_u8(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        if magic != b"P6":
            raise PpmError(f"{path}: not a P6 file (magic {magic!r})")
        (wtok, _), (htok, _), (mtok, end) = next(toks), next(toks), next(toks)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except (ValueError, StopIteration) as exc:
        raise PpmError(f"{path}: malformed PPM header") from exc
    if w <= 0 or h <= 0:
        raise PpmError(f"{path}: bad dimensions {w} x {h}")
    if maxval != 255:
        raise PpmError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[end + 1:]
    need = w * h * 3
    if len(body) < need:
        raise PpmError(f"{path}: pixel data truncated ({len(body)} of {need} bytes)")
    return np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path: str) -> np.ndarray:
    """Read as float64 in [0, 1]."""
    return read_ppm_u8(path).astype(np.float64) / 255.0
