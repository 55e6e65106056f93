"""Minimal Netpbm (PGM/PPM) reader and writer: P2, P3, P5 and P6."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}


def _header_tokens(buf: bytes, count: int):
    """Return ``count`` whitespace-separated header tokens and the offset after them."""
    tokens, i, n = [], 0, len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise DataError("unexpected end of PNM header")
        tokens.append(buf[start:i])
    return tokens, i + 1  # exactly one whitespace byte ends the header


def decode_pnm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode to float64 ``[channels, h, w]`` in [0, 1]."""
    magic = buf[:2]
    if magic not in _CHANNELS:
        raise DataError(f"{name}: not a PGM/PPM file (magic {magic!r})")
    try:
        (_, w, h, maxval), offset = _header_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{name}: malformed header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise DataError(f"{name}: bad dimensions {w}x{h} or maxval {maxval}")
    ch = _CHANNELS[magic]
    count = w * h * ch
    if magic in (b"P2", b"P3"):
        try:
            values = np.array(buf[offset:].split()[:count], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{name}: non-integer sample") from exc
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        values = np.frombuffer(buf, dtype=dtype, count=min(count, (len(buf) - offset) // dtype.itemsize),
                               offset=offset)
    if values.size != count:
        raise DataError(f"{name}: expected {count} samples, found {values.size}")
    img = values.reshape(h, w, ch).transpose(2, 0, 1).astype(np.float64) / maxval
    return np.clip(img, 0.0, 1.0)


def read_pnm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    return decode_pnm(buf, str(path))


def write_pnm(path, image: np.ndarray, binary: bool = True) -> None:
    """Write ``[h, w]`` / ``[1, h, w]`` as PGM or ``[3, h, w]`` as PPM.

    Float input is taken to lie in [0, 1]; uint8 input is written verbatim.
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"cannot write image of shape {np.asarray(image).shape} as PNM")
    if img.dtype != np.uint8:
        img = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    ch, h, w = img.shape
    magic = {(1, True): "P5", (3, True): "P6", (1, False): "P2", (3, False): "P3"}[(ch, binary)]
    pixels = img.transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(pixels).tobytes())
        else:
            for row in pixels.reshape(h, w * ch):
                fh.write((" ".join(map(str, row)) + "\n").encode("ascii"))


def write_pgm(path, pixels: np.ndarray) -> None:
    write_pnm(path, np.asarray(pixels, dtype=np.uint8))
