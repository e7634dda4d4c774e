"""The PTRS raster container and binary PGM import/export."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PTRS"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBHIII")  # magic, version, dtype, reserved, C, H, W
HEADER_SIZE = _HEADER.size  # 20


class RasterFormatError(ValueError):
    """Base class for malformed raster/PGM files."""


class BadMagicError(RasterFormatError):
    pass


class UnsupportedVersionError(RasterFormatError):
    pass


class UnsupportedDtypeError(RasterFormatError):
    pass


class TruncatedFileError(RasterFormatError):
    pass


@dataclass(frozen=True, eq=False)
class RasterImage:
    """A band-major float32 image of shape (C, H, W) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"raster data must be (C, H, W), got shape {arr.shape}")
        if arr.size and not (np.isfinite(arr).all() and arr.min() >= 0.0 and arr.max() <= 1.0):
            raise ValueError("raster values must be finite and within [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        return isinstance(other, RasterImage) and self.data.shape == other.data.shape and (
            self.data.tobytes() == other.data.tobytes()
        )


def encode_raster(img: RasterImage) -> bytes:
    C, H, W = img.data.shape
    return _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, C, H, W) + img.data.astype("<f4").tobytes()


def decode_raster(buf: bytes, source: str = "<bytes>") -> RasterImage:
    if len(buf) < HEADER_SIZE:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise BadMagicError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
        raise TruncatedFileError(f"{source}: expected at least {HEADER_SIZE} header bytes, got {len(buf)}")
    magic, version, dtype, _reserved, C, H, W = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported version {version}, expected {VERSION}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"{source}: unsupported dtype code {dtype}, only 0 (f32 LE) is known")
    expected = HEADER_SIZE + 4 * C * H * W
    if len(buf) < expected:
        raise TruncatedFileError(f"{source}: expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise RasterFormatError(f"{source}: {len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=C * H * W, offset=HEADER_SIZE).reshape(C, H, W)
    return RasterImage(data.astype(np.float32))


def save_raster(img: RasterImage | np.ndarray, path) -> None:
    if not isinstance(img, RasterImage):
        img = RasterImage(img)
    Path(path).write_bytes(encode_raster(img))


def load_raster(path) -> RasterImage:
    return decode_raster(Path(path).read_bytes(), str(path))


# -- PGM ------------------------------------------------------------------------------


def _pgm_tokens(buf: bytes, count: int, source: str) -> tuple[list[bytes], int]:
    # header tokens are separated by whitespace; '#' starts a comment running to end of line
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
            raise TruncatedFileError(f"{source}: PGM header ends early")
        tokens.append(buf[start:i])
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    """One P5 file as float32 (H, W) scaled to [0, 1] by its maxval."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise BadMagicError(f"{path}: unsupported PGM magic {buf[:2]!r}, only binary P5 is read")
    (magic, w, h, maxval), offset = _pgm_tokens(buf, 4, str(path))
    try:
        W, H, M = int(w), int(h), int(maxval)
    except ValueError:
        raise RasterFormatError(f"{path}: malformed PGM header") from None
    if not 0 < M < 65536:
        raise RasterFormatError(f"{path}: maxval {M} out of range")
    dtype = np.dtype("u1") if M < 256 else np.dtype(">u2")
    expected = offset + H * W * dtype.itemsize
    if len(buf) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(buf)}")
    pix = np.frombuffer(buf, dtype=dtype, count=H * W, offset=offset).reshape(H, W)
    if pix.max(initial=0) > M:
        raise RasterFormatError(f"{path}: sample exceeds maxval {M}")
    return (pix.astype(np.float64) / M).astype(np.float32)


def import_pgm(paths) -> RasterImage:
    """Stack one single-band P5 file per band, in argument order."""
    paths = list(paths)
    if not paths:
        raise ValueError("import_pgm needs at least one file")
    bands = [read_pgm(p) for p in paths]
    shapes = {b.shape for b in bands}
    if len(shapes) != 1:
        raise RasterFormatError(f"band dimensions differ: {[b.shape for b in bands]}")
    return RasterImage(np.stack(bands))


def to_uint8(band: np.ndarray) -> np.ndarray:
    """Scale [0, 1] to 0..255, rounding half away from zero."""
    v = np.clip(np.asarray(band, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def write_pgm(band: np.ndarray, path) -> None:
    band = np.asarray(band)
    if band.ndim != 2:
        raise ValueError(f"write_pgm takes a single 2-D band, got {band.shape}")
    H, W = band.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + to_uint8(band).tobytes())


def export_pgm(img: RasterImage, stem) -> list[Path]:
    """Write every band to ``<stem>_b<k>.pgm``; returns the paths written."""
    stem = Path(stem)
    out = []
    for k, band in enumerate(img.data):
        p = stem.with_name(f"{stem.name}_b{k}.pgm")
        write_pgm(band, p)
        out.append(p)
    return out
