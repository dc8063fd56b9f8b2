"""Arrays, seeded random streams, and file I/O.

Tensors are plain float64 numpy arrays; :func:`as_tensor` is the single
validation gate (finite values, positive dims) and returns a read-only copy.

Random streams come from a Philox counter-based generator keyed by
``(master_seed, stream_path)`` through :class:`numpy.random.SeedSequence`
spawn keys, so every path names an independent stream regardless of the order
in which streams are created.

FT64 layout::

    b"FT64" | uint8 ndim | ndim x uint32 LE dims | prod(dims) x float64 LE
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fissioncv.errors import DimensionError, FormatError, InvalidParameterError

FT64_MAGIC = b"FT64"
_MAX_ELEMENTS = 2**40


def as_tensor(data) -> np.ndarray:
    """Validate ``data`` as a finite float64 tensor with positive dims."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d <= 0 for d in arr.shape):
        raise DimensionError(f"tensor dims must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SeedSpec:
    """A named random stream: ``master_seed`` plus a path of child indices."""

    master_seed: int
    stream_path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidParameterError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "stream_path", tuple(int(i) for i in self.stream_path))
        if any(i < 0 for i in self.stream_path):
            raise InvalidParameterError("stream_path indices must be nonnegative")

    def child(self, *indices: int) -> SeedSpec:
        return SeedSpec(self.master_seed, self.stream_path + tuple(indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.stream_path)
        return np.random.Generator(np.random.Philox(seq))


def resolve_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(int(seed))


def gaussian_noise(shape, sigma: float, seed) -> np.ndarray:
    """I.i.d. ``N(0, sigma^2)`` entries of the given shape, deterministic in ``seed``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    shape = tuple(int(d) for d in np.atleast_1d(shape))
    out = sigma * resolve_seed(seed).generator().standard_normal(shape)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# FT64
# ---------------------------------------------------------------------------

def encode_tensor(t) -> bytes:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise DimensionError("FT64 supports at most 255 dims")
    if any(d >= 2**32 for d in arr.shape):
        raise DimensionError("FT64 dims must fit in uint32")
    header = FT64_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 5:
        raise FormatError("truncated FT64 header", offset=len(buf))
    if buf[:4] != FT64_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {FT64_MAGIC!r}", offset=0)
    ndim = buf[4]
    dims_end = 5 + 4 * ndim
    if len(buf) < dims_end:
        raise FormatError(f"truncated dims: need {4 * ndim} bytes", offset=len(buf))
    dims = struct.unpack(f"<{ndim}I", buf[5:dims_end])
    count = math.prod(dims)
    if any(d == 0 for d in dims):
        raise FormatError(f"zero-length dim in {dims}", offset=5)
    if count > _MAX_ELEMENTS:
        raise FormatError(f"dims {dims} overflow the element limit", offset=5)
    expected = dims_end + 8 * count
    if len(buf) < expected:
        got = (len(buf) - dims_end) // 8
        raise FormatError(f"truncated payload: header declares {count} values, found {got}", offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", offset=expected)
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=dims_end).astype(np.float64)
    return data.reshape(dims)


def write_tensor(path, t) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path) -> np.ndarray:
    arr = decode_tensor(Path(path).read_bytes())
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# PGM (8-bit grayscale, P5 binary / P2 ASCII)
# ---------------------------------------------------------------------------

def _pgm_tokens(buf: bytes, start: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated PGM header", offset=pos)
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        tok = buf[pos:end]
        if not tok.isdigit():
            raise FormatError(f"bad PGM header token {tok!r}", offset=pos)
        tokens.append((int(tok), pos))
        pos = end
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P2"):
        raise FormatError(f"unsupported image type {magic!r}; only grayscale P5/P2", offset=0)
    tokens, pos = _pgm_tokens(buf, 2, 3)
    (width, _), (height, _), (maxval, mpos) = tokens
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255", offset=mpos)
    if width == 0 or height == 0:
        raise FormatError("zero image dimension", offset=2)
    n = width * height
    if magic == b"P5":
        start = pos + 1
        payload = buf[start:start + n]
        if len(payload) < n:
            raise FormatError(f"truncated P5 payload: need {n} bytes, found {len(payload)}", offset=len(buf))
        pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        values = buf[pos:].split()
        if len(values) < n:
            raise FormatError(f"truncated P2 payload: need {n} values, found {len(values)}", offset=len(buf))
        try:
            pixels = np.array([int(v) for v in values[:n]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"non-integer P2 pixel: {exc}", offset=pos) from None
        if pixels.max() > 255 or pixels.min() < 0:
            raise FormatError("P2 pixel outside 0..255", offset=pos)
    img = (pixels / 255.0).reshape(height, width)
    img.flags.writeable = False
    return img


def quantize_u8(x) -> np.ndarray:
    """round(clamp(x, 0, 1) * 255) with halves rounded up."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, t, *, ascii=False) -> None:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D tensor, got shape {arr.shape}")
    h, w = arr.shape
    pixels = quantize_u8(arr)
    if ascii:
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in pixels)
        Path(path).write_bytes(f"P2\n{w} {h}\n255\n{rows}\n".encode("ascii"))
    else:
        Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def load_measurement(path) -> np.ndarray:
    """Load an FT64 or PGM file, dispatching on the magic bytes."""
    head = Path(path).read_bytes()[:4]
    if head == FT64_MAGIC:
        return read_tensor(path)
    if head[:2] in (b"P5", b"P2"):
        return read_pgm(path)
    raise FormatError(f"unrecognized file type {head!r} for {path}", offset=0)
