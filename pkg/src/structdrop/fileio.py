"""Bit-exact tensor file I/O and binary PPM/PGM image I/O.

Tensor files: magic ``FMAP``, u32-LE rank, rank u32-LE dims, then the payload
as little-endian IEEE-754 float32, row-major. In-memory maps are float64, so
writing narrows to 32 bits; a write/read round trip of float32-representable
values is bit-exact.

Images: binary PGM (P5, one channel) and PPM (P6, three channels), maxval 255
only. Pixels load as floats in [0, 1] (value / 255), batch dim 1.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import FeatureMap

MAGIC = b"FMAP"

# refuse payloads over 2**31 elements before allocating
_MAX_ELEMENTS = 1 << 31


class TensorFileError(ValueError):
    pass


class BadMagicError(TensorFileError):
    pass


class TruncatedFileError(TensorFileError):
    pass


class DimOverflowError(TensorFileError):
    pass


class ImageFormatError(ValueError):
    pass


def write_tensor(a: FeatureMap, path) -> None:
    dims = a.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(a.data.astype("<f4").tobytes())


def read_tensor(path) -> FeatureMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise TruncatedFileError("file ends inside the rank field")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank != 4:
        raise DimOverflowError(f"rank {rank} not supported, feature maps are 4-D")
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise TruncatedFileError("file ends inside the dims header")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise DimOverflowError(f"dims {dims} give {count} elements, over the limit")
    payload = blob[header_end:]
    if len(payload) < 4 * count:
        raise TruncatedFileError(
            f"payload holds {len(payload) // 4} of {count} elements"
        )
    if len(payload) > 4 * count:
        raise TensorFileError(f"{len(payload) - 4 * count} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    return FeatureMap(data)


def _next_token(blob, pos):
    # skip whitespace and '#' comments, return (token, next position)
    n = len(blob)
    while pos < n:
        ch = blob[pos:pos + 1]
        if ch == b"#":
            while pos < n and blob[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return blob[start:pos], pos


def read_image_ppm(path) -> FeatureMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, pos = _next_token(blob, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"unsupported magic {magic!r}, expected P5 or P6")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(blob, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} not supported, expected 255")
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad image size {width}x{height}")
    pos += 1  # single whitespace byte separates header from pixels
    expected = width * height * channels
    raw = np.frombuffer(blob, dtype=np.uint8, count=-1, offset=pos)
    if raw.size < expected:
        raise ImageFormatError(f"pixel data holds {raw.size} of {expected} bytes")
    raw = raw[:expected].reshape(height, width, channels)
    planes = np.moveaxis(raw, 2, 0).astype(np.float64) / 255.0
    return FeatureMap(planes[np.newaxis])


def write_image_ppm(a: FeatureMap, path) -> None:
    batch, channels, height, width = a.dims
    if batch != 1 or channels not in (1, 3):
        raise ImageFormatError(
            f"image maps need batch=1 and 1 or 3 channels, got dims {a.dims}"
        )
    levels = np.rint(a.data[0] * 255.0)
    if levels.min() < 0 or levels.max() > 255:
        raise ImageFormatError(
            f"values scale to [{levels.min():g}, {levels.max():g}], outside [0, 255]"
        )
    raw = np.moveaxis(levels.astype(np.uint8), 0, 2)
    magic = b"P5" if channels == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(raw.tobytes())
