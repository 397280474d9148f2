"""Dense 4-D feature maps and binary drop masks.

Layout is row-major with width fastest. Values live as float64 in memory;
file I/O (see :mod:`structdrop.fileio`) stores float32. Both types are
immutable after construction: the wrapped arrays are marked read-only, and
every operation returns a fresh value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Dims = tuple[int, int, int, int]


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A (batch, channel, height, width) tensor of finite real activations."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"feature map must be 4-D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map values must be finite")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def dims(self) -> Dims:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def full(cls, dims: Dims, value: float) -> "FeatureMap":
        return cls(np.full(dims, value, dtype=np.float64))

    @classmethod
    def zeros(cls, dims: Dims) -> "FeatureMap":
        return cls.full(dims, 0.0)


@dataclass(frozen=True, eq=False)
class DropMask:
    """A binary mask with the same dims as the map it applies to."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.bits)
        if arr.ndim != 4:
            raise ValueError(f"mask must be 4-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError("mask elements must be exactly 0 or 1")
            arr = arr.astype(np.uint8)
        elif not np.all(arr <= 1):
            raise ValueError("mask elements must be exactly 0 or 1")
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def dims(self) -> Dims:
        return self.bits.shape

    @classmethod
    def ones(cls, dims: Dims) -> "DropMask":
        return cls(np.ones(dims, dtype=np.uint8))


def _as_array(a):
    return a.data if isinstance(a, FeatureMap) else np.asarray(a, dtype=np.float64)


def mean_abs(a) -> float:
    """Mean of absolute values over every element of a map or slice.

    The denominator is the total element count, zeros included.
    """
    arr = _as_array(a)
    if arr.size == 0:
        raise ValueError("mean_abs of an empty slice")
    return float(np.mean(np.abs(arr)))


def elementwise_mul(a: FeatureMap, mask: DropMask) -> FeatureMap:
    if a.dims != mask.dims:
        raise ValueError(f"shape mismatch: map {a.dims} vs mask {mask.dims}")
    return FeatureMap(a.data * mask.bits)


def scale(a: FeatureMap, c: float) -> FeatureMap:
    if not np.isfinite(c):
        raise ValueError(f"scale factor must be finite, got {c}")
    return FeatureMap(a.data * float(c))
