"""The four dropout variants over 4-D feature maps, plus the linear schedule.

All block variants share one pipeline per 2-D (batch, channel) slice: build a
per-position seed drop probability map q, Bernoulli-sample a seed mask, grow
every zero seed into a clipped block, then apply the expanded mask and rescale
the survivors by total/kept. They differ in exactly one factor, the q map:

* drop_block:        q is uniformly the base probability alpha
* batch_drop_block:  uniform q, but one mask per batch item shared by all of
                     its channels
* prob_drop_block:   q = min(alpha * gamma, 1) with gamma the per-position
                     saliency |a| / mean|a| of the slice

Unstructured dropout zeroes single elements at rate alpha and scales the
survivors by 1/(1-alpha) so inference needs no compensation. Inference mode
is an exact passthrough for every variant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .rng import RngStream
from .tensor import DropMask, FeatureMap, mean_abs


class Variant(str, enum.Enum):
    DROPOUT = "dropout"
    DROP_BLOCK = "dropblock"
    BATCH_DROP_BLOCK = "batchdropblock"
    PROB_DROP_BLOCK = "probdropblock"


class Mode(str, enum.Enum):
    TRAIN = "train"
    INFERENCE = "inference"


class NoSaliencyError(ValueError):
    """An all-zero slice has no saliency to weight drops by."""


@dataclass(frozen=True)
class DropSpec:
    variant: Variant
    alpha: float = 0.2
    block_size: int = 4
    mode: Mode = Mode.TRAIN

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")


@dataclass(frozen=True)
class ScheduleState:
    """Linear ramp of the base drop probability from 0 to alpha_target.

    Equivalently the keep probability decreases from 1 to 1 - alpha_target
    over total_steps optimizer steps.
    """

    alpha_target: float
    total_steps: int
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha_target <= 1.0:
            raise ValueError(f"alpha_target must be in [0, 1], got {self.alpha_target}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.step <= self.total_steps:
            raise ValueError(f"step must be in [0, {self.total_steps}], got {self.step}")

    def advanced(self) -> "ScheduleState":
        # holds at the target once the ramp is complete
        return replace(self, step=min(self.step + 1, self.total_steps))


def alpha_at(sched: ScheduleState) -> float:
    return sched.alpha_target * sched.step / sched.total_steps


@dataclass(frozen=True)
class DropResult:
    """Full outcome of one variant application.

    ``seeds[b][c]`` holds the pre-expansion zero positions of that slice as an
    (n, 2) int array; ``scales[b, c]`` is the multiplier applied to surviving
    elements, so ``mask * scale`` replays the exact forward transform.
    """

    output: FeatureMap
    mask: DropMask
    seeds: list = field(repr=False)
    scales: np.ndarray = field(repr=False)

    @property
    def pair(self):
        return self.output, self.mask


def compute_gamma(slice2d) -> np.ndarray:
    """Per-position saliency |a| / mean|a| of a 2-D slice."""
    a = np.asarray(slice2d, dtype=np.float64)
    m = mean_abs(a)
    if m == 0.0:
        raise NoSaliencyError("all-zero slice: saliency is undefined")
    return np.abs(a) / m


def compute_q(gamma, alpha: float) -> np.ndarray:
    return np.minimum(np.asarray(gamma, dtype=np.float64) * alpha, 1.0)


def block_bounds(block_size: int) -> tuple[int, int]:
    """Rows/cols a seed extends over: floor((B-1)/2) back, round-half-up((B-1)/2) forward."""
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    return (block_size - 1) // 2, block_size // 2


def sample_seed_mask(q, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli mask: 0 with probability q[i, j], independent per position."""
    q = np.asarray(q, dtype=np.float64)
    return (rng.random(q.shape) >= q).astype(np.uint8)


def expand_blocks(seed_mask, block_size: int) -> np.ndarray:
    """Zero a clipped block around every zero seed; seeds are read first."""
    mask = np.array(seed_mask, dtype=np.uint8)
    seeds = _seed_positions(mask)
    beta_lb, beta_ub = block_bounds(block_size)
    backend.expand_blocks_inplace(mask, seeds[:, 0], seeds[:, 1], beta_lb, beta_ub)
    return mask


def _seed_positions(seed_mask) -> np.ndarray:
    rows, cols = np.nonzero(seed_mask == 0)
    return np.column_stack((rows, cols)).astype(np.int64)


def _apply_mask_scaled(slice2d, mask2d):
    total = mask2d.size
    kept = int(mask2d.sum())
    if kept == total:
        return slice2d, 1.0
    if kept == 0:
        return np.zeros_like(slice2d), 0.0
    s = total / kept
    return slice2d * mask2d * s, s


def normalize_and_apply(slice2d, mask2d) -> np.ndarray:
    """(A * M) * total/kept; an all-zero mask yields the zero map unscaled."""
    a = np.asarray(slice2d, dtype=np.float64)
    m = np.asarray(mask2d)
    if a.shape != m.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {m.shape}")
    out, _ = _apply_mask_scaled(a, m)
    return np.array(out)


def _identity_result(a: FeatureMap) -> DropResult:
    b, c = a.dims[0], a.dims[1]
    empty = np.empty((0, 2), dtype=np.int64)
    return DropResult(
        output=a,
        mask=DropMask.ones(a.dims),
        seeds=[[empty for _ in range(c)] for _ in range(b)],
        scales=np.ones((b, c)),
    )


def _check_block_fits(a: FeatureMap, spec: DropSpec):
    h, w = a.dims[2], a.dims[3]
    if spec.block_size > min(h, w):
        raise ValueError(
            f"block_size {spec.block_size} too large for {h}x{w} map"
        )


def _block_variant(a: FeatureMap, spec: DropSpec, rng: RngStream,
                   saliency: bool, per_batch: bool) -> DropResult:
    _check_block_fits(a, spec)
    if spec.mode is Mode.INFERENCE:
        return _identity_result(a)
    nb, nc, h, w = a.dims
    out = np.empty_like(a.data)
    bits = np.empty(a.dims, dtype=np.uint8)
    scales = np.empty((nb, nc))
    seeds: list = []
    uniform_q = np.full((h, w), spec.alpha)
    for bi in range(nb):
        seeds.append([])
        shared_mask = None
        shared_seeds = None
        if per_batch:
            seed_mask = sample_seed_mask(uniform_q, rng.slice_rng(bi, 0))
            shared_seeds = _seed_positions(seed_mask)
            shared_mask = expand_blocks(seed_mask, spec.block_size)
        for ci in range(nc):
            sl = a.data[bi, ci]
            if per_batch:
                mask, slice_seeds = shared_mask, shared_seeds
            elif saliency:
                try:
                    q = compute_q(compute_gamma(sl), spec.alpha)
                except NoSaliencyError:
                    # nothing to suppress in an all-zero slice
                    out[bi, ci] = sl
                    bits[bi, ci] = 1
                    scales[bi, ci] = 1.0
                    seeds[bi].append(np.empty((0, 2), dtype=np.int64))
                    continue
                seed_mask = sample_seed_mask(q, rng.slice_rng(bi, ci))
                slice_seeds = _seed_positions(seed_mask)
                mask = expand_blocks(seed_mask, spec.block_size)
            else:
                seed_mask = sample_seed_mask(uniform_q, rng.slice_rng(bi, ci))
                slice_seeds = _seed_positions(seed_mask)
                mask = expand_blocks(seed_mask, spec.block_size)
            out[bi, ci], scales[bi, ci] = _apply_mask_scaled(sl, mask)
            bits[bi, ci] = mask
            seeds[bi].append(slice_seeds)
    return DropResult(FeatureMap(out), DropMask(bits), seeds, scales)


def _unstructured(a: FeatureMap, spec: DropSpec, rng: RngStream) -> DropResult:
    if spec.alpha >= 1.0:
        raise ValueError("alpha must be < 1 for unstructured dropout")
    if spec.mode is Mode.INFERENCE or spec.alpha == 0.0:
        return _identity_result(a)
    nb, nc, h, w = a.dims
    out = np.empty_like(a.data)
    bits = np.empty(a.dims, dtype=np.uint8)
    keep_scale = 1.0 / (1.0 - spec.alpha)
    scales = np.full((nb, nc), keep_scale)
    seeds: list = []
    for bi in range(nb):
        seeds.append([])
        for ci in range(nc):
            mask = (rng.slice_rng(bi, ci).random((h, w)) >= spec.alpha).astype(np.uint8)
            out[bi, ci] = a.data[bi, ci] * mask * keep_scale
            bits[bi, ci] = mask
            # every dropped element is its own block seed (B = 1 semantics)
            seeds[bi].append(_seed_positions(mask))
    return DropResult(FeatureMap(out), DropMask(bits), seeds, scales)


def run_detailed(a: FeatureMap, spec: DropSpec, rng: RngStream) -> DropResult:
    if spec.variant is Variant.DROPOUT:
        return _unstructured(a, spec, rng)
    if spec.variant is Variant.DROP_BLOCK:
        return _block_variant(a, spec, rng, saliency=False, per_batch=False)
    if spec.variant is Variant.BATCH_DROP_BLOCK:
        return _block_variant(a, spec, rng, saliency=False, per_batch=True)
    if spec.variant is Variant.PROB_DROP_BLOCK:
        return _block_variant(a, spec, rng, saliency=True, per_batch=False)
    raise ValueError(f"unknown variant {spec.variant!r}")


def _variant_entry(a, spec, rng, expected: Variant):
    if spec.variant is not expected:
        raise ValueError(f"spec.variant is {spec.variant}, expected {expected}")
    return run_detailed(a, spec, rng).pair


def prob_drop_block(a: FeatureMap, spec: DropSpec, rng: RngStream):
    return _variant_entry(a, spec, rng, Variant.PROB_DROP_BLOCK)


def drop_block(a: FeatureMap, spec: DropSpec, rng: RngStream):
    return _variant_entry(a, spec, rng, Variant.DROP_BLOCK)


def batch_drop_block(a: FeatureMap, spec: DropSpec, rng: RngStream):
    return _variant_entry(a, spec, rng, Variant.BATCH_DROP_BLOCK)


def standard_dropout(a: FeatureMap, spec: DropSpec, rng: RngStream):
    return _variant_entry(a, spec, rng, Variant.DROPOUT)


def apply(a: FeatureMap, spec: DropSpec, sched: ScheduleState, rng: RngStream):
    """Dispatch to the variant with the scheduled alpha in place of spec.alpha."""
    return run_detailed(a, replace(spec, alpha=alpha_at(sched)), rng).pair
