"""Monte-Carlo verification of drop rates, consistency, and block contiguity.

The empirical side replays a variant over many trials and counts per-position
mask zeros. The analytic side never touches the sampler: a position is kept
only if every seed position whose block covers it keeps its Bernoulli draw,
so its drop rate is 1 - prod(1 - q) over the covering window. Binomial
acceptance bands are 4 standard errors wide (about one spurious failure per
16000 independent checks); trial substreams are additive in the trial index,
so reports are reproducible across machines and worker counts.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import FeatureMap
from .variants import (
    DropSpec,
    Mode,
    NoSaliencyError,
    Variant,
    compute_gamma,
    compute_q,
    run_detailed,
)

DEFAULT_TRIALS = 20000


@dataclass(frozen=True)
class TrialReport:
    variant: str
    trials: int
    rates: np.ndarray                  # (h, w) zero frequency, pooled over slices
    mean_drop_fraction: float
    channel_consistent_fraction: float
    violations: int
    expected_rates: np.ndarray         # analytic oracle, same pooling
    ci_half_widths: np.ndarray         # 4 SE around the analytic rates

    def failures(self) -> list[str]:
        """Human-readable list of failed checks; empty means all passed."""
        out = []
        if self.violations > 0:
            out.append(f"{self.violations} contiguity violations")
        if self.variant == Variant.BATCH_DROP_BLOCK.value and \
                self.channel_consistent_fraction != 1.0:
            out.append(
                f"channel-consistent fraction {self.channel_consistent_fraction}"
            )
        err = np.abs(self.rates - self.expected_rates)
        bad = np.argwhere(err > self.ci_half_widths)
        for i, j in bad:
            out.append(
                f"rate[{i},{j}]={self.rates[i, j]:.5f} outside "
                f"{self.expected_rates[i, j]:.5f}+-{self.ci_half_widths[i, j]:.5f}"
            )
        return out

    def passed(self) -> bool:
        return not self.failures()

    def to_json(self) -> str:
        doc = {
            "variant": self.variant,
            "trials": self.trials,
            "rates": self.rates.tolist(),
            "mean_drop_fraction": self.mean_drop_fraction,
            "channel_consistent_fraction": self.channel_consistent_fraction,
            "violations": self.violations,
            "expected_rates": self.expected_rates.tolist(),
            "ci_half_widths": self.ci_half_widths.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _bounds(block_size: int) -> tuple[int, int]:
    # spelled from the defining formulas, independent of variants.block_bounds
    return math.floor((block_size - 1) / 2), _round_half_up((block_size - 1) / 2)


def check_contiguity(mask2d, seeds, block_size: int) -> int:
    """Cells where the zero set differs from the union of seed blocks."""
    mask = np.asarray(mask2d)
    h, w = mask.shape
    lb, ub = _bounds(block_size)
    expected = np.ones((h, w), dtype=np.uint8)
    for i, j in np.asarray(seeds).reshape(-1, 2):
        for r in range(i - lb, i + ub + 1):
            if r < 0 or r >= h:
                continue
            for c in range(j - lb, j + ub + 1):
                if 0 <= c < w:
                    expected[r, c] = 0
    return int(np.count_nonzero((mask == 0) != (expected == 0)))


def analytic_drop_rates(q, block_size: int) -> np.ndarray:
    """Exact per-position drop probability after block expansion.

    Position (i, j) survives iff every covering seed draws keep, so the keep
    probability is the product of (1 - q) over the covering window.
    """
    q = np.asarray(q, dtype=np.float64)
    h, w = q.shape
    lb, ub = _bounds(block_size)
    pad = np.ones((h + lb + ub, w + lb + ub))
    pad[ub:ub + h, ub:ub + w] = 1.0 - q
    keep = np.ones((h, w))
    for a in range(lb + ub + 1):
        for b in range(lb + ub + 1):
            keep = keep * pad[a:a + h, b:b + w]
    return 1.0 - keep


def _slice_q(a: FeatureMap, spec: DropSpec, bi: int, ci: int) -> np.ndarray:
    h, w = a.dims[2], a.dims[3]
    if spec.mode is Mode.INFERENCE:
        return np.zeros((h, w))
    if spec.variant is Variant.PROB_DROP_BLOCK:
        try:
            return compute_q(compute_gamma(a.data[bi, ci]), spec.alpha)
        except NoSaliencyError:
            return np.zeros((h, w))
    return np.full((h, w), spec.alpha)


def _expected_rates(a: FeatureMap, spec: DropSpec) -> np.ndarray:
    nb, nc = a.dims[0], a.dims[1]
    block = 1 if spec.variant is Variant.DROPOUT else spec.block_size
    acc = np.zeros((a.dims[2], a.dims[3]))
    for bi in range(nb):
        for ci in range(nc):
            acc += analytic_drop_rates(_slice_q(a, spec, bi, ci), block)
    return acc / (nb * nc)


def _run_trials(a, spec, base, trial_indices):
    nb, nc = a.dims[0], a.dims[1]
    block = 1 if spec.variant is Variant.DROPOUT else spec.block_size
    zero_counts = np.zeros((a.dims[2], a.dims[3]), dtype=np.int64)
    consistent = 0
    violations = 0
    for t in trial_indices:
        res = run_detailed(a, spec, base.for_trial(t))
        bits = res.mask.bits
        zero_counts += np.sum(bits == 0, axis=(0, 1))
        if np.all(bits == bits[:, :1]):
            consistent += 1
        for bi in range(nb):
            for ci in range(nc):
                violations += check_contiguity(bits[bi, ci], res.seeds[bi][ci], block)
    return zero_counts, consistent, violations


def estimate_drop_rates(a: FeatureMap, spec: DropSpec, trials: int, seed: int,
                        workers: int = 1) -> TrialReport:
    """Replay a variant over trial substreams seed+0 ... seed+trials-1."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base = RngStream(seed)
    if workers > 1:
        chunks = [range(t, trials, workers) for t in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _run_trials(a, spec, base, c), chunks))
    else:
        parts = [_run_trials(a, spec, base, range(trials))]
    zero_counts = sum(p[0] for p in parts)
    consistent = sum(p[1] for p in parts)
    violations = sum(p[2] for p in parts)

    nb, nc = a.dims[0], a.dims[1]
    samples = trials * nb * nc
    if spec.variant is Variant.BATCH_DROP_BLOCK:
        samples = trials * nb  # channels are copies, not independent draws
    rates = zero_counts / (trials * nb * nc)
    expected = _expected_rates(a, spec)
    half_widths = 4.0 * np.sqrt(expected * (1.0 - expected) / samples)
    return TrialReport(
        variant=spec.variant.value,
        trials=trials,
        rates=rates,
        mean_drop_fraction=float(zero_counts.sum()) / (trials * a.size),
        channel_consistent_fraction=consistent / trials,
        violations=violations,
        expected_rates=expected,
        ci_half_widths=half_widths,
    )


@dataclass(frozen=True)
class SweepPoint:
    value: float
    samples: list
    errors: list

    @property
    def mean(self):
        return float(np.mean(self.samples)) if self.samples else None

    @property
    def std(self):
        return float(np.std(self.samples)) if self.samples else None


@dataclass(frozen=True)
class SweepResult:
    axis: str
    points: list

    def to_json(self) -> str:
        doc = {
            "sweep_axis": self.axis,
            "points": [
                {
                    "value": p.value,
                    "mean": p.mean,
                    "std": p.std,
                    "samples": p.samples,
                    "errors": p.errors,
                }
                for p in self.points
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def sweep(axis: str, values, experiment, seeds) -> SweepResult:
    """Evaluate experiment(value, seed) on a grid, mean +- sd over seeds.

    A failing point is recorded with its error message and the sweep goes on.
    """
    values = list(values)
    seeds = list(seeds)
    if not values or not seeds:
        raise ValueError("sweep needs at least one value and one seed")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"sweep values must be strictly increasing, got {values}")
    points = []
    for v in values:
        samples: list = []
        errors: list = []
        for s in seeds:
            try:
                samples.append(float(experiment(v, s)))
            except Exception as exc:  # per-point isolation is the contract
                errors.append(f"seed {s}: {exc}")
        points.append(SweepPoint(value=v, samples=samples, errors=errors))
    return SweepResult(axis=axis, points=points)
