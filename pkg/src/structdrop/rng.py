"""Deterministic substreams for per-slice and per-trial sampling.

A stream is identified by (seed, trial); each (batch, channel) slice derives
its own generator through ``SeedSequence``, so slices can be processed in any
order (or in parallel) with identical results. Trial derivation is additive:
trial t of base seed s draws exactly like trial 0 of seed s + t.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    trial: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.trial < 0:
            raise ValueError(f"seed and trial must be >= 0, got {self.seed}, {self.trial}")

    def for_trial(self, trial: int) -> "RngStream":
        return replace(self, trial=trial)

    def slice_rng(self, batch: int, channel: int) -> np.random.Generator:
        root = np.random.SeedSequence((self.seed + self.trial, batch, channel))
        return np.random.default_rng(root)
