"""Noise injection, random missingness and nine-cell mean imputation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tsgrid import SPEED_MAX, SPEED_MIN, GridError, TSDiagram

_NINE = np.ones((3, 3))


@dataclass(frozen=True)
class PerturbSpec:
    noise_sd: float = 0.0
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0 <= self.missing_rate < 1:
            raise ValueError(f"missing_rate must be in [0, 1), got {self.missing_rate}")


def add_noise(d: TSDiagram, sd: float, seed: int) -> TSDiagram:
    """Add i.i.d. N(0, sd^2) noise per cell, then clip to the valid speed range."""
    if sd < 0:
        raise ValueError(f"noise sd must be >= 0, got {sd}")
    d.require_dense()
    if sd == 0:
        return d
    rng = np.random.default_rng(seed)
    noisy = d.values + rng.normal(0.0, sd, size=d.shape)
    return TSDiagram(np.clip(noisy, SPEED_MIN, SPEED_MAX), d.cell_size)


def drop_random(d: TSDiagram, rate: float, seed: int) -> TSDiagram:
    """Mask exactly ``round(rate * cells)`` uniformly chosen cells."""
    if not 0 <= rate < 1:
        raise ValueError(f"missing rate must be in [0, 1), got {rate}")
    n_drop = int(round(rate * d.size))
    if n_drop == 0:
        return d
    rng = np.random.default_rng(seed)
    idx = rng.choice(d.size, size=n_drop, replace=False)
    mask = d.mask.ravel().copy()
    mask[idx] = True
    return TSDiagram(d.values, d.cell_size, mask=mask.reshape(d.shape))


def impute_nine_cell(d: TSDiagram) -> TSDiagram:
    """Fill missing cells with the mean of their non-missing 3x3 neighbours.

    Passes are synchronous (each pass reads only the previous state) and
    repeat until the diagram is dense, so clustered gaps fill inward.
    """
    v = d.values.copy()
    missing = np.isnan(v)
    if not missing.any():
        return d
    if missing.all():
        raise GridError("cannot impute a diagram with no observed cells")
    while missing.any():
        known = (~missing).astype(float)
        sums = ndimage.correlate(np.where(missing, 0.0, v), _NINE, mode="constant")
        counts = ndimage.correlate(known, _NINE, mode="constant")
        fill = missing & (counts > 0)
        v[fill] = sums[fill] / counts[fill]
        missing = missing & ~fill
    return TSDiagram(v, d.cell_size)
