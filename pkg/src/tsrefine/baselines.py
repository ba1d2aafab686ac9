"""Comparison methods: two-regime global linear regression and neighbor embedding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .metrics import r_squared
from .nalr import RegressionCoeffs, _select, assemble, solve_affine
from .patches import SampleSet, windows
from .tsgrid import SPEED_MAX, SPEED_MIN, TSDiagram

CONGESTION_THRESHOLD = 30.0
GLR_MIN_SAMPLES = 11
GLR_RIDGE = 1e-8


@dataclass(frozen=True)
class GlrModel:
    free_coeffs: RegressionCoeffs
    congested_coeffs: RegressionCoeffs
    regime_threshold: float = CONGESTION_THRESHOLD
    free_r2: float = float("nan")
    congested_r2: float = float("nan")

    def __post_init__(self):
        if not 0 < self.regime_threshold < 100:
            raise ValueError(f"regime threshold must be in (0, 100), got {self.regime_threshold}")


def _fit_regime(low, high):
    # OLS when the design can be full rank, tiny ridge otherwise
    lam = 0.0 if len(low) >= GLR_MIN_SAMPLES else GLR_RIDGE
    try:
        table = solve_affine(low, high, lam)
    except np.linalg.LinAlgError:
        table = solve_affine(low, high, GLR_RIDGE)
    return RegressionCoeffs(table), r_squared(high, table[:, 0] + low @ table[:, 1:].T)


def glr_train(samples: SampleSet, threshold: float = CONGESTION_THRESHOLD) -> GlrModel:
    """Fit one affine map per regime; regime = centre speed < threshold (congested)."""
    if samples.count == 0:
        raise ValueError("empty sample set")
    congested = samples.low[:, 4] < threshold
    n_cong = int(congested.sum())
    if n_cong == 0 or n_cong == samples.count:
        warnings.warn(f"only one traffic regime present in {samples.count} samples; "
                      "using a single coefficient set", stacklevel=2)
        coeffs, r2 = _fit_regime(samples.low, samples.high)
        return GlrModel(coeffs, coeffs, threshold, r2, r2)
    free, free_r2 = _fit_regime(samples.low[~congested], samples.high[~congested])
    cong, cong_r2 = _fit_regime(samples.low[congested], samples.high[congested])
    return GlrModel(free, cong, threshold, free_r2, cong_r2)


def glr_refine(low: TSDiagram, model: GlrModel) -> TSDiagram:
    low.require_dense("input diagram")
    patches = windows(low.values).reshape(-1, 9)
    congested = patches[:, 4] < model.regime_threshold
    free, cong = model.free_coeffs.table, model.congested_coeffs.table
    out = np.where(congested[:, None],
                   cong[:, 0] + patches @ cong[:, 1:].T,
                   free[:, 0] + patches @ free[:, 1:].T)
    s = int(round(np.sqrt(out.shape[1])))
    grid = assemble(np.clip(out, SPEED_MIN, SPEED_MAX), low.rows, low.cols, s)
    return TSDiagram(grid, low.cell_size.scaled(1.0 / s))


@dataclass(frozen=True)
class NeConfig:
    k: int = 5
    distance: str = "l1"
    reg: float = 1e-6
    factor: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.distance not in ("l1", "l2"):
            raise ValueError(f"distance must be 'l1' or 'l2', got {self.distance!r}")
        if self.factor not in (4, 16):
            raise ValueError(f"factor must be 4 or 16, got {self.factor}")


def ne_weights(query, neighbors, reg: float = 1e-6) -> np.ndarray:
    """Sum-to-one weights minimising ``||query - sum_j w_j neighbors_j||^2``.

    Solves ``G w = 1`` on the local Gram matrix ``G`` of neighbour
    differences, with ``reg * trace(G)`` (floor 1e-12) added to the diagonal
    so duplicate or collinear neighbours stay solvable, then normalises.
    """
    Z = np.asarray(neighbors, float) - np.asarray(query, float)
    G = Z @ Z.T
    G[np.diag_indices_from(G)] += reg * np.trace(G) + 1e-12
    w = np.linalg.solve(G, np.ones(len(G)))
    return w / w.sum()


def ne_refine(low: TSDiagram, samples: SampleSet, cfg: NeConfig | None = None) -> TSDiagram:
    """Neighbor-embedding refinement; the high block size follows the sample set.

    With a sample set whose high blocks are 4x4 the whole 16x job is one pass.
    Each low cell owns its block, so no overlap averaging is done.
    """
    cfg = cfg or NeConfig()
    low.require_dense("input diagram")
    if samples.count == 0:
        raise ValueError("empty sample set")
    s = samples.scale
    if s * s != cfg.factor:
        raise ValueError(f"sample set gives a {s * s}x factor, config asks for {cfg.factor}x")
    patches = windows(low.values).reshape(-1, 9)
    out = np.empty((len(patches), s * s))
    for q, p in enumerate(patches):
        diff = samples.low - p
        dist = np.abs(diff).sum(axis=1) if cfg.distance == "l1" else np.sqrt((diff ** 2).sum(axis=1))
        idx = _select(dist, cfg.k)
        w = ne_weights(p, samples.low[idx], cfg.reg)
        out[q] = w @ samples.high[idx]
    grid = assemble(np.clip(out, SPEED_MIN, SPEED_MAX), low.rows, low.cols, s)
    return TSDiagram(grid, low.cell_size.scaled(1.0 / s))
