"""Neighborhood-adaptive linear regression (NALR).

For each low-resolution cell: find the ``k`` training patches closest in
cumulative absolute error, fit one affine map per high-resolution sub-cell
on that neighbourhood, and apply it to the cell's own 3x3 patch.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .metrics import r_squared
from .patches import SampleSet, parse_shape, windows
from .tsgrid import SPEED_MAX, SPEED_MIN, GridError, TSDiagram

log = logging.getLogger(__name__)

N_INPUTS = 9
# Upper bound on query x sample x window elements held in memory per block.
_BLOCK_ELEMS = 1 << 22


class SingularFitError(np.linalg.LinAlgError):
    """Least-squares system is rank deficient and no ridge term was given."""

    def __init__(self, msg, rank=None, cond=None, cell=None):
        super().__init__(msg)
        self.rank = rank
        self.cond = cond
        self.cell = cell


@dataclass(frozen=True)
class NalrConfig:
    k: int = 100
    search_shape: str = "3x3"
    ridge_lambda: float = 1e-8
    clamp_output: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.ridge_lambda < 0:
            raise ValueError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        parse_shape(self.search_shape)

    @property
    def shape(self) -> tuple[int, int]:
        return parse_shape(self.search_shape)


@dataclass(frozen=True)
class Neighborhood:
    """Selected samples in ascending (CAE, sample index) order."""

    indices: np.ndarray
    distances: np.ndarray
    low: np.ndarray
    high: np.ndarray

    @property
    def k(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class RegressionCoeffs:
    """One row per high sub-cell: ``[intercept, w_1 .. w_9]``."""

    table: np.ndarray

    @property
    def intercept(self) -> np.ndarray:
        return self.table[:, 0]

    @property
    def weights(self) -> np.ndarray:
        return self.table[:, 1:]


def cae(a, b) -> float:
    """Cumulative absolute error between two patches."""
    return float(np.abs(np.asarray(a, float) - np.asarray(b, float)).sum())


def _select(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest distances, ties broken by lower index."""
    n = dist.shape[0]
    if k >= n:
        return np.lexsort((np.arange(n), dist))
    kth = np.partition(dist, k - 1)[k - 1]
    cand = np.flatnonzero(dist <= kth)
    return cand[np.lexsort((cand, dist[cand]))][:k]


def search_neighborhood(query, samples: SampleSet, cfg: NalrConfig, key=None) -> Neighborhood:
    """Brute-force k-nearest samples to ``query`` under CAE.

    For non-3x3 search shapes pass the query's distance window as ``key``;
    the members still carry the full 3x3 regression inputs.
    """
    if samples.count == 0:
        raise ValueError("empty sample set")
    shape = cfg.shape
    if key is None:
        if shape != (3, 3):
            raise ValueError(f"search shape {cfg.search_shape} needs an explicit query key")
        key = query
    dist = np.abs(samples.key(shape) - np.asarray(key, float)).sum(axis=1)
    idx = _select(dist, cfg.k)
    return Neighborhood(idx, dist[idx], samples.low[idx], samples.high[idx])


def solve_affine(X: np.ndarray, Y: np.ndarray, ridge_lambda: float) -> np.ndarray:
    """Affine least squares ``Y ~ b + X W`` with ridge on ``W`` only.

    Centering absorbs the unpenalised intercept exactly; the ridge rows are
    appended to the centred design so the solve never forms ``X^T X``.
    Returns a ``(Y.shape[1], X.shape[1] + 1)`` table ``[b, W^T]``.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    Yc = Y - ym
    p = X.shape[1]
    if ridge_lambda > 0:
        A = np.vstack([Xc, np.sqrt(ridge_lambda) * np.eye(p)])
        B = np.vstack([Yc, np.zeros((p, Y.shape[1]))])
        W = np.linalg.lstsq(A, B, rcond=None)[0]
    else:
        W, _, _, sv = np.linalg.lstsq(Xc, Yc, rcond=None)
        # rank relative to the raw data scale; centring leaves rounding residue
        tol = max(X.shape) * np.finfo(float).eps * max(np.abs(X).max(), 1.0) * np.sqrt(X.shape[0])
        rank = int((sv > tol).sum())
        if rank < p:
            cond = np.inf if sv.size < p or sv[-1] == 0 else sv[0] / sv[-1]
            raise SingularFitError(
                f"design has rank {rank} < {p} (condition {cond:.3g}); "
                f"set ridge_lambda > 0", rank=rank, cond=cond)
    b = ym - xm @ W
    return np.column_stack([b, W.T])


def fit_neighborhood(n: Neighborhood, cfg: NalrConfig) -> RegressionCoeffs:
    if n.k < 1:
        raise ValueError("neighbourhood is empty")
    table = solve_affine(n.low, n.high, cfg.ridge_lambda)
    if not np.isfinite(table).all():
        raise SingularFitError("non-finite regression coefficients")
    return RegressionCoeffs(table)


def predict_cell(query, coeffs: RegressionCoeffs, cfg: NalrConfig) -> np.ndarray:
    y = coeffs.intercept + coeffs.weights @ np.asarray(query, float)
    if cfg.clamp_output:
        y = np.clip(y, SPEED_MIN, SPEED_MAX)
    return y


# Worker state for process pools; set once per process.
_STATE = {}


def _init_worker(samples, cfg, query_patches, query_keys):
    _STATE.update(samples=samples, cfg=cfg, patches=query_patches, keys=query_keys)


def _refine_block(start: int, stop: int):
    """Predict cells ``start:stop`` of the flattened query arrays."""
    samples, cfg = _STATE["samples"], _STATE["cfg"]
    patches, keys = _STATE["patches"], _STATE["keys"]
    skey = samples.key(cfg.shape)
    out = np.empty((stop - start, samples.high.shape[1]))
    r2 = np.empty(stop - start)
    for j, q in enumerate(range(start, stop)):
        dist = np.abs(skey - keys[q]).sum(axis=1)
        idx = _select(dist, cfg.k)
        X, Y = samples.low[idx], samples.high[idx]
        try:
            table = solve_affine(X, Y, cfg.ridge_lambda)
        except SingularFitError as exc:
            exc.cell = q
            raise
        out[j] = table[:, 0] + table[:, 1:] @ patches[q]
        r2[j] = r_squared(Y, table[:, 0] + X @ table[:, 1:].T)
    return out, r2


def _blocks(n_queries: int, n_samples: int, key_len: int):
    step = max(1, min(n_queries, _BLOCK_ELEMS // max(1, n_samples * key_len)))
    step = min(step, 256)
    return [(i, min(i + step, n_queries)) for i in range(0, n_queries, step)]


def run_blocks(samples, cfg, patches, keys, workers: int = 1):
    """Evaluate every query; block boundaries never depend on ``workers``."""
    blocks = _blocks(len(patches), samples.count, keys.shape[1])
    if workers <= 1 or len(blocks) == 1:
        _init_worker(samples, cfg, patches, keys)
        try:
            results = [_refine_block(a, b) for a, b in blocks]
        finally:
            _STATE.clear()
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(samples, cfg, patches, keys)) as pool:
            futures = [pool.submit(_refine_block, a, b) for a, b in blocks]
            results = [f.result() for f in futures]
    out = np.concatenate([r[0] for r in results])
    r2 = np.concatenate([r[1] for r in results])
    return out, r2


def assemble(blocks: np.ndarray, rows: int, cols: int, s: int) -> np.ndarray:
    """Place per-cell ``s x s`` blocks (reading order) into a full grid."""
    return blocks.reshape(rows, cols, s, s).transpose(0, 2, 1, 3).reshape(rows * s, cols * s)


def refine(low: TSDiagram, samples: SampleSet, cfg: NalrConfig | None = None,
           workers: int = 1, stats: dict | None = None) -> TSDiagram:
    """Refine ``low`` by one 2x-per-axis pass.

    If ``stats`` is given, ``stats["r2"]`` receives the mean in-neighbourhood
    R^2 over cells with a defined value.
    """
    cfg = cfg or NalrConfig()
    low.require_dense("input diagram")
    if samples.count == 0:
        raise ValueError("empty sample set")
    s = samples.scale
    patches = windows(low.values).reshape(-1, 9)
    keys = patches if cfg.shape == (3, 3) else windows(low.values, cfg.shape).reshape(low.size, -1)
    try:
        out, r2 = run_blocks(samples, cfg, patches, keys, workers)
    except SingularFitError as exc:
        if exc.cell is not None:
            exc.cell = divmod(exc.cell, low.cols)
            exc.args = (f"{exc.args[0]} at cell {exc.cell}",)
        raise
    if cfg.clamp_output:
        out = np.clip(out, SPEED_MIN, SPEED_MAX)
    if stats is not None:
        stats["r2"] = float(np.nanmean(r2)) if np.isfinite(r2).any() else float("nan")
    grid = assemble(out, low.rows, low.cols, s)
    return TSDiagram(grid, low.cell_size.scaled(1.0 / s), check_range=cfg.clamp_output)


def refine_chained(low: TSDiagram, stage_sets, cfg: NalrConfig | None = None,
                   workers: int = 1) -> TSDiagram:
    """Apply one refinement pass per sample set (two passes give 16x)."""
    stage_sets = list(stage_sets)
    if not stage_sets:
        raise ValueError("no stages given")
    d = low
    for i, samples in enumerate(stage_sets):
        if samples.scale != 2:
            raise GridError(f"stage {i} sample set has scale {samples.scale}, expected 2")
        if samples.low_cell is not None and samples.low_cell != d.cell_size:
            raise GridError(f"stage {i} trained on cells {samples.low_cell}, "
                            f"but the diagram has {d.cell_size}")
        d = refine(d, samples, cfg, workers)
    return d
