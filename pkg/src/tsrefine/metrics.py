"""Refinement quality metrics: MAE, MAPE, CMJS, SSIM, GMSD and R^2."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .tsgrid import SPEED_MAX, SPEED_MIN, TSDiagram

MAPE_MIN_TRUTH = 1e-6
GMSD_C = 1e-8
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=float)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SsimParams:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = SPEED_MAX - SPEED_MIN

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mape: float
    cmjs: float
    ssim: float
    gmsd: float
    mape_excluded_cells: int = 0
    r2: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(truth, pred):
    t = truth.values if isinstance(truth, TSDiagram) else np.asarray(truth, float)
    p = pred.values if isinstance(pred, TSDiagram) else np.asarray(pred, float)
    if t.shape != p.shape:
        raise MetricError(f"shape mismatch: truth {t.shape} vs prediction {p.shape}")
    if np.isnan(t).any() or np.isnan(p).any():
        raise MetricError("metrics need diagrams without missing cells")
    return t, p


def mae(truth, pred) -> float:
    t, p = _pair(truth, pred)
    return float(np.abs(t - p).mean())


def mape_with_count(truth, pred) -> tuple[float, int]:
    """MAPE over cells with truth above 1e-6 km/h, and the number excluded."""
    t, p = _pair(truth, pred)
    keep = t > MAPE_MIN_TRUTH
    if not keep.any():
        raise MetricError("MAPE undefined: every truth cell is zero")
    return float((np.abs(t[keep] - p[keep]) / t[keep]).mean()), int((~keep).sum())


def mape(truth, pred) -> float:
    return mape_with_count(truth, pred)[0]


def cmjs(truth, pred, threshold: float = 30.0) -> float:
    """Jaccard similarity of the ``speed < threshold`` masks (1 if both empty)."""
    t, p = _pair(truth, pred)
    jt, jp = t < threshold, p < threshold
    union = np.count_nonzero(jt | jp)
    if union == 0:
        return 1.0
    return np.count_nonzero(jt & jp) / union


def ssim(truth, pred, params: SsimParams | None = None) -> float:
    """Mean SSIM over all fully-inside uniform windows (population moments)."""
    params = params or SsimParams()
    t, p = _pair(truth, pred)
    w = min(params.window, *t.shape)
    view = np.lib.stride_tricks.sliding_window_view
    tw = view(t, (w, w)).reshape(-1, w * w)
    pw = view(p, (w, w)).reshape(-1, w * w)
    mt, mp = tw.mean(axis=1), pw.mean(axis=1)
    dt, dp = tw - mt[:, None], pw - mp[:, None]
    vt, vp = (dt ** 2).mean(axis=1), (dp ** 2).mean(axis=1)
    cov = (dt * dp).mean(axis=1)
    c1, c2 = params.c1, params.c2
    s = ((2 * mt * mp + c1) * (2 * cov + c2)) / ((mt ** 2 + mp ** 2 + c1) * (vt + vp + c2))
    return float(s.mean())


def gradient_magnitude(values: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude with replicate padding."""
    gx = ndimage.convolve(values, SOBEL_X, mode="nearest")
    gy = ndimage.convolve(values, SOBEL_Y, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def gms_map(truth, pred, c: float = GMSD_C) -> np.ndarray:
    t, p = _pair(truth, pred)
    if min(t.shape) < 2:
        raise MetricError(f"GMSD needs at least 2 cells per axis, got {t.shape}")
    gt, gp = gradient_magnitude(t), gradient_magnitude(p)
    return (2 * gt * gp + c) / (gt ** 2 + gp ** 2 + c)


def gmsd(truth, pred, c: float = GMSD_C) -> float:
    """Population standard deviation of the per-cell gradient magnitude similarity."""
    return float(np.std(gms_map(truth, pred, c)))


def r_squared(targets, fitted) -> float:
    """``1 - SSE/SST`` pooled over output columns; NaN when SST is zero."""
    y = np.asarray(targets, float)
    f = np.asarray(fitted, float)
    if y.ndim == 1:
        y, f = y[:, None], f[:, None]
    sst = ((y - y.mean(axis=0)) ** 2).sum()
    if sst == 0:
        return float("nan")
    return float(1.0 - ((y - f) ** 2).sum() / sst)


def evaluate(truth, pred, congestion_threshold: float = 30.0, r2: float = float("nan")) -> MetricsReport:
    m, excluded = mape_with_count(truth, pred)
    return MetricsReport(
        mae=mae(truth, pred), mape=m,
        cmjs=cmjs(truth, pred, congestion_threshold),
        ssim=ssim(truth, pred), gmsd=gmsd(truth, pred),
        mape_excluded_cells=excluded, r2=r2)


# Metrics where a smaller value is better.
LOWER_IS_BETTER = {"mae": True, "mape": True, "gmsd": True, "cmjs": False, "ssim": False}


def improvement_rate(nalr: float, baseline: float, metric: str) -> float:
    """Relative gain of NALR over a baseline; positive means NALR is better."""
    if baseline == 0:
        return float("nan") if nalr != baseline else 0.0
    if LOWER_IS_BETTER[metric]:
        return (baseline - nalr) / baseline
    return (nalr - baseline) / baseline
