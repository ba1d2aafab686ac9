"""Time-space speed diagrams and their on-disk matrix format.

Axis convention: rows are space cells ordered upstream to downstream,
columns are time cells ordered earlier to later.  Speeds are km/h and
live in ``[SPEED_MIN, SPEED_MAX]``.  Missing cells are stored as NaN.

File format: one CSV row per space cell, no header, ``NaN`` for a
missing cell.  An optional sidecar ``<name>.meta`` holds ``key=value``
lines for ``time_span_s``, ``space_span_m``, ``rows`` and ``cols``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_MIN = 0.0
SPEED_MAX = 100.0


class GridError(ValueError):
    """Malformed or out-of-contract diagram data."""


@dataclass(frozen=True)
class CellSize:
    """Spatiotemporal extent of one cell (seconds x meters)."""

    time_span: float
    space_span: float

    def __post_init__(self):
        if not (self.time_span > 0 and self.space_span > 0):
            raise GridError(f"cell spans must be positive, got {self}")

    def halved(self) -> "CellSize":
        return CellSize(self.time_span / 2, self.space_span / 2)

    def doubled(self) -> "CellSize":
        return CellSize(self.time_span * 2, self.space_span * 2)

    def scaled(self, factor: float) -> "CellSize":
        return CellSize(self.time_span * factor, self.space_span * factor)


class TSDiagram:
    """Immutable 2-D speed matrix with cell-size metadata.

    Parameters
    ----------
    values : array_like
      2-D speeds, rows = space, cols = time.  NaN marks a missing cell.
    cell_size : CellSize
      Extent of one cell.
    mask : array_like of bool, optional
      Extra missing-cell mask; masked positions are set to NaN.
    check_range : bool
      Reject non-missing values outside [0, 100].  Disabled only for raw
      unclamped model output.
    """

    __slots__ = ("_values", "cell_size")

    def __init__(self, values, cell_size: CellSize | None = None, mask=None,
                 *, check_range: bool = True):
        v = np.array(values, dtype=np.float64, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise GridError(f"diagram must be a non-empty 2-D array, got shape {v.shape}")
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if m.shape != v.shape:
                raise GridError(f"mask shape {m.shape} != values shape {v.shape}")
            v[m] = np.nan
        if np.isinf(v).any():
            raise GridError("diagram contains infinite values")
        if check_range:
            finite = v[~np.isnan(v)]
            if finite.size and (finite.min() < SPEED_MIN or finite.max() > SPEED_MAX):
                raise GridError(
                    f"speeds must lie in [{SPEED_MIN}, {SPEED_MAX}], "
                    f"got range [{finite.min()}, {finite.max()}]")
        v.setflags(write=False)
        self._values = v
        self.cell_size = cell_size if cell_size is not None else CellSize(1.0, 1.0)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self._values)

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def rows(self) -> int:
        return self._values.shape[0]

    @property
    def cols(self) -> int:
        return self._values.shape[1]

    @property
    def size(self) -> int:
        return self._values.size

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self._values).any())

    def require_dense(self, what: str = "diagram") -> None:
        if self.has_missing:
            raise GridError(f"{what} has {int(self.mask.sum())} missing cells")

    def __eq__(self, other):
        if not isinstance(other, TSDiagram):
            return NotImplemented
        return (self.cell_size == other.cell_size
                and np.array_equal(self._values, other._values, equal_nan=True))

    def __repr__(self):
        return (f"TSDiagram(shape={self.shape}, cell_size={self.cell_size}, "
                f"missing={int(self.mask.sum())})")


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def load_matrix(path) -> TSDiagram:
    """Read a diagram from the CSV matrix format (plus ``.meta`` sidecar if present)."""
    path = Path(path)
    text = path.read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise GridError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise GridError(f"{path}: empty matrix file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise GridError(f"{path}: rows have unequal lengths {sorted(widths)}")

    cell = CellSize(1.0, 1.0)
    meta = _meta_path(path)
    if meta.exists():
        kv = read_meta(meta)
        cell = CellSize(float(kv.get("time_span_s", 1.0)), float(kv.get("space_span_m", 1.0)))
        for key, n in (("rows", len(rows)), ("cols", len(rows[0]))):
            if key in kv and int(kv[key]) != n:
                raise GridError(f"{meta}: {key}={kv[key]} but matrix has {n}")
    return TSDiagram(np.array(rows), cell)


def read_meta(path) -> dict[str, str]:
    kv = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise GridError(f"{path}: expected key=value, got {line!r}")
        kv[key.strip()] = value.strip()
    return kv


def format_value(v: float) -> str:
    return "NaN" if np.isnan(v) else repr(float(v))


def save_matrix(d: TSDiagram, path) -> None:
    """Write ``d`` and its ``.meta`` sidecar.  Values round-trip exactly."""
    path = Path(path)
    lines = [",".join(format_value(v) for v in row) for row in d.values]
    path.write_text("\n".join(lines) + "\n")
    _meta_path(path).write_text(
        f"time_span_s={d.cell_size.time_span!r}\n"
        f"space_span_m={d.cell_size.space_span!r}\n"
        f"rows={d.rows}\ncols={d.cols}\n")


def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    r, c = values.shape
    return values.reshape(r // factor, factor, c // factor, factor).mean(axis=(1, 3))


def downsample_mean(d: TSDiagram, factor: int = 2) -> TSDiagram:
    """Average non-overlapping ``factor x factor`` blocks (default 2x2)."""
    if d.rows % factor or d.cols % factor:
        raise GridError(f"shape {d.shape} not divisible by {factor}")
    d.require_dense()
    return TSDiagram(block_mean(d.values, factor), d.cell_size.scaled(factor))


def upsample_nearest(d: TSDiagram, factor: int = 2) -> TSDiagram:
    """Replicate every cell into a ``factor x factor`` block."""
    v = np.repeat(np.repeat(d.values, factor, axis=0), factor, axis=1)
    return TSDiagram(v, d.cell_size.scaled(1.0 / factor), check_range=False)
