"""Training sample sets (3x3 low patch -> s x s high block) and query patches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tsgrid import CellSize, GridError, TSDiagram

# Distance-window shapes as (rows, cols) = (space, time).
SEARCH_SHAPES = {
    "3x3": (3, 3), "3x1": (3, 1), "1x3": (1, 3),
    "5x5": (5, 5), "5x1": (5, 1), "1x5": (1, 5),
}


def parse_shape(name: str) -> tuple[int, int]:
    key = name.lower().replace("×", "x").replace("*", "x")
    try:
        return SEARCH_SHAPES[key]
    except KeyError:
        raise ValueError(f"unknown search shape {name!r}; choose from {sorted(SEARCH_SHAPES)}") from None


def windows(values: np.ndarray, shape: tuple[int, int] = (3, 3)) -> np.ndarray:
    """All ``shape`` windows centred on every cell, edge-replicated.

    Returns an array of shape ``(rows, cols, h*w)`` in reading order.
    """
    h, w = shape
    padded = np.pad(values, ((h // 2, h // 2), (w // 2, w // 2)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, (h, w))
    return view.reshape(values.shape[0], values.shape[1], h * w)


@dataclass(frozen=True)
class SampleSet:
    """Paired training samples.

    ``low`` is ``(n, 9)`` (3x3 reading order), ``high`` is ``(n, s*s)`` with
    the high block in reading order (``s = 2`` for one 4x pass).  ``keys``
    maps every search shape to its ``(n, h*w)`` distance window, taken from
    the same source cell with edge replication.
    """

    low: np.ndarray
    high: np.ndarray
    keys: dict = field(repr=False)
    low_cell: CellSize | None = None

    @property
    def count(self) -> int:
        return self.low.shape[0]

    @property
    def scale(self) -> int:
        return int(round(np.sqrt(self.high.shape[1])))

    def __len__(self):
        return self.count

    def key(self, shape: tuple[int, int]) -> np.ndarray:
        return self.low if shape == (3, 3) else self.keys[shape]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.low[idx], self.high[idx],
                         {s: k[idx] for s, k in self.keys.items()}, self.low_cell)

    @classmethod
    def concat(cls, sets) -> "SampleSet":
        sets = list(sets)
        if not sets:
            raise ValueError("no sample sets to concatenate")
        if len({s.high.shape[1] for s in sets}) != 1:
            raise ValueError("sample sets have different high-block sizes")
        cells = {s.low_cell for s in sets}
        return cls(np.concatenate([s.low for s in sets]),
                   np.concatenate([s.high for s in sets]),
                   {sh: np.concatenate([s.keys[sh] for s in sets]) for sh in sets[0].keys},
                   cells.pop() if len(cells) == 1 else None)


def build_sample_set(low: TSDiagram, high: TSDiagram) -> SampleSet:
    """Crop every interior low cell (stride 1) with its high-resolution block.

    ``high`` must be exactly ``s`` times ``low`` along both axes; ``s = 2``
    is the usual 4x pairing, ``s = 4`` builds single-pass 16x samples.
    """
    low.require_dense("training low diagram")
    high.require_dense("training high diagram")
    if low.rows < 3 or low.cols < 3:
        raise GridError(f"training diagram must be at least 3x3, got {low.shape}")
    s, rem = divmod(high.rows, low.rows)
    if rem or s < 2 or high.shape != (s * low.rows, s * low.cols):
        raise GridError(f"high shape {high.shape} is not an integer multiple >= 2 of low shape {low.shape}")

    r0, r1, c0, c1 = 1, low.rows - 1, 1, low.cols - 1
    lowv = low.values
    low_p = windows(lowv)[r0:r1, c0:c1].reshape(-1, 9)
    blocks = high.values.reshape(low.rows, s, low.cols, s).transpose(0, 2, 1, 3)
    high_p = blocks[r0:r1, c0:c1].reshape(-1, s * s)
    keys = {shape: windows(lowv, shape)[r0:r1, c0:c1].reshape(low_p.shape[0], -1)
            for shape in SEARCH_SHAPES.values() if shape != (3, 3)}
    return SampleSet(np.ascontiguousarray(low_p), np.ascontiguousarray(high_p), keys, low.cell_size)


def query_patch(d: TSDiagram, row: int, col: int) -> np.ndarray:
    """3x3 neighbourhood of ``(row, col)`` in reading order, edge-replicated."""
    if not (0 <= row < d.rows and 0 <= col < d.cols):
        raise IndexError(f"cell ({row}, {col}) outside diagram of shape {d.shape}")
    d.require_dense()
    rr = np.clip(np.arange(row - 1, row + 2), 0, d.rows - 1)
    cc = np.clip(np.arange(col - 1, col + 2), 0, d.cols - 1)
    return d.values[np.ix_(rr, cc)].ravel()
