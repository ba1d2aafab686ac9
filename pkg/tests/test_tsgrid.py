import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import block_means_loops
from tsrefine.tsgrid import (CellSize, GridError, TSDiagram, downsample_mean, load_matrix,
                             save_matrix, upsample_nearest)

CELL = CellSize(60.0, 100.0)


def test_cell_size_rejects_non_positive():
    with pytest.raises(GridError):
        CellSize(0.0, 10.0)
    with pytest.raises(GridError):
        CellSize(10.0, -1.0)


def test_cell_size_halving():
    assert CellSize(300, 1000).halved() == CellSize(150, 500)


def test_diagram_range_check():
    with pytest.raises(GridError):
        TSDiagram([[101.0]], CELL)
    with pytest.raises(GridError):
        TSDiagram([[-0.1]], CELL)
    TSDiagram([[101.0]], CELL, check_range=False)


def test_diagram_is_read_only():
    d = TSDiagram([[1.0, 2.0]], CELL)
    with pytest.raises(ValueError):
        d.values[0, 0] = 5


def test_load_simple(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("50,60\n70,80\n")
    d = load_matrix(p)
    assert d.shape == (2, 2)
    assert not d.has_missing
    np.testing.assert_array_equal(d.values, [[50, 60], [70, 80]])


@pytest.mark.parametrize("token", ["NaN", "nan", "NAN"])
def test_load_missing_token(tmp_path, token):
    p = tmp_path / "m.csv"
    p.write_text(f"{token},30\n")
    d = load_matrix(p)
    assert d.shape == (1, 2)
    assert d.mask.tolist() == [[True, False]]


def test_load_ragged_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(GridError, match="unequal"):
        load_matrix(p)


def test_load_empty(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("\n")
    with pytest.raises(GridError, match="empty"):
        load_matrix(p)


def test_load_out_of_range(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("50,120\n")
    with pytest.raises(GridError):
        load_matrix(p)


def test_save_writes_nan_and_meta(tmp_path):
    d = TSDiagram([[1.5, 2.0], [3.0, 4.0]], CellSize(20, 40), mask=[[False, True], [False, False]])
    p = tmp_path / "d.csv"
    save_matrix(d, p)
    assert p.read_text().splitlines()[0] == "1.5,NaN"
    meta = (tmp_path / "d.meta").read_text()
    assert "time_span_s=20" in meta and "space_span_m=40" in meta and "rows=2" in meta
    back = load_matrix(p)
    assert back == d


def test_save_unwritable(tmp_path):
    d = TSDiagram([[1.0]], CELL)
    with pytest.raises(OSError):
        save_matrix(d, tmp_path / "no" / "such" / "dir.csv")


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(0, 100, allow_nan=False)),
       st.data())
def test_round_trip(tmp_path_factory, values, data):
    mask = data.draw(arrays(bool, values.shape))
    d = TSDiagram(values, CELL, mask=mask)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    save_matrix(d, p)
    back = load_matrix(p)
    np.testing.assert_array_equal(back.mask, d.mask)
    np.testing.assert_allclose(back.values[~d.mask], d.values[~d.mask], atol=1e-6)
    assert back.cell_size == d.cell_size


def test_downsample_examples():
    assert downsample_mean(TSDiagram([[50, 50], [50, 50]], CELL)).values.tolist() == [[50.0]]
    assert downsample_mean(TSDiagram([[0, 100], [0, 100]], CELL)).values.tolist() == [[50.0]]


def test_downsample_matches_block_loops(rng):
    v = rng.uniform(0, 100, (4, 4))
    d = downsample_mean(TSDiagram(v, CELL))
    np.testing.assert_allclose(d.values, block_means_loops(v), atol=1e-12)
    assert d.cell_size == CellSize(120.0, 200.0)


def test_downsample_errors():
    with pytest.raises(GridError):
        downsample_mean(TSDiagram(np.zeros((3, 4)), CELL))
    with pytest.raises(GridError):
        downsample_mean(TSDiagram(np.zeros((2, 2)), CELL, mask=[[True, False], [False, False]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5).map(lambda n: 2 * n),
                                    st.integers(1, 5).map(lambda n: 2 * n)),
              elements=st.floats(0, 100, allow_nan=False)))
def test_downsample_properties(values):
    d = downsample_mean(TSDiagram(values, CELL))
    assert d.values.mean() == pytest.approx(values.mean(), abs=1e-9)
    assert d.values.min() >= values.min() - 1e-12
    assert d.values.max() <= values.max() + 1e-12


def test_upsample_nearest():
    d = upsample_nearest(TSDiagram([[1.0, 2.0]], CELL))
    assert d.values.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]
    assert d.cell_size == CELL.halved()
