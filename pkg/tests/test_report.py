import math

import numpy as np
import pytest

from qcprobe.report import NonFiniteError, emit_csv, emit_svg_plot, format_cell, read_csv


def test_emit_csv_two_rows(tmp_path):
    path = emit_csv([{"a": 1, "b": 0.1}, {"a": 2, "b": True}], tmp_path / "t.csv")
    raw = path.read_bytes()
    assert raw.count(b"\n") == 3 and b"\r" not in raw
    assert raw.decode().splitlines() == ["a,b", "1,0.10000000000000001", "2,true"]


def test_float_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = np.concatenate([rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200),
                           [0.0, -0.0, 5e-324, 1.7976931348623157e308, 1 / 3]])
    path = emit_csv([{"v": float(v)} for v in vals], tmp_path / "f.csv")
    back = np.array([float(r["v"]) for r in read_csv(path)])
    assert back.tobytes() == vals.tobytes()


def test_tuple_rows_need_columns(tmp_path):
    emit_csv([(1, "x")], tmp_path / "a.csv", columns=["n", "s"])
    with pytest.raises(ValueError):
        emit_csv([(1, "x")], tmp_path / "b.csv")


def test_empty_table_is_refused(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "e.csv")
    assert not (tmp_path / "e.csv").exists()


def test_format_cell():
    assert format_cell(np.int64(3)) == "3"
    assert format_cell(np.float32(0.5)) == "0.5"
    assert format_cell(None) == ""
    assert format_cell(math.inf) == "inf"


@pytest.mark.parametrize("kind", ["line", "scatter", "panel-grid"])
def test_svg_kinds(tmp_path, kind):
    series = [{"y": np.sin(np.arange(20) / 3), "label": "a"}, {"y": np.cos(np.arange(20) / 3), "label": "b"}]
    path = emit_svg_plot(series, kind, tmp_path / f"{kind}.svg", title="t", spans=[(5, 9)])
    text = path.read_text()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert 'class="unpunished"' in text


def test_svg_is_deterministic(tmp_path):
    series = [{"x": [1, 2, 3], "y": [1.0, 4.0, 9.0], "yerr": [0.1, 0.2, 0.3], "label": "sq"}]
    a = emit_svg_plot(series, "line", tmp_path / "a.svg").read_bytes()
    b = emit_svg_plot(series, "line", tmp_path / "b.svg").read_bytes()
    assert a == b


def test_svg_single_point(tmp_path):
    for kind in ("line", "scatter", "panel-grid"):
        text = emit_svg_plot([{"y": [2.0]}], kind, tmp_path / f"{kind}.svg").read_text()
        assert "<circle" in text


def test_svg_non_finite_lists_indices(tmp_path):
    with pytest.raises(NonFiniteError) as err:
        emit_svg_plot([{"y": [1.0, 2.0]}, {"y": [0.0, np.nan, np.inf]}], "line", tmp_path / "n.svg")
    assert err.value.where == ["series 1 y[1]", "series 1 y[2]"]
    assert not (tmp_path / "n.svg").exists()


def test_svg_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        emit_svg_plot([{"y": [1.0]}], "pie", tmp_path / "p.svg")
    with pytest.raises(ValueError):
        emit_svg_plot([], "line", tmp_path / "p.svg")
    with pytest.raises(ValueError):
        emit_svg_plot([{"x": [1, 2], "y": [1.0]}], "line", tmp_path / "p.svg")
