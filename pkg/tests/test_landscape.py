import numpy as np
import pytest

from ntl import landscape as LS


def test_figure_1b_ce_is_flat_and_was_grows_with_distance():
    rows = LS.figure_1b()
    for q in (0.5, 0.8, 0.95):
        sub = sorted((r for r in rows if r["q"] == q), key=lambda r: r["t"])
        assert len(sub) == 9 and all(r["t"] != 4 for r in sub)
        ce = np.array([r["loss_ce"] for r in sub])
        assert ce.max() - ce.min() <= 1e-12
        assert ce[0] == pytest.approx(-np.log((1 - q) / 9), abs=1e-12)
        by_distance = {}
        for r in sub:
            by_distance.setdefault(r["distance"], set()).add(round(r["loss_ntl_was"], 12))
        ordered = [max(by_distance[d]) for d in sorted(by_distance)]
        lowest = [min(by_distance[d]) for d in sorted(by_distance)]
        assert all(b > a for a, b in zip(ordered, lowest[1:]))


def test_figure_2_values():
    rows = LS.figure_2(11)
    assert len(rows) == 66
    by_point = {(round(r["p3"], 10), round(r["p5"], 10)): r for r in rows}
    mid = by_point[(0.3, 0.3)]
    assert mid["loss_ntl_mse"] == 0.0
    assert mid["loss_ntl_was"] == pytest.approx(0.6, abs=1e-12)
    assert by_point[(0.0, 0.0)]["loss_ntl_was"] == 0.0
    assert by_point[(0.5, 0.0)]["loss_ntl_mse"] == pytest.approx(0.25, abs=1e-12)
    assert by_point[(0.5, 0.5)]["loss_ce"] == np.inf


def test_full_grid_passes_scan(tmp_path):
    rows = LS.figure_2(101)
    assert len(rows) == 101 * 102 // 2
    path = tmp_path / "grid.csv"
    LS.write_csv(rows, LS.GRID_HEADER, path)
    assert LS.scan_grid(LS.read_grid_csv(path)) == []
    diagonal = [r for r in rows if r["p3"] == r["p5"]]
    assert len(diagonal) == 51 and all(r["loss_ntl_mse"] == 0.0 for r in diagonal)


def test_scan_reports_violations():
    rows = [{"p3": 0.2, "p5": 0.2, "loss_ntl_mse": 1e-3, "loss_ntl_was": 0.4},
            {"p3": 0.1, "p5": 0.0, "loss_ntl_mse": 0.01, "loss_ntl_was": 0.0}]
    problems = LS.scan_grid(rows)
    assert len(problems) == 2
    assert "diagonal" in problems[0] and "ntl_was" in problems[1]


def test_heatmap_svg():
    rows = LS.figure_2(5)
    svg = LS.heatmap_svg(rows, "loss_ntl_was", 5)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<rect") == len(rows)
    with pytest.raises(ValueError):
        LS.figure_2(1)
