"""Loss landscapes over hand-built digit distributions (figure data)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import losses as L
from .costs import build_cost
from .numvocab import digit_vocabulary

LABEL = 4
NEAR, FAR = 3, 5
GRID_HEADER = ["p3", "p5", "loss_ce", "loss_ntl_mse", "loss_ntl_was"]
CURVE_HEADER = ["q", "t", "distance", "loss_ce", "loss_ntl_mse", "loss_ntl_was"]


def _losses_from_probs(probs: np.ndarray, label: int = LABEL):
    """CE, NTL-MSE and NTL-WAS rows for digit distributions with a fixed label."""
    vocab = digit_vocabulary()
    vals = vocab.number_values()
    cost = build_cost(vocab).matrix
    n = len(probs)
    y = np.full(n, vals[label])
    with np.errstate(divide="ignore"):
        ce = -np.log(probs[:, label])
    mse, _ = L.lp_from_probs(probs, y, vals, "mse")
    was, _ = L.was_from_probs(probs, np.full(n, label), cost)
    return ce, mse, was


def figure_1b(qs=(0.5, 0.8, 0.95), label: int = LABEL) -> list[dict]:
    """Mass ``q`` on one incorrect digit ``t``, the rest spread evenly over the other nine."""
    rows = []
    for q in qs:
        ts = [t for t in range(10) if t != label]
        probs = np.full((len(ts), 10), (1.0 - q) / 9.0)
        probs[np.arange(len(ts)), ts] = q
        ce, mse, was = _losses_from_probs(probs, label)
        for k, t in enumerate(ts):
            rows.append({"q": q, "t": t, "distance": abs(t - label),
                         "loss_ce": ce[k], "loss_ntl_mse": mse[k], "loss_ntl_was": was[k]})
    return rows


def figure_2(resolution: int = 101) -> list[dict]:
    """Grid over (p3, p5) with the remaining mass on the ground-truth digit 4."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    m = resolution - 1
    cells = [(i, j) for i in range(resolution) for j in range(resolution) if i + j <= m]
    pts = [(i / m, j / m) for i, j in cells]
    probs = np.zeros((len(pts), 10))
    for k, (i, j) in enumerate(cells):
        probs[k, NEAR] = i / m
        probs[k, FAR] = j / m
        probs[k, LABEL] = (m - i - j) / m
    ce, mse, was = _losses_from_probs(probs)
    return [{"p3": a, "p5": b, "loss_ce": ce[k], "loss_ntl_mse": mse[k], "loss_ntl_was": was[k]}
            for k, (a, b) in enumerate(pts)]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(x)
    x = float(x)
    return "inf" if math.isinf(x) else repr(x)


def write_csv(rows: list[dict], header: list[str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def read_grid_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def scan_grid(rows: list[dict], tol: float = 0.0) -> list[str]:
    """Check the expected zero sets of the grid; returns a list of violations."""
    problems = []
    for r in rows:
        a, b = r["p3"], r["p5"]
        mse, was = r["loss_ntl_mse"], r["loss_ntl_was"]
        if a == b and abs(mse) > tol:
            problems.append(f"ntl_mse({a}, {b}) = {mse}, expected 0 on the diagonal")
        if a != b and not mse > 0:
            problems.append(f"ntl_mse({a}, {b}) = {mse}, expected > 0 off the diagonal")
        origin = a == 0 and b == 0
        if origin and abs(was) > tol:
            problems.append(f"ntl_was(0, 0) = {was}, expected 0")
        if not origin and not was > 0:
            problems.append(f"ntl_was({a}, {b}) = {was}, expected > 0")
    return problems


# ------------------------------------------------------------------- SVG

_RAMP = ((0.0, (49, 54, 149)), (0.5, (255, 255, 191)), (1.0, (165, 0, 38)))


def _color(t: float) -> str:
    if not math.isfinite(t):
        return "#808080"
    t = min(1.0, max(0.0, t))
    for (t0, c0), (t1, c1) in zip(_RAMP, _RAMP[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            r, g, b = (round(a + f * (b_ - a)) for a, b_ in zip(c0, c1))
            return f"#{r:02x}{g:02x}{b:02x}"
    return "#{:02x}{:02x}{:02x}".format(*_RAMP[-1][1])


def heatmap_svg(rows: list[dict], column: str, resolution: int, cell: int = 4) -> str:
    """Rectangle-grid heatmap of one loss column, p3 on x and p5 on y (upwards)."""
    vals = np.array([r[column] for r in rows], dtype=float)
    finite = vals[np.isfinite(vals)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    size = resolution * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
             f'viewBox="0 0 {size} {size + 20}">',
             f'<text x="2" y="14" font-family="monospace" font-size="12">{column} '
             f'[{lo:.3g}, {hi:.3g}]</text>']
    for r, v in zip(rows, vals):
        i = round(r["p3"] * (resolution - 1))
        j = round(r["p5"] * (resolution - 1))
        x, y = i * cell, 20 + (resolution - 1 - j) * cell
        parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_color((v - lo) / span)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
