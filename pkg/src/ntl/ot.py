"""Exact discrete optimal transport for small supports.

Used as a test oracle for the closed-form losses, so nothing here is
differentiable or fast. Euclidean costs on the real line go through the
sorted-CDF formula; any other cost matrix is solved exactly with the
transportation simplex (MODI potentials, Bland's lowest-index rule).
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .costs import CostSpec

MAX_SUPPORT = 64


class TransportError(ValueError):
    pass


def _check_distribution(p, n: int, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape != (n,):
        raise TransportError(f"{name} has support {p.shape[0]}, cost expects {n}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise TransportError(f"{name} is not a probability vector")
    return p


def wasserstein_1d(p, q, values) -> float:
    """W1 on the real line: integral of |CDF_p - CDF_q| between sorted values."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v = values[order]
    cdf_gap = np.cumsum(np.asarray(p)[order] - np.asarray(q)[order])[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(v)))


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = len(a), len(b)
    x = np.zeros((m, n))
    basis = []
    a, b = a.copy(), b.copy()
    i = j = 0
    while i < m and j < n:
        t = min(a[i], b[j])
        x[i, j] = t
        basis.append((i, j))
        a[i] -= t
        b[j] -= t
        if i == m - 1 and j == n - 1:
            break
        # Move down on a row exhaustion (including ties) so the basis stays a spanning tree.
        if (a[i] <= b[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _potentials(cost: np.ndarray, basis, m: int, n: int):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    rows: dict[int, list[int]] = {}
    cols: dict[int, list[int]] = {}
    for i, j in basis:
        rows.setdefault(i, []).append(j)
        cols.setdefault(j, []).append(i)
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in rows.get(k, []):
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols.get(k, []):
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    return u, v


def _cycle(basis, enter, m: int):
    """Cells of the unique cycle closed by ``enter``, alternating +/- from ``enter``."""
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append((m + j, (i, j)))
        adj.setdefault(m + j, []).append((i, (i, j)))
    start, goal = m + enter[1], enter[0]
    prev: dict[int, tuple[int, tuple[int, int]] | None] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in sorted(adj.get(node, [])):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        path.append(cell)
    # path runs goal(row) -> start(col); enter closes it.
    return [enter] + path


def transport_simplex(p, q, cost, max_iter: int = 10_000):
    """Exact min-cost coupling between ``p`` (rows) and ``q`` (columns)."""
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    x, basis = _northwest_corner(np.asarray(p, float), np.asarray(q, float))
    scale = max(1.0, float(np.abs(cost).max()))
    for _ in range(max_iter):
        u, v = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        basic = np.zeros((m, n), dtype=bool)
        for cell in basis:
            basic[cell] = True
        reduced[basic] = 0.0
        candidates = np.argwhere(reduced < -1e-12 * scale)
        if len(candidates) == 0:
            return float(np.sum(x * cost)), x
        enter = tuple(int(k) for k in candidates[0])  # Bland: lowest index
        cycle = _cycle(basis, enter, m)
        minus = cycle[1::2]
        theta = min(x[c] for c in minus)
        leave = min(c for c in minus if x[c] == theta)
        for k, c in enumerate(cycle):
            x[c] += theta if k % 2 == 0 else -theta
        x[leave] = 0.0
        basis.remove(leave)
        basis.append(enter)
    raise TransportError("transportation simplex did not converge")


def wasserstein_oracle(p, q, cost: CostSpec) -> float:
    """Exact optimum of the discrete transport problem between ``p`` and ``q``."""
    n = len(cost.values)
    if n > MAX_SUPPORT:
        raise TransportError(f"support {n} exceeds {MAX_SUPPORT}")
    p = _check_distribution(p, n, "p")
    q = _check_distribution(q, n, "q")
    if cost.kind == "euclidean":
        return wasserstein_1d(p, q, cost.values)
    return transport_simplex(p, q, cost.matrix)[0]
