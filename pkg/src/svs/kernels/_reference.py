"""Pure-Python (numpy) kernels: the fallback and the readable reference.

The compiled extension in ``_core.pyx`` implements the same four functions
with identical semantics; parity between the two is enforced by tests. Keep
this file the authoritative statement of the algorithms.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericalFailure


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise intersection-over-union for (x, y, w, h) boxes.

    Returns an (n, m) float64 matrix; zero where the union is empty.
    """
    a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m), dtype=np.float64)

    ax0, ay0 = a[:, 0], a[:, 1]
    ax1, ay1 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx0, by0 = b[:, 0], b[:, 1]
    bx1, by1 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]

    ix = np.maximum(
        0.0, np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :])
    )
    iy = np.maximum(
        0.0, np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :])
    )
    inter = ix * iy
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    out = np.zeros((n, m), dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def solve_assignment(cost, threshold: float):
    """Optimal gated assignment on a rectangular cost matrix.

    A pair (i, j) is feasible iff cost[i, j] <= threshold. Among all
    matchings the solver maximizes the number of feasible pairs, then
    minimizes their total cost. Returns (matches, unmatched_rows,
    unmatched_cols): matches as (row, col) tuples sorted by row, the
    unmatched index lists ascending.

    Infeasible and padding cells get a sentinel cost larger than any
    possible sum of real costs, so the square Hungarian optimum always
    prefers one more feasible pair over any cost saving.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be 2-d, got shape {c.shape}")
    rows, cols = c.shape
    if rows == 0 or cols == 0:
        return [], list(range(rows)), list(range(cols))

    feasible = c <= threshold
    if not feasible.any():
        return [], list(range(rows)), list(range(cols))

    shift = float(c[feasible].min())
    span = float(c[feasible].max()) - shift
    n = max(rows, cols)
    big = (span + 1.0) * (n + 1)
    a = np.full((n, n), big, dtype=np.float64)
    a[:rows, :cols] = np.where(feasible, c - shift, big)

    col_of_row = _hungarian_square(a)

    matches = []
    for i in range(rows):
        j = col_of_row[i]
        if j < cols and feasible[i, j]:
            matches.append((i, j))
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    unmatched_rows = [i for i in range(rows) if i not in matched_rows]
    unmatched_cols = [j for j in range(cols) if j not in matched_cols]
    return matches, unmatched_rows, unmatched_cols


def _hungarian_square(a: np.ndarray) -> list[int]:
    """Square-matrix Hungarian algorithm, O(n^3) potentials formulation.

    Returns col_of_row. Deterministic: ties fall to the lowest column index
    encountered first in the scan.
    """
    n = a.shape[0]
    inf = np.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)       # p[j] = row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            row = a[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(1, n + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def kalman_predict(mean, cov, trans, noise):
    """One motion-model step: returns (trans @ mean, trans cov trans^T + noise).

    The covariance result is explicitly symmetrized.
    """
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    cov = np.ascontiguousarray(cov, dtype=np.float64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    mean2 = trans @ mean
    cov2 = trans @ cov @ trans.T + noise
    cov2 = (cov2 + cov2.T) * 0.5
    return mean2, cov2


def kalman_update(mean, cov, z, noise):
    """Measurement update with implicit observation matrix [I | 0].

    The first len(z) state components are observed directly. Innovation
    covariance is factored by Cholesky; a factorization failure raises
    NumericalFailure (the covariance is no longer positive definite).

    The covariance decrement is computed as W^T W (W = L^-1 P[:m].T), a
    Gram matrix, so every diagonal decrement is a sum of squares and the
    covariance trace can never grow in the update, exactly, in floating
    point.
    """
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    cov = np.ascontiguousarray(cov, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    m = z.shape[0]

    s = cov[:m, :m] + noise
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"innovation covariance not positive definite: {exc}") from exc

    bt = cov[:, :m].T                       # (m, state)
    w = np.linalg.solve(chol, bt)           # W = L^-1 B^T
    gain = np.linalg.solve(chol.T, w).T     # K = B S^-1, (state, m)

    innovation = z - mean[:m]
    mean2 = mean + gain @ innovation

    gram = w.T @ w
    gram = (gram + gram.T) * 0.5            # diagonal untouched
    cov2 = (cov + cov.T) * 0.5 - gram
    return mean2, cov2
