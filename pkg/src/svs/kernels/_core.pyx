# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner-loop kernels.

Same contracts as ``_reference``; that module is the readable statement of
each algorithm. These versions exist because the tracker calls them per
frame per camera and the Python interpreter overhead dominates at that
granularity.
"""
import numpy as np

from svs.errors import NumericalFailure

cdef double INF = float("inf")


def iou_matrix(boxes_a, boxes_b):
    a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out

    cdef double[:, ::1] A = a
    cdef double[:, ::1] B = b
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, j
    cdef double ax0, ay0, ax1, ay1, area_a
    cdef double bx0, by0, bx1, by1, area_b
    cdef double ix, iy, inter, union

    for i in range(n):
        ax0 = A[i, 0]
        ay0 = A[i, 1]
        ax1 = ax0 + A[i, 2]
        ay1 = ay0 + A[i, 3]
        area_a = A[i, 2] * A[i, 3]
        for j in range(m):
            bx0 = B[j, 0]
            by0 = B[j, 1]
            bx1 = bx0 + B[j, 2]
            by1 = by0 + B[j, 3]
            ix = min(ax1, bx1) - max(ax0, bx0)
            if ix <= 0:
                continue
            iy = min(ay1, by1) - max(ay0, by0)
            if iy <= 0:
                continue
            inter = ix * iy
            area_b = B[j, 2] * B[j, 3]
            union = area_a + area_b - inter
            if union > 0:
                O[i, j] = inter / union
    return out


def solve_assignment(cost, double threshold):
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be 2-d, got shape {c.shape}")
    cdef Py_ssize_t rows = c.shape[0]
    cdef Py_ssize_t cols = c.shape[1]
    if rows == 0 or cols == 0:
        return [], list(range(rows)), list(range(cols))

    cdef double[:, ::1] C = c
    cdef Py_ssize_t i, j
    cdef double lo = INF
    cdef double hi = -INF
    cdef bint any_feasible = False
    for i in range(rows):
        for j in range(cols):
            if C[i, j] <= threshold:
                any_feasible = True
                if C[i, j] < lo:
                    lo = C[i, j]
                if C[i, j] > hi:
                    hi = C[i, j]
    if not any_feasible:
        return [], list(range(rows)), list(range(cols))

    cdef Py_ssize_t n = rows if rows > cols else cols
    cdef double big = (hi - lo + 1.0) * (n + 1)
    a = np.full((n, n), big, dtype=np.float64)
    cdef double[:, ::1] A = a
    for i in range(rows):
        for j in range(cols):
            if C[i, j] <= threshold:
                A[i, j] = C[i, j] - lo

    # Potentials formulation of the Hungarian algorithm, O(n^3).
    u_arr = np.zeros(n + 1, dtype=np.float64)
    v_arr = np.zeros(n + 1, dtype=np.float64)
    minv_arr = np.zeros(n + 1, dtype=np.float64)
    p_arr = np.zeros(n + 1, dtype=np.intp)
    way_arr = np.zeros(n + 1, dtype=np.intp)
    used_arr = np.zeros(n + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] minv = minv_arr
    cdef Py_ssize_t[::1] p = p_arr
    cdef Py_ssize_t[::1] way = way_arr
    cdef unsigned char[::1] used = used_arr

    cdef Py_ssize_t irow, j0, j1, i0
    cdef double delta, cur

    for irow in range(1, n + 1):
        p[0] = irow
        j0 = 0
        for j in range(n + 1):
            minv[j] = INF
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = A[i0 - 1, j - 1] - u[i0] - v[j]
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

    col_of_row_arr = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] col_of_row = col_of_row_arr
    for j in range(1, n + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1

    matches = []
    for i in range(rows):
        j = col_of_row[i]
        if j < cols and C[i, j] <= threshold:
            matches.append((i, j))
    matched_rows = {ij[0] for ij in matches}
    matched_cols = {ij[1] for ij in matches}
    unmatched_rows = [i for i in range(rows) if i not in matched_rows]
    unmatched_cols = [j for j in range(cols) if j not in matched_cols]
    return matches, unmatched_rows, unmatched_cols


def kalman_predict(mean, cov, trans, noise):
    mean_c = np.ascontiguousarray(mean, dtype=np.float64)
    cov_c = np.ascontiguousarray(cov, dtype=np.float64)
    trans_c = np.ascontiguousarray(trans, dtype=np.float64)
    noise_c = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t s = mean_c.shape[0]

    mean2 = np.zeros(s, dtype=np.float64)
    tmp = np.zeros((s, s), dtype=np.float64)
    cov2 = np.zeros((s, s), dtype=np.float64)

    cdef double[::1] x = mean_c
    cdef double[:, ::1] P = cov_c
    cdef double[:, ::1] F = trans_c
    cdef double[:, ::1] Q = noise_c
    cdef double[::1] x2 = mean2
    cdef double[:, ::1] T = tmp
    cdef double[:, ::1] P2 = cov2
    cdef Py_ssize_t i, j, k
    cdef double acc

    for i in range(s):
        acc = 0.0
        for k in range(s):
            acc += F[i, k] * x[k]
        x2[i] = acc

    for i in range(s):            # T = F P
        for j in range(s):
            acc = 0.0
            for k in range(s):
                acc += F[i, k] * P[k, j]
            T[i, j] = acc
    for i in range(s):            # P2 = T F^T + Q, symmetrized
        for j in range(s):
            acc = 0.0
            for k in range(s):
                acc += T[i, k] * F[j, k]
            P2[i, j] = acc + Q[i, j]
    for i in range(s):
        for j in range(i + 1, s):
            acc = (P2[i, j] + P2[j, i]) * 0.5
            P2[i, j] = acc
            P2[j, i] = acc
    return mean2, cov2


def kalman_update(mean, cov, z, noise):
    mean_c = np.ascontiguousarray(mean, dtype=np.float64)
    cov_c = np.ascontiguousarray(cov, dtype=np.float64)
    z_c = np.ascontiguousarray(z, dtype=np.float64)
    noise_c = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t s = mean_c.shape[0]
    cdef Py_ssize_t m = z_c.shape[0]

    cdef double[::1] x = mean_c
    cdef double[:, ::1] P = cov_c
    cdef double[::1] zv = z_c
    cdef double[:, ::1] R = noise_c

    chol = np.zeros((m, m), dtype=np.float64)
    cdef double[:, ::1] L = chol
    cdef Py_ssize_t i, j, k
    cdef double acc

    # Cholesky of S = P[:m, :m] + R; fail -> covariance left PSD cone.
    for i in range(m):
        for j in range(i + 1):
            acc = P[i, j] + R[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0 or acc != acc:
                    raise NumericalFailure(
                        "innovation covariance not positive definite"
                    )
                L[i, i] = acc ** 0.5
            else:
                L[i, j] = acc / L[j, j]

    # W = L^-1 B^T where B = P[:, :m]  (forward substitution, row by row)
    w = np.zeros((m, s), dtype=np.float64)
    cdef double[:, ::1] W = w
    for i in range(m):
        for k in range(s):
            acc = P[k, i]                 # B^T[i, k] = P[k, i]
            for j in range(i):
                acc -= L[i, j] * W[j, k]
            W[i, k] = acc / L[i, i]

    # K^T = L^-T W  (back substitution)
    kt = np.zeros((m, s), dtype=np.float64)
    cdef double[:, ::1] KT = kt
    for i in range(m - 1, -1, -1):
        for k in range(s):
            acc = W[i, k]
            for j in range(i + 1, m):
                acc -= L[j, i] * KT[j, k]
            KT[i, k] = acc / L[i, i]

    mean2 = np.zeros(s, dtype=np.float64)
    cdef double[::1] x2 = mean2
    innov = np.zeros(m, dtype=np.float64)
    cdef double[::1] y = innov
    for i in range(m):
        y[i] = zv[i] - x[i]
    for k in range(s):
        acc = x[k]
        for i in range(m):
            acc += KT[i, k] * y[i]
        x2[k] = acc

    # P' = sym(P) - W^T W; the Gram form keeps the trace non-increasing
    # exactly in floating point.
    cov2 = np.zeros((s, s), dtype=np.float64)
    cdef double[:, ::1] P2 = cov2
    cdef double g
    for i in range(s):
        for j in range(i, s):
            g = 0.0
            for k in range(m):
                g += W[k, i] * W[k, j]
            acc = (P[i, j] + P[j, i]) * 0.5 - g
            P2[i, j] = acc
            P2[j, i] = acc
    return mean2, cov2
