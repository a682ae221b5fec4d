"""Small dense linear algebra with explicit pivot thresholds.

Matrices here are tiny (the size of a configuration space), so clarity wins
over speed.  Thresholds are relative: an entry counts as zero when it falls
below ``pivot_tol * max(1, max|A|)``.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularMatrix


def _threshold(a: np.ndarray, pivot_tol: float) -> float:
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    return pivot_tol * max(scale, 1.0)


def complete_pivot(a, pivot_tol: float = 1e-9) -> tuple[int, list[int], list[int]]:
    """Gaussian elimination with complete pivoting.

    Returns ``(rank, rows, cols)`` where ``rows``/``cols`` list the pivot
    rows/columns in elimination order followed by the remaining indices in
    ascending order.  Ties go to the first maximal entry in row-major order.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    m, n = a.shape
    tol = _threshold(a, pivot_tol)
    w = a.tolist()  # plain floats: these matrices are tiny
    rows = list(range(m))
    cols = list(range(n))
    rank = 0
    for k in range(min(m, n)):
        best, bi, bj = -1.0, k, k
        for i in range(k, m):
            ri = w[i]
            for j in range(k, n):
                v = abs(ri[j])
                if v > best:
                    best, bi, bj = v, i, j
        if best <= tol:
            break
        if bi != k:
            w[k], w[bi] = w[bi], w[k]
            rows[k], rows[bi] = rows[bi], rows[k]
        if bj != k:
            for r in w:
                r[k], r[bj] = r[bj], r[k]
            cols[k], cols[bj] = cols[bj], cols[k]
        pk = w[k]
        piv = pk[k]
        for i in range(k + 1, m):
            ri = w[i]
            f = ri[k] / piv
            if f != 0.0:
                for j in range(k, n):
                    ri[j] -= f * pk[j]
        rank += 1
    rows = rows[:rank] + sorted(rows[rank:])
    cols = cols[:rank] + sorted(cols[rank:])
    return rank, rows, cols


def rank(a, pivot_tol: float = 1e-9) -> int:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    return complete_pivot(a, pivot_tol)[0]


def lu_solve(a, b, pivot_tol: float = 1e-9) -> np.ndarray:
    """Solve ``a x = b`` by LU with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides.  Raises
    :class:`SingularMatrix` when a pivot falls below the threshold.
    """
    a = np.array(a, dtype=float, copy=True)
    x = np.array(b, dtype=float, copy=True)
    n = a.shape[0]
    if n == 0:
        return x
    tol = _threshold(a, pivot_tol)
    if n <= _SMALL:
        return _lu_solve_small(a.tolist(), x, tol)
    for k in range(n):
        i = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[i, k]) <= tol:
            raise SingularMatrix(f"pivot {abs(a[i, k]):.3e} below threshold {tol:.3e} at column {k}")
        if i != k:
            a[[k, i]] = a[[i, k]]
            x[[k, i]] = x[[i, k]]
        f = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(f, a[k, k:])
        if x.ndim == 1:
            x[k + 1:] -= f * x[k]
        else:
            x[k + 1:] -= np.outer(f, x[k])
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


_SMALL = 8


def _lu_solve_small(a: list, x: np.ndarray, tol: float) -> np.ndarray:
    # Same algorithm as the array version, on Python floats.
    n = len(a)
    vec = x.ndim == 1
    rhs = [[v] for v in x.tolist()] if vec else x.tolist()
    for k in range(n):
        i = max(range(k, n), key=lambda r: abs(a[r][k]))
        if abs(a[i][k]) <= tol:
            raise SingularMatrix(f"pivot {abs(a[i][k]):.3e} below threshold {tol:.3e} at column {k}")
        if i != k:
            a[k], a[i] = a[i], a[k]
            rhs[k], rhs[i] = rhs[i], rhs[k]
        ak, bk = a[k], rhs[k]
        for r in range(k + 1, n):
            ar = a[r]
            f = ar[k] / ak[k]
            if f != 0.0:
                for j in range(k, n):
                    ar[j] -= f * ak[j]
                br = rhs[r]
                for j in range(len(br)):
                    br[j] -= f * bk[j]
    for k in range(n - 1, -1, -1):
        ak, bk = a[k], rhs[k]
        for j in range(len(bk)):
            s = bk[j]
            for c in range(k + 1, n):
                s -= ak[c] * rhs[c][j]
            bk[j] = s / ak[k]
    out = np.array(rhs, dtype=float).reshape(x.shape)
    return out


def inverse(a, pivot_tol: float = 1e-9) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return lu_solve(a, np.eye(a.shape[0]), pivot_tol)
