"""Sparse Cholesky and triangular-solve kernels.

Up-looking factorization of a symmetric positive definite matrix held in
CSC form with sorted indices.  Row patterns are found by elimination-tree
reachability, so both the symbolic and numeric passes run in time
proportional to the work they produce.  Columns of the output factor L
store the diagonal entry first, followed by subdiagonal rows in increasing
order, which the solve kernels rely on.

Every function here is a numba target (see _accel); keep the bodies free
of Python objects.
"""

import numpy as np

from ._accel import njit


@njit(cache=True)
def etree(n, Ap, Ai):
    """Elimination tree of a symmetric matrix from its CSC pattern."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True)
def _ereach(k, Ap, Ai, parent, visit, stack, path):
    """Pattern of row k of L, returned as stack[top:n] in topological order."""
    n = visit.shape[0]
    top = n
    visit[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i >= k:
            continue
        nlen = 0
        while visit[i] != k:
            path[nlen] = i
            nlen += 1
            visit[i] = k
            i = parent[i]
        while nlen > 0:
            nlen -= 1
            top -= 1
            stack[top] = path[nlen]
    return top


@njit(cache=True)
def symbolic(n, Ap, Ai, parent):
    """Column pointers of L (diagonal included) via one reachability sweep."""
    counts = np.ones(n, dtype=np.int64)
    visit = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Ap, Ai, parent, visit, stack, path)
        for it in range(top, n):
            counts[stack[it]] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    return Lp


@njit(cache=True)
def numeric(n, Ap, Ai, Ax, parent, Lp):
    """Numeric up-looking factorization; returns (Li, Lx, bad_pivot).

    bad_pivot is -1 on success, otherwise the index of the first
    non-positive pivot encountered.
    """
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz, dtype=np.float64)
    fill = np.empty(n, dtype=np.int64)
    x = np.zeros(n, dtype=np.float64)
    visit = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    for k in range(n):
        fill[k] = Lp[k]
        top = _ereach(k, Ap, Ai, parent, visit, stack, path)
        d = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                x[i] = Ax[p]
            elif i == k:
                d = Ax[p]
        for it in range(top, n):
            i = stack[it]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, fill[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = fill[i]
            fill[i] += 1
            Li[p] = k
            Lx[p] = lki
        if d <= 0.0 or not np.isfinite(d):
            return Li, Lx, k
        p = fill[k]
        fill[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return Li, Lx, -1


@njit(cache=True)
def solve_lower(Lp, Li, Lx, b):
    """In-place solve of L y = b (columns store the diagonal first)."""
    n = b.shape[0]
    for j in range(n):
        yj = b[j] / Lx[Lp[j]]
        b[j] = yj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            b[Li[p]] -= Lx[p] * yj
    return b


@njit(cache=True)
def solve_upper(Lp, Li, Lx, b):
    """In-place solve of L^T x = b."""
    n = b.shape[0]
    for j in range(n - 1, -1, -1):
        t = b[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            t -= Lx[p] * b[Li[p]]
        b[j] = t / Lx[Lp[j]]
    return b


@njit(cache=True)
def solve_lower_many(Lp, Li, Lx, B):
    """Solve L Y = B in place for a (n, nrhs) block of right-hand sides."""
    n, nrhs = B.shape
    for j in range(n):
        dinv = 1.0 / Lx[Lp[j]]
        for r in range(nrhs):
            B[j, r] *= dinv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for r in range(nrhs):
                B[i, r] -= v * B[j, r]
    return B


@njit(cache=True)
def solve_upper_many(Lp, Li, Lx, B):
    """Solve L^T X = B in place for a (n, nrhs) block of right-hand sides."""
    n, nrhs = B.shape
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for r in range(nrhs):
                B[j, r] -= v * B[i, r]
        dinv = 1.0 / Lx[Lp[j]]
        for r in range(nrhs):
            B[j, r] *= dinv
    return B
