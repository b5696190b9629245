"""Gauss-Markov random field layer.

Sparse precision matrices, sparse Cholesky factorization with a
fill-reducing ordering, log-densities, sampling, and linear-constraint
conditioning by kriging.  The numeric kernels live in _chol_kernels and
are JIT-compiled by default (see _accel).
"""

import hashlib
import heapq

import numpy as np
import scipy.sparse as sp

from . import _chol_kernels as _ck
from .errors import NumericalError
from .rng import rng_from_seed

__all__ = [
    "SparsePrecision",
    "CholeskyFactor",
    "factorize",
    "sample_gmrf",
    "condition_by_kriging",
    "ar1_precision",
    "kronecker",
    "logpdf",
    "min_degree_order",
]


class SparsePrecision:
    """Symmetric positive definite sparse matrix in CSC form.

    Symmetry is checked at construction; explicit zeros are dropped.
    Positive definiteness is only established by a successful
    factorization.  Instances are immutable and safe to share.
    """

    def __init__(self, matrix):
        m = sp.csc_matrix(matrix)
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"precision matrix must be square, got {m.shape}")
        asym = abs(m - m.T)
        if asym.nnz and asym.max() > 1e-10 * max(1.0, abs(m).max()):
            raise ValueError("precision matrix is not symmetric")
        self.m = m

    @property
    def dim(self):
        return self.m.shape[0]

    @property
    def nnz(self):
        return self.m.nnz

    @classmethod
    def identity(cls, n, scale=1.0):
        return cls(sp.identity(n, format="csc") * scale)

    @classmethod
    def from_triplets(cls, dim, rows, cols, values):
        """Build from lower-triangle triplets; the upper half is mirrored."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if np.any(cols > rows):
            raise ValueError("triplets must lie in the lower triangle")
        low = sp.coo_matrix((values, (rows, cols)), shape=(dim, dim)).tocsc()
        off = sp.tril(low, k=-1)
        return cls(low + off.T)

    def to_triplets(self):
        """Lower-triangle (row, col, value) triplets."""
        low = sp.tril(self.m).tocoo()
        return low.row.astype(np.int64), low.col.astype(np.int64), low.data

    def to_csv(self, path):
        r, c, v = self.to_triplets()
        with open(path, "w") as fh:
            fh.write("row,col,value\n")
            for i in range(len(r)):
                fh.write(f"{r[i]},{c[i]},{float(v[i])!r}\n")

    @classmethod
    def from_csv(cls, path, dim=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        rows = data[:, 0].astype(np.int64)
        cols = data[:, 1].astype(np.int64)
        if dim is None:
            dim = int(max(rows.max(), cols.max())) + 1
        return cls.from_triplets(dim, rows, cols, data[:, 2])

    def __repr__(self):
        return f"SparsePrecision(dim={self.dim}, nnz={self.nnz})"


def _as_csc(Q):
    if isinstance(Q, SparsePrecision):
        return Q.m
    m = sp.csc_matrix(Q)
    m.sort_indices()
    return m


def min_degree_order(Q):
    """Minimum-degree fill-reducing permutation.

    Exact greedy minimum degree with lazy heap invalidation and
    deterministic index tie-breaking.  Fill edges are stored explicitly,
    which is fine at the matrix sizes this package targets.
    """
    m = _as_csc(Q)
    n = m.shape[0]
    indptr, indices = m.indptr, m.indices
    adj = [set() for _ in range(n)]
    for j in range(n):
        col = indices[indptr[j]:indptr[j + 1]]
        s = adj[j]
        for i in col:
            if i != j:
                s.add(int(i))
    heap = [(len(adj[v]), v) for v in range(n)]
    heapq.heapify(heap)
    perm = np.empty(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    k = 0
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d != len(adj[v]):
            continue
        perm[k] = v
        k += 1
        done[v] = True
        nbrs = adj[v]
        for u in nbrs:
            adj[u].discard(v)
        for u in nbrs:
            s = adj[u]
            s |= nbrs
            s.discard(u)
            heapq.heappush(heap, (len(s), u))
        adj[v] = set()
    return perm


# symbolic analyses keyed by (ordering tag, pattern digest); small LRU
_SYMBOLIC_CACHE = {}
_SYMBOLIC_CACHE_MAX = 32


def _pattern_key(m, ordering):
    h = hashlib.blake2b(digest_size=16)
    h.update(np.int64(m.shape[0]).tobytes())
    h.update(m.indptr.astype(np.int64).tobytes())
    h.update(m.indices.astype(np.int64).tobytes())
    if isinstance(ordering, str):
        h.update(ordering.encode())
    else:
        h.update(np.asarray(ordering, dtype=np.int64).tobytes())
    return h.digest()


class CholeskyFactor:
    """Sparse Cholesky factor with permutation: Q = P^T L L^T P.

    ``perm`` holds the fill-reducing ordering, i.e. the factored matrix is
    Q[perm][:, perm].  Immutable; solves and sampling do not mutate state.
    """

    def __init__(self, n, perm, Lp, Li, Lx):
        self.n = n
        self.perm = perm
        self._iperm = np.empty(n, dtype=np.int64)
        self._iperm[perm] = np.arange(n, dtype=np.int64)
        self.Lp = Lp
        self.Li = Li
        self.Lx = Lx
        self.logdet = 2.0 * float(np.sum(np.log(Lx[Lp[:-1]])))

    @property
    def factor_nnz(self):
        return int(self.Lp[-1])

    def solve(self, b):
        """Solve Q x = b for a vector or a (n, nrhs) matrix."""
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            y = b[self.perm].copy()
            _ck.solve_lower(self.Lp, self.Li, self.Lx, y)
            _ck.solve_upper(self.Lp, self.Li, self.Lx, y)
            return y[self._iperm]
        y = np.ascontiguousarray(b[self.perm])
        _ck.solve_lower_many(self.Lp, self.Li, self.Lx, y)
        _ck.solve_upper_many(self.Lp, self.Li, self.Lx, y)
        return y[self._iperm]

    def half_solve_t(self, z):
        """Return P^T L^{-T} z; maps iid standard normals to GMRF draws."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            y = z.copy()
            _ck.solve_upper(self.Lp, self.Li, self.Lx, y)
            return y[self._iperm]
        y = np.ascontiguousarray(z)
        _ck.solve_upper_many(self.Lp, self.Li, self.Lx, y)
        return y[self._iperm]


def factorize(Q, ordering="amd"):
    """Factorize a symmetric positive definite sparse matrix.

    Parameters
    ----------
    Q : SparsePrecision or scipy sparse matrix
    ordering : "amd", "natural", or an explicit permutation array

    Returns
    -------
    CholeskyFactor

    Raises
    ------
    NumericalError
        If a non-positive pivot is hit (matrix not positive definite);
        the message carries the pivot index.
    """
    m = _as_csc(Q)
    n = m.shape[0]
    key = _pattern_key(m, ordering)
    cached = _SYMBOLIC_CACHE.get(key)
    if cached is None:
        if isinstance(ordering, str):
            if ordering == "natural":
                perm = np.arange(n, dtype=np.int64)
            elif ordering == "amd":
                perm = min_degree_order(m)
            else:
                raise ValueError(f"unknown ordering {ordering!r}")
        else:
            perm = np.asarray(ordering, dtype=np.int64)
            if perm.shape != (n,):
                raise ValueError("permutation length does not match matrix")
        pm = sp.csr_matrix(
            (np.ones(n), (np.arange(n), perm)), shape=(n, n)
        )
        mp = (pm @ m @ pm.T).tocsc()
        mp.sort_indices()
        parent = _ck.etree(n, mp.indptr.astype(np.int64), mp.indices.astype(np.int64))
        Lp = _ck.symbolic(n, mp.indptr.astype(np.int64), mp.indices.astype(np.int64), parent)
        if len(_SYMBOLIC_CACHE) >= _SYMBOLIC_CACHE_MAX:
            _SYMBOLIC_CACHE.pop(next(iter(_SYMBOLIC_CACHE)))
        _SYMBOLIC_CACHE[key] = (perm, pm, parent, Lp)
    else:
        perm, pm, parent, Lp = cached
    mp = (pm @ m @ pm.T).tocsc()
    mp.sort_indices()
    Li, Lx, bad = _ck.numeric(
        n,
        mp.indptr.astype(np.int64),
        mp.indices.astype(np.int64),
        mp.data.astype(np.float64),
        parent,
        Lp,
    )
    if bad >= 0:
        raise NumericalError(
            f"matrix is not positive definite: non-positive pivot at index "
            f"{int(perm[bad])} (elimination step {bad} of {n})"
        )
    return CholeskyFactor(n, perm, Lp, Li, Lx)


def sample_gmrf(factor, count, seed):
    """Draw ``count`` samples from N(0, Q^{-1}) given a factor of Q.

    Returns an array of shape (count, n), one draw per row.  Draws are
    w = P^T L^{-T} z with z iid standard normal; a fixed seed gives
    bitwise-identical output.
    """
    rng = rng_from_seed(seed)
    z = rng.standard_normal((factor.n, count))
    return factor.half_solve_t(z).T


def condition_by_kriging(w, factor, B, e):
    """Impose the linear constraint B w = e on Gaussian draws.

    Applies w - Q^{-1} B^T (B Q^{-1} B^T)^{-1} (B w - e), the conditional
    distribution transform.  ``w`` may be a single vector or a matrix of
    draws with one draw per row; the same correction geometry is reused
    across rows.
    """
    w = np.asarray(w, dtype=np.float64)
    B = sp.csr_matrix(B)
    k = B.shape[0]
    e = np.broadcast_to(np.asarray(e, dtype=np.float64), (k,))
    Y = factor.solve(np.asarray(B.T.todense(), dtype=np.float64))  # (n, k)
    S = np.asarray((B @ Y), dtype=np.float64)
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as err:
        raise NumericalError(
            "constraint system B Q^-1 B^T is rank deficient"
        ) from err
    single = w.ndim == 1
    if single:
        w = w[None, :]
    resid = (B @ w.T) - e[:, None]  # (k, draws)
    coef = np.linalg.solve(c.T, np.linalg.solve(c, resid))
    out = w - (Y @ coef).T
    return out[0] if single else out


def ar1_precision(ell, rho):
    """Precision of a stationary AR(1) of length ell with unit variance.

    Tridiagonal with corner entries 1, interior 1 + rho^2, off-diagonal
    -rho, all divided by 1 - rho^2.  A single time step is just a standard
    normal, so ell = 1 returns the 1x1 identity.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if not abs(rho) < 1:
        raise ValueError(f"AR(1) coefficient must satisfy |rho| < 1, got {rho}")
    if ell == 1:
        return SparsePrecision(sp.identity(1, format="csc"))
    diag = np.full(ell, 1.0 + rho * rho)
    diag[0] = diag[-1] = 1.0
    off = np.full(ell - 1, -rho)
    q = sp.diags([off, diag, off], [-1, 0, 1], format="csc") / (1.0 - rho * rho)
    return SparsePrecision(q)


def kronecker(Qa, Qb):
    """Kronecker product of two sparse precisions (e.g. time x space)."""
    prod = sp.kron(_as_csc(Qa), _as_csc(Qb), format="csc")
    return SparsePrecision(prod)


def logpdf(Q, w, factor=None):
    """Gaussian log-density log N(w; 0, Q^{-1}).

    A precomputed factor of Q may be passed to avoid refactorizing.
    """
    m = _as_csc(Q)
    if factor is None:
        factor = factorize(m)
    w = np.asarray(w, dtype=np.float64)
    quad = float(w @ (m @ w))
    n = m.shape[0]
    return 0.5 * factor.logdet - 0.5 * n * np.log(2.0 * np.pi) - 0.5 * quad
