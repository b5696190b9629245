"""Meshes and observation matrices.

One-dimensional knot sequences carry the B-spline bases used for the
distance-profile curves; two-dimensional triangulations carry the latent
spatial field.  Observation matrices map latent coefficients to observed
sites, and the conditioning-site surgery turns the observation matrix of a
field into that of the field minus its value at the conditioning site.

All constructions here are deterministic functions of their inputs.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline

from .errors import DataError

__all__ = [
    "Mesh1D",
    "Mesh2D",
    "build_mesh_2d",
    "observation_matrix",
    "condition_observation_matrix",
    "replicate_observation_matrix",
    "write_matrix_csv",
    "read_matrix_csv",
]


@dataclass(frozen=True)
class Mesh1D:
    """Knot sequence for a spline basis over distance from the origin.

    Parameters
    ----------
    knots : array
        Strictly increasing breakpoints, knots[0] == 0.
    degree : int
        Spline order; 2 (quadratic) for the distance-profile priors,
        1 (linear) for plain finite elements.
    dirichlet_left : bool
        If True, basis functions that are nonzero at distance 0 are
        dropped, pinning every represented curve to 0 at the origin.
    """

    knots: np.ndarray
    degree: int = 2
    dirichlet_left: bool = True

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        if k.ndim != 1 or len(k) < 2 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must be a strictly increasing vector")
        if k[0] != 0.0:
            raise ValueError("knots[0] must be 0")
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        object.__setattr__(self, "knots", k)

    @classmethod
    def regular(cls, max_dist, interior_knots=14, degree=2, dirichlet_left=True):
        """Equidistant knots on [0, max_dist] with the given interior count."""
        knots = np.linspace(0.0, float(max_dist), interior_knots + 2)
        return cls(knots, degree=degree, dirichlet_left=dirichlet_left)

    @property
    def knot_vector(self):
        """Clamped (open) knot vector for the B-spline basis."""
        p = self.degree
        return np.concatenate(
            [np.full(p, self.knots[0]), self.knots, np.full(p, self.knots[-1])]
        )

    @property
    def n_basis_full(self):
        return len(self.knots) + self.degree - 1

    @property
    def n_basis(self):
        """Number of basis functions after the Dirichlet constraint."""
        return self.n_basis_full - len(self._dropped())

    def _dropped(self):
        if not self.dirichlet_left:
            return np.array([], dtype=int)
        vals = self._design_full(np.array([0.0])).toarray()[0]
        return np.nonzero(np.abs(vals) > 1e-12)[0]

    def _design_full(self, x):
        return BSpline.design_matrix(x, self.knot_vector, self.degree).tocsc()

    def _design_deriv_full(self, x):
        # d/dx B_{j,p} = p/(t[j+p]-t[j]) B_{j,p-1} - p/(t[j+p+1]-t[j+1]) B_{j+1,p-1}
        p = self.degree
        t = self.knot_vector
        lower = BSpline.design_matrix(x, t, p - 1).tocsc()
        nb = self.n_basis_full
        left = np.zeros(nb)
        right = np.zeros(nb)
        for j in range(nb):
            d1 = t[j + p] - t[j]
            d2 = t[j + p + 1] - t[j + 1]
            left[j] = p / d1 if d1 > 0 else 0.0
            right[j] = p / d2 if d2 > 0 else 0.0
        nlow = lower.shape[1]
        take = sp.eye(nlow, nb, format="csc")
        shift = sp.eye(nlow, nb, k=-1, format="csc")
        return lower @ (take @ sp.diags(left) - shift @ sp.diags(right))

    def basis_matrix(self, x, deriv=False):
        """Design matrix of the (possibly constrained) basis at points x."""
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.knots[0] - 1e-12) or np.any(x > self.knots[-1] + 1e-12):
            bad = x[(x < self.knots[0] - 1e-12) | (x > self.knots[-1] + 1e-12)]
            raise DataError(
                f"point {bad[0]!r} outside the 1D mesh range "
                f"[{self.knots[0]}, {self.knots[-1]}]"
            )
        x = np.clip(x, self.knots[0], self.knots[-1])
        m = self._design_deriv_full(x) if deriv else self._design_full(x)
        dropped = self._dropped()
        if len(dropped):
            keep = np.setdiff1d(np.arange(self.n_basis_full), dropped)
            m = m[:, keep]
        m = sp.csr_matrix(m)
        m.eliminate_zeros()
        return m

    def fem_matrices(self):
        """Lumped mass vector and stiffness matrix of the basis.

        Assembled by Gauss-Legendre quadrature per knot span, exact for
        the polynomial integrands involved.
        """
        gx, gw = np.polynomial.legendre.leggauss(self.degree + 1)
        spans_lo = self.knots[:-1]
        spans_hi = self.knots[1:]
        half = 0.5 * (spans_hi - spans_lo)
        mid = 0.5 * (spans_hi + spans_lo)
        pts = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        wts = (half[:, None] * gw[None, :]).ravel()
        val = self.basis_matrix(pts)
        der = self.basis_matrix(pts, deriv=True)
        W = sp.diags(wts)
        consistent = (val.T @ W @ val).tocsc()
        c_lumped = np.asarray(consistent.sum(axis=1)).ravel()
        G = (der.T @ W @ der).tocsc()
        G.eliminate_zeros()
        return c_lumped, G


@dataclass(frozen=True)
class Mesh2D:
    """Conforming triangulation: vertex coordinates and index triples.

    ``inner_boundary`` delimits the high-resolution zone that must contain
    every observation site; ``outer_boundary`` delimits the extension zone
    that pushes boundary effects away from the study area.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    inner_boundary: np.ndarray = field(default=None)
    outer_boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (m, 2) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be an (ntri, 3) array")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= len(v):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def fem_matrices(self):
        """Lumped mass vector and stiffness matrix for linear elements."""
        v, t = self.vertices, self.triangles
        p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        d21, d31 = p2 - p1, p3 - p1
        area = 0.5 * np.abs(d21[:, 0] * d31[:, 1] - d21[:, 1] * d31[:, 0])
        if np.any(area <= 0):
            raise ValueError("triangulation contains degenerate triangles")
        n = self.n_vertices
        c = np.zeros(n)
        for col in range(3):
            np.add.at(c, t[:, col], area / 3.0)
        edges = [p3 - p2, p1 - p3, p2 - p1]
        rows, cols, vals = [], [], []
        for a in range(3):
            for b in range(3):
                g = (edges[a] * edges[b]).sum(axis=1) / (4.0 * area)
                rows.append(t[:, a])
                cols.append(t[:, b])
                vals.append(g)
        G = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsc()
        G.eliminate_zeros()
        return c, G

    def to_json(self, path=None):
        doc = {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
        }
        if self.inner_boundary is not None:
            doc["inner_boundary"] = np.asarray(self.inner_boundary).tolist()
        if self.outer_boundary is not None:
            doc["outer_boundary"] = np.asarray(self.outer_boundary).tolist()
        text = json.dumps(doc, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, source):
        if isinstance(source, str) and source.lstrip().startswith("{"):
            doc = json.loads(source)
        else:
            with open(source) as fh:
                doc = json.load(fh)
        return cls(
            np.asarray(doc["vertices"], dtype=np.float64),
            np.asarray(doc["triangles"], dtype=np.int64),
            inner_boundary=np.asarray(doc["inner_boundary"], dtype=np.float64)
            if "inner_boundary" in doc
            else None,
            outer_boundary=np.asarray(doc["outer_boundary"], dtype=np.float64)
            if "outer_boundary" in doc
            else None,
        )


def _graded_axis(lo, hi, inner_edge, outer_edge, extension):
    n_inner = max(1, int(np.ceil((hi - lo) / inner_edge)))
    inner = np.linspace(lo, hi, n_inner + 1)
    n_ext = max(1, int(np.ceil(extension / outer_edge)))
    left = lo - outer_edge * np.arange(n_ext, 0, -1)
    right = hi + outer_edge * np.arange(1, n_ext + 1)
    return np.concatenate([left, inner, right]), n_ext


def build_mesh_2d(sites, inner_edge, outer_edge, extension):
    """Two-resolution tensor-grid triangulation of the site bounding box.

    The bounding box of the sites is triangulated at ``inner_edge``
    resolution and surrounded by a ring of width at least ``extension`` at
    ``outer_edge`` resolution.  The tensor construction is conforming at
    the interface by design.  Triangles covering the inner region are
    listed first so that points on the interface resolve to inner
    triangles under the first-match rule used by observation_matrix.
    """
    sites = np.asarray(sites, dtype=np.float64)
    if sites.ndim != 2 or sites.shape[1] != 2 or len(sites) < 3:
        raise DataError("need at least 3 sites with (x, y) coordinates")
    if not (0 < inner_edge < outer_edge) or extension <= 0:
        raise ValueError("require 0 < inner_edge < outer_edge and extension > 0")
    xmin, ymin = sites.min(axis=0)
    xmax, ymax = sites.max(axis=0)
    if xmax - xmin <= 0 or ymax - ymin <= 0:
        raise DataError("degenerate site set: zero-area bounding box")
    xs, next_x = _graded_axis(xmin, xmax, inner_edge, outer_edge, extension)
    ys, next_y = _graded_axis(ymin, ymax, inner_edge, outer_edge, extension)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def cell_tris(ix, iy):
        v00 = iy * nx + ix
        v10 = v00 + 1
        v01 = v00 + nx
        v11 = v01 + 1
        return [(v00, v10, v11), (v00, v11, v01)]

    inner_cells, outer_cells = [], []
    for iy in range(ny - 1):
        for ix in range(nx - 1):
            is_inner = (
                next_x <= ix < nx - 1 - next_x and next_y <= iy < ny - 1 - next_y
            )
            (inner_cells if is_inner else outer_cells).extend(cell_tris(ix, iy))
    triangles = np.array(inner_cells + outer_cells, dtype=np.int64)
    inner_boundary = np.array(
        [[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]
    )
    outer_boundary = np.array(
        [[xs[0], ys[0]], [xs[-1], ys[0]], [xs[-1], ys[-1]], [xs[0], ys[-1]]]
    )
    return Mesh2D(vertices, triangles, inner_boundary, outer_boundary)


def _barycentric_rows(mesh, points):
    pts = np.asarray(points, dtype=np.float64)
    n_pts = len(pts)
    tri_of = np.full(n_pts, -1, dtype=np.int64)
    weights = np.zeros((n_pts, 3))
    pending = np.arange(n_pts)
    v, tris = mesh.vertices, mesh.triangles
    tol = 1e-9
    for it, tri in enumerate(tris):
        if len(pending) == 0:
            break
        p1, p2, p3 = v[tri[0]], v[tri[1]], v[tri[2]]
        det = (p2[1] - p3[1]) * (p1[0] - p3[0]) + (p3[0] - p2[0]) * (p1[1] - p3[1])
        q = pts[pending]
        l1 = ((p2[1] - p3[1]) * (q[:, 0] - p3[0]) + (p3[0] - p2[0]) * (q[:, 1] - p3[1])) / det
        l2 = ((p3[1] - p1[1]) * (q[:, 0] - p3[0]) + (p1[0] - p3[0]) * (q[:, 1] - p3[1])) / det
        l3 = 1.0 - l1 - l2
        inside = (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)
        hit = pending[inside]
        tri_of[hit] = it
        weights[hit, 0] = l1[inside]
        weights[hit, 1] = l2[inside]
        weights[hit, 2] = l3[inside]
        pending = pending[~inside]
    if len(pending):
        bad = pts[pending[0]]
        raise DataError(f"point ({bad[0]}, {bad[1]}) lies outside the mesh")
    return tri_of, weights


def observation_matrix(mesh, points):
    """Sparse interpolation matrix from latent coefficients to points.

    2D meshes give barycentric weights of the containing triangle (rows
    sum to 1, at most 3 nonzeros); 1D meshes give B-spline basis values
    (at most degree + 1 nonzeros, or an all-zero row at distance 0 under
    the Dirichlet constraint).
    """
    if isinstance(mesh, Mesh1D):
        return mesh.basis_matrix(np.asarray(points, dtype=np.float64).ravel())
    tri_of, weights = _barycentric_rows(mesh, points)
    n_pts = len(tri_of)
    cols = mesh.triangles[tri_of].ravel()
    rows = np.repeat(np.arange(n_pts), 3)
    A = sp.coo_matrix(
        (weights.ravel(), (rows, cols)), shape=(n_pts, mesh.n_vertices)
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def condition_observation_matrix(A_S, A_s0, ell=1):
    """Observation matrix of the field minus its conditioning-site value.

    For a single time step this is A_S with the conditioning-site row
    subtracted from every row.  For ell > 1 time steps the spatial matrix
    is placed block-diagonally and the conditioning row, anchored at the
    first time step, is subtracted from all d*ell rows.  The row
    corresponding to the conditioning site at the first step comes out
    identically zero, which encodes the pinned residual.
    """
    A_S = sp.csr_matrix(A_S)
    A_s0 = sp.csr_matrix(A_s0)
    if A_s0.shape[0] != 1:
        raise ValueError("A_s0 must be a single row")
    if A_s0.shape[1] != A_S.shape[1]:
        raise ValueError(
            f"column mismatch: A_S has {A_S.shape[1]}, A_s0 has {A_s0.shape[1]}"
        )
    if ell < 1:
        raise ValueError("ell must be >= 1")
    d, m = A_S.shape
    big = sp.block_diag([A_S] * ell, format="csr") if ell > 1 else A_S
    row = sp.hstack(
        [A_s0] + [sp.csr_matrix((1, m * (ell - 1)))], format="csr"
    ) if ell > 1 else A_s0
    rep = sp.kron(np.ones((d * ell, 1)), row, format="csr")
    out = (big - rep).tocsr()
    out.eliminate_zeros()
    return out


def replicate_observation_matrix(A_episode, n):
    """Block-diagonal stack of n identical episode observation matrices."""
    if n < 1:
        raise ValueError("n must be >= 1")
    A_episode = sp.csr_matrix(A_episode)
    if n == 1:
        return A_episode
    return sp.kron(sp.identity(n, format="csr"), A_episode, format="csr")


def write_matrix_csv(A, path):
    """Write a sparse matrix as (row, col, value) triplets."""
    coo = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{float(v)!r}\n")


def read_matrix_csv(path, shape=None):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    rows = data[:, 0].astype(np.int64)
    cols = data[:, 1].astype(np.int64)
    if shape is None:
        shape = (rows.max() + 1, cols.max() + 1)
    return sp.coo_matrix((data[:, 2], (rows, cols)), shape=shape).tocsr()
