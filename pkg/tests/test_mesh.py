import numpy as np
import pytest
import scipy.sparse as sp

from condextremes.errors import DataError
from condextremes.mesh import (
    Mesh1D,
    Mesh2D,
    build_mesh_2d,
    condition_observation_matrix,
    observation_matrix,
    read_matrix_csv,
    replicate_observation_matrix,
    write_matrix_csv,
)

SQUARE = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]])


def test_square_mesh_vertex_count():
    # 5x5 inner grid plus 2 extension steps per side: 9x9 vertices
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    assert mesh.n_vertices == 81
    assert len(mesh.triangles) == 128


def test_mesh_deterministic():
    a = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    b = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_sites_inside_inner_boundary():
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    lo = mesh.inner_boundary.min(axis=0)
    hi = mesh.inner_boundary.max(axis=0)
    assert np.all(SQUARE >= lo - 1e-12) and np.all(SQUARE <= hi + 1e-12)


def test_degenerate_sites_error():
    with pytest.raises(DataError, match="degenerate|at least 3"):
        build_mesh_2d(np.array([[1.0, 1.0]] * 4), 1.0, 2.0, 1.0)


def test_production_scale_mesh_is_low_rank():
    # a 400 x 500 km study area at the default resolutions keeps the
    # latent dimension in the hundreds, far below thousands of sites
    rng = np.random.RandomState(0)
    sites = rng.uniform([0, 0], [400, 500], size=(200, 2))
    mesh = build_mesh_2d(sites, 25.0, 50.0, 100.0)
    assert 100 < mesh.n_vertices < 1000


def test_observation_matrix_vertex_hit():
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    target = mesh.vertices[40]
    A = observation_matrix(mesh, target[None, :])
    row = A.toarray()[0]
    assert row[40] == pytest.approx(1.0)
    assert A.nnz == 1


def test_observation_matrix_centroid_thirds():
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    tri = mesh.triangles[5]
    centroid = mesh.vertices[tri].mean(axis=0)
    A = observation_matrix(mesh, centroid[None, :])
    assert np.allclose(np.sort(A.toarray()[0][tri]), 1 / 3, atol=1e-12)


def test_observation_rows_sum_to_one_and_affine_exact():
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    rng = np.random.RandomState(1)
    pts = rng.uniform(0, 100, size=(40, 2))
    A = observation_matrix(mesh, pts)
    assert np.allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0)
    assert np.asarray((A != 0).sum(axis=1)).max() <= 3
    f = lambda p: 1.7 * p[:, 0] - 0.3 * p[:, 1] + 2.0
    assert np.max(np.abs(A @ f(mesh.vertices) - f(pts))) < 1e-12


def test_point_outside_mesh_named_in_error():
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    with pytest.raises(DataError, match="9999"):
        observation_matrix(mesh, np.array([[9999.0, 0.0]]))


def test_mesh_json_roundtrip(tmp_path):
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    path = tmp_path / "mesh.json"
    mesh.to_json(path)
    back = Mesh2D.from_json(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    A1 = observation_matrix(mesh, SQUARE)
    A2 = observation_matrix(back, SQUARE)
    assert (A1 != A2).nnz == 0


def test_mesh1d_dirichlet_zero_row():
    mesh = Mesh1D.regular(10.0, interior_knots=14)
    row = mesh.basis_matrix(np.array([0.0]))
    assert row.nnz == 0
    assert mesh.n_basis == 16  # 17 clamped quadratic functions minus one


def test_mesh1d_partition_of_unity_unconstrained():
    mesh = Mesh1D(np.linspace(0, 5, 8), degree=2, dirichlet_left=False)
    x = np.linspace(0, 5, 50)
    B = mesh.basis_matrix(x)
    assert np.allclose(np.asarray(B.sum(axis=1)).ravel(), 1.0)
    assert np.asarray((B != 0).sum(axis=1)).max() <= 3


def test_mesh1d_point_outside_errors():
    mesh = Mesh1D.regular(10.0)
    with pytest.raises(DataError):
        mesh.basis_matrix(np.array([11.0]))


def test_mesh1d_fem_matrices_psd():
    mesh = Mesh1D.regular(10.0, interior_knots=6)
    c, G = mesh.fem_matrices()
    assert np.all(c > 0)
    evals = np.linalg.eigvalsh(G.toarray())
    assert evals.min() > -1e-10


def test_condition_matrix_basic_surgery():
    A_S = sp.identity(2, format="csr")
    A_s0 = sp.csr_matrix(np.array([[1.0, 0.0]]))
    out = condition_observation_matrix(A_S, A_s0, 1).toarray()
    assert np.allclose(out, [[0.0, 0.0], [-1.0, 1.0]])


def test_condition_matrix_zeroes_matching_row():
    rng = np.random.RandomState(2)
    A = sp.csr_matrix(rng.rand(4, 5))
    s0 = A[2]
    out = condition_observation_matrix(A, s0, 1)
    assert abs(out[2]).max() == 0.0


def test_condition_matrix_space_time_blocks():
    A_S = sp.identity(2, format="csr")
    A_s0 = sp.csr_matrix(np.array([[1.0, 0.0]]))
    out = condition_observation_matrix(A_S, A_s0, 2).toarray()
    expect = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [-1.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ])
    assert np.allclose(out, expect)


def test_condition_matrix_column_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        condition_observation_matrix(
            sp.identity(2, format="csr"), sp.csr_matrix((1, 3)), 1
        )


def test_conditioned_row_annihilates_any_latent():
    rng = np.random.RandomState(3)
    mesh = build_mesh_2d(SQUARE, 25.0, 50.0, 100.0)
    A = observation_matrix(mesh, SQUARE)
    A0 = observation_matrix(mesh, SQUARE[1][None, :])
    for ell in (1, 3):
        out = condition_observation_matrix(A, A0, ell)
        w = rng.randn(out.shape[1])
        vals = out @ w
        assert abs(vals[1]) < 1e-12  # conditioning row at the first step


def test_replicate_blocks():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 3.0]]))
    assert (replicate_observation_matrix(A, 1) != A).nnz == 0
    R = replicate_observation_matrix(A, 3)
    assert R.shape == (6, 6)
    assert R.nnz == 3 * A.nnz
    assert np.allclose(R.toarray()[2:4, 2:4], A.toarray())


def test_matrix_csv_roundtrip(tmp_path):
    A = sp.csr_matrix(np.array([[0.0, 1.5], [2.5, 0.0]]))
    path = tmp_path / "a.csv"
    write_matrix_csv(A, path)
    back = read_matrix_csv(path, shape=A.shape)
    assert (back != A).nnz == 0
