import numpy as np
import pytest

from condextremes.mesh import Mesh1D, build_mesh_2d
from condextremes.spde import SpdeParams, matern_to_spde, spde_precision, spde_to_matern


def test_parameter_map_analytic_case():
    # nu = 1/2, D = 2, range 2, sd 1: kappa = 1 and tau = 1/sqrt(2 pi)
    p = matern_to_spde(2.0, 1.0, 0.5, 2)
    assert p.kappa == pytest.approx(1.0)
    assert p.tau == pytest.approx(1.0 / np.sqrt(2.0 * np.pi), rel=1e-12)
    assert p.zeta == 1.5


def test_kappa_inverse_in_range():
    a = matern_to_spde(2.0, 1.0, 0.5, 2)
    b = matern_to_spde(4.0, 1.0, 0.5, 2)
    assert b.kappa == pytest.approx(a.kappa / 2.0)


def test_roundtrip_parameter_maps():
    for nu, dim in ((0.5, 2), (1.0, 2), (0.5, 1), (1.5, 1)):
        p = matern_to_spde(3.0, 1.7, nu, dim)
        r, s = spde_to_matern(p)
        assert r == pytest.approx(3.0, rel=1e-12)
        assert s == pytest.approx(1.7, rel=1e-12)


def test_unsupported_exponents_rejected():
    with pytest.raises(ValueError):
        SpdeParams(kappa=1.0, tau=1.0, zeta=1.2, dim=2)
    with pytest.raises(ValueError):
        SpdeParams(kappa=1.0, tau=1.0, zeta=1.5, dim=1)


def test_1d_exponential_correlation():
    rho, sd = 4.0, 1.3
    knots = np.linspace(0, 40, 201)
    mesh = Mesh1D(knots, degree=1, dirichlet_left=False)
    q = spde_precision(mesh, matern_to_spde(rho, sd, 0.5, 1))
    cov = np.linalg.inv(q.m.toarray())
    i0 = 100
    corr = cov[i0] / np.sqrt(cov[i0, i0] * np.diag(cov))
    kappa = 2.0 / rho
    for lag in (0.4, 1.0, 2.0, 4.0):
        j = i0 + int(round(lag / 0.2))
        assert corr[j] == pytest.approx(np.exp(-kappa * lag), abs=0.01)
    # variance tracks the requested sd
    assert cov[i0, i0] == pytest.approx(sd * sd, rel=0.02)


def test_1d_white_noise_limit():
    # with the range far below the knot spacing, neighbors decorrelate
    knots = np.linspace(0, 40, 101)
    mesh = Mesh1D(knots, degree=1, dirichlet_left=False)
    q = spde_precision(mesh, matern_to_spde(0.05, 1.0, 0.5, 1))
    cov = np.linalg.inv(q.m.toarray())
    corr = cov[50] / np.sqrt(cov[50, 50] * np.diag(cov))
    assert abs(corr[52]) < 0.01


def test_sparsity_bounded_by_neighborhood():
    sites = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    mesh = build_mesh_2d(sites, 1.0, 2.5, 3.0)
    q = spde_precision(mesh, matern_to_spde(3.0, 1.0, 0.5, 2))
    per_row = np.diff(q.m.tocsr().indptr)
    # second-order vertex neighborhood on a split tensor grid
    assert per_row.max() <= 25


def test_dirichlet_left_1d_pins_field():
    mesh = Mesh1D.regular(10.0, interior_knots=8)
    q = spde_precision(mesh, matern_to_spde(3.0, 0.5, 1.5, 1))
    cov = np.linalg.inv(q.m.toarray())
    b0 = mesh.basis_matrix(np.array([0.0]))
    assert b0.nnz == 0  # the represented field is exactly 0 at distance 0
    # variance grows away from the pinned boundary
    bmid = mesh.basis_matrix(np.array([5.0])).toarray()[0]
    var_mid = bmid @ cov @ bmid
    assert var_mid > 0.01


def test_2d_halfinteger_matches_exponential_small():
    # small instance here; the fine-mesh acceptance test covers fidelity
    side = np.array([[i * 1.0, j * 1.0] for j in range(9) for i in range(9)])
    mesh = build_mesh_2d(side, 0.5, 1.5, 3.0)
    rho = 4.0
    q = spde_precision(mesh, matern_to_spde(rho, 1.0, 0.5, 2))
    cov = np.linalg.inv(q.m.toarray())
    center = np.argmin(np.linalg.norm(mesh.vertices - [4.0, 4.0], axis=1))
    d = np.linalg.norm(mesh.vertices - mesh.vertices[center], axis=1)
    corr = cov[center] / np.sqrt(cov[center, center] * np.diag(cov))
    kappa = 2.0 / rho
    sel = (d > 1.0) & (d < 4.0)
    err = np.abs(corr[sel] - np.exp(-kappa * d[sel]))
    assert err.max() < 0.08
