import numpy as np
import pytest
from scipy import stats

from condextremes.gmrf import ar1_precision, kronecker
from condextremes.inference import HyperParams
from condextremes.model import (
    ModelSpec,
    alpha_one_offset,
    assemble,
    parametric_alpha,
    spline_prior_precision,
)
from condextremes.mesh import Mesh1D

from conftest import synthetic_setup


def test_parametric_alpha_values():
    assert parametric_alpha(0.0, 2.0, 1.3) == 1.0
    assert parametric_alpha(2.0, 2.0, 1.0) == pytest.approx(np.exp(-1.0))
    # degenerate exponent: constant exp(-1) away from the origin
    assert parametric_alpha(7.0, 2.0, 0.0) == pytest.approx(np.exp(-1.0))
    assert parametric_alpha(0.0, 2.0, 0.0) == 1.0


def test_parametric_alpha_validation():
    with pytest.raises(ValueError):
        parametric_alpha(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        parametric_alpha(1.0, 1.0, 3.0)


def test_model_spec_variants_match_table():
    assert ModelSpec.variant(0).alpha_form == "one"
    assert not ModelSpec.variant(0).gamma
    assert ModelSpec.variant(3).gamma
    assert ModelSpec.variant(4).beta_mode == "estimated"
    assert ModelSpec.variant(6).residual == "none"
    assert ModelSpec.variant(5).hyper_names == ["sigma", "sigma_z", "rho_z", "beta"]
    assert ModelSpec.variant(6).hyper_names == ["sigma"]


def test_model_spec_rejects_contentless():
    with pytest.raises(ValueError):
        ModelSpec(alpha_form="one", gamma=False, residual="none")


def test_alpha_one_offset_shape_and_values():
    _, _, _, es = synthetic_setup(side=3, n=4, seed=0)
    off = alpha_one_offset(es)
    assert off.shape == (4 * 9,)
    assert np.allclose(off, np.repeat(es.x, 9))


def test_spline_prior_dimensions():
    mesh = Mesh1D.regular(10.0, interior_knots=14)
    q1 = spline_prior_precision(mesh, 5.0, 0.5)
    assert q1.dim == mesh.n_basis
    q3 = spline_prior_precision(mesh, 5.0, 0.5, ell=3, rho=0.5)
    assert q3.dim == 3 * mesh.n_basis


def test_spline_prior_rho_zero_is_block_diagonal():
    mesh = Mesh1D.regular(10.0, interior_knots=6)
    q1 = spline_prior_precision(mesh, 5.0, 0.5)
    q3 = spline_prior_precision(mesh, 5.0, 0.5, ell=3, rho=0.0)
    dense = q3.m.toarray()
    nb = mesh.n_basis
    for b in range(3):
        blk = dense[b * nb:(b + 1) * nb, b * nb:(b + 1) * nb]
        assert np.allclose(blk, q1.m.toarray())
    assert np.allclose(dense[:nb, nb:2 * nb], 0.0)


def test_spline_prior_matches_kronecker():
    mesh = Mesh1D.regular(8.0, interior_knots=5)
    q = spline_prior_precision(mesh, 4.0, 0.5, ell=4, rho=0.6)
    expect = kronecker(ar1_precision(4, 0.6), spline_prior_precision(mesh, 4.0, 0.5))
    assert np.max(np.abs((q.m - expect.m).toarray())) < 1e-12


def test_model0_predictor_reduces_to_offset_plus_field():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=1)
    model = assemble(ModelSpec.variant(0), es, mesh)
    assert list(model.layout) == ["z"]
    assert np.allclose(model.offset, np.repeat(es.x, 9))


def test_model6_latent_is_profiles_only():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=2)
    model = assemble(ModelSpec.variant(6), es, mesh)
    assert set(model.layout) == {"alpha", "gamma"}
    assert model.latent_dim == 2 * model.mesh1d.n_basis


def test_conditioning_row_pins_alpha_contribution():
    # the row at the conditioning site carries offset x_j and an all-zero
    # design row, so the profile value 1 at distance 0 is exact
    coords, s0, mesh, es = synthetic_setup(side=3, n=2, seed=3)
    model = assemble(ModelSpec.variant(3), es, mesh)
    rows = np.nonzero((model.row_site == s0) & (model.row_time == 0))[0]
    assert model.A[rows].nnz == 0
    assert np.allclose(model.offset[rows], es.x)
    assert np.all(model.like_weight[rows] == 0.0)


def test_nesting_model3_contains_model1():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=4)
    m3 = assemble(ModelSpec.variant(3), es, mesh)
    m1 = assemble(ModelSpec.variant(1), es, mesh)
    a = m3.layout["alpha"]
    z = m3.layout["z"]
    cols = np.r_[np.arange(a[0], a[0] + a[1]),
                 np.arange(z[0], z[0] + z[1] * z[2])]
    assert (m3.A[:, cols] != m1.A).nnz == 0
    assert np.allclose(m3.offset, m1.offset)


def test_nesting_model4_beta_zero_is_model3():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=5)
    m4 = assemble(ModelSpec.variant(4), es, mesh)
    m3 = assemble(ModelSpec.variant(3), es, mesh)
    assert (m4.A != m3.A).nnz == 0
    th4 = HyperParams(sigma2=0.01, sigma_z=1.0, rho_z=3.0, beta=0.0)
    th3 = HyperParams(sigma2=0.01, sigma_z=1.0, rho_z=3.0)
    q4 = m4.prior_precision(th4)
    q3 = m3.prior_precision(th3)
    assert np.max(np.abs((q4.m - q3.m).toarray())) < 1e-12


def test_beta_scaling_scales_episode_blocks():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=6)
    m4 = assemble(ModelSpec.variant(4), es, mesh)
    beta = 0.4
    th = HyperParams(sigma2=0.01, sigma_z=1.0, rho_z=3.0, beta=beta)
    th0 = HyperParams(sigma2=0.01, sigma_z=1.0, rho_z=3.0, beta=0.0)
    q = m4.prior_precision(th).m.toarray()
    q0 = m4.prior_precision(th0).m.toarray()
    start, size, _ = m4.layout["z"]
    for j, xj in enumerate(es.x):
        sl = slice(start + j * size, start + (j + 1) * size)
        assert np.allclose(q[sl, sl], q0[sl, sl] * xj ** (-2.0 * beta))


def test_masked_entries_produce_no_rows():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=7)
    es.mask[1, 2, 0] = False
    es.values[1, 2, 0] = np.nan
    model = assemble(ModelSpec.variant(3), es, mesh)
    assert model.A.shape[0] == 3 * 9 - 1


def test_parametric_alpha_offset():
    coords, s0, mesh, es = synthetic_setup(side=3, n=2, seed=8)
    spec = ModelSpec(alpha_form="parametric", gamma=False, residual="subtract",
                     alpha_lambda=2.0, alpha_kappa=1.0)
    model = assemble(spec, es, mesh)
    dist = es.distances()
    expect = np.concatenate([xj * parametric_alpha(dist, 2.0, 1.0) for xj in es.x])
    assert np.allclose(model.offset, expect)


def test_condition_mechanism_registers_constraints():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=9)
    model = assemble(ModelSpec.variant(3, residual="condition"), es, mesh)
    B, e = model.constraints
    assert B.shape == (3, model.latent_dim)
    start, size, _ = model.layout["z"]
    # each constraint row touches only its own episode block
    for j in range(3):
        cols = B[j].indices
        assert np.all(cols >= start + j * size)
        assert np.all(cols < start + (j + 1) * size)


def test_pooled_field_non_gaussian_residuals_gaussian():
    # pooling across episodes mixes different conditioning values, so the
    # unconditional field fails a normality test the residuals pass
    coords, s0, mesh, es = synthetic_setup(side=5, n=100, seed=3, sigma_z=0.3,
                                           alpha=lambda h: np.exp(-h / 2.0))
    dist = es.distances()
    mid = np.argmin(np.abs(dist - 1.5))
    pooled = es.values[:, mid, 0]
    alpha_mid = np.exp(-dist[mid] / 2.0)
    residual = pooled - es.x * alpha_mid
    assert stats.normaltest(pooled).pvalue < 0.01
    assert stats.normaltest(residual).pvalue > 0.05


def test_ell_mismatch_rejected():
    coords, s0, mesh, es = synthetic_setup(side=3, n=2, seed=11)
    with pytest.raises(ValueError, match="ell"):
        assemble(ModelSpec.variant(3, ell=4), es, mesh)
