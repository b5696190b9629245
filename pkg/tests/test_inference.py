import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import multivariate_normal, norm

from condextremes.errors import NumericalError
from condextremes.gmrf import SparsePrecision
from condextremes.inference import (
    FitConfig,
    HyperParams,
    PriorSpec,
    explore_logposterior,
    fit,
    latent_posterior,
    lognormal_logdensity,
    log_marginal_likelihood,
    pc_prior_logdensity,
    posterior_sample,
    theta_from_vector,
    vector_from_theta,
)
from condextremes.model import ModelSpec, assemble

from conftest import synthetic_setup, tight_priors


class _Bare:
    """Minimal stand-in exposing what the likelihood engine needs."""

    def __init__(self, A, v, q, offset=None, weights=None, constraints=None):
        self.A = sp.csr_matrix(A)
        self.v = np.asarray(v, dtype=np.float64)
        self.offset = np.zeros_like(self.v) if offset is None else offset
        self.like_weight = np.ones_like(self.v) if weights is None else weights
        self.n_like = float(self.like_weight.sum())
        self._q = SparsePrecision(q)
        self._ata = None
        self._atr = None
        self.factor_ordering = np.arange(self.A.shape[1], dtype=np.int64)
        self.constraints = constraints

    def prior_precision(self, theta):
        return self._q


def dense_loglik(bare, sigma2):
    q = bare._q.m.toarray()
    sig = np.linalg.inv(q)
    if bare.constraints is not None:
        B = bare.constraints[0].toarray()
        sb = sig @ B.T
        sig = sig - sb @ np.linalg.solve(B @ sb, sb.T)
    w = bare.like_weight > 0
    A = bare.A.toarray()[w]
    cov = A @ sig @ A.T + sigma2 * np.eye(int(w.sum()))
    return multivariate_normal.logpdf(
        bare.v[w] - bare.offset[w], mean=np.zeros(int(w.sum())), cov=cov
    )


def test_scalar_analytic_marginal_likelihood():
    bare = _Bare(np.array([[1.0]]), np.array([0.0]), sp.identity(1, format="csc"))
    got = log_marginal_likelihood(bare, HyperParams(sigma2=1.0))
    assert got == pytest.approx(-0.5 * np.log(4.0 * np.pi), abs=1e-12)


def test_marginal_likelihood_dense_oracle_random():
    rng = np.random.RandomState(17)
    for _ in range(20):
        m = rng.randint(2, 7)
        d = rng.randint(2, 9)
        a = sp.random(m, m, density=0.6, random_state=rng)
        q = (a @ a.T + sp.identity(m) * m).tocsc()
        A = rng.randn(d, m)
        v = rng.randn(d)
        bare = _Bare(A, v, q)
        s2 = float(rng.uniform(0.05, 2.0))
        got = log_marginal_likelihood(bare, HyperParams(sigma2=s2))
        assert got == pytest.approx(dense_loglik(bare, s2), abs=1e-8)


def test_marginal_likelihood_with_constraint_dense_oracle():
    rng = np.random.RandomState(18)
    m, d = 6, 7
    a = sp.random(m, m, density=0.7, random_state=rng)
    q = (a @ a.T + sp.identity(m) * m).tocsc()
    A = rng.randn(d, m)
    v = rng.randn(d)
    B = sp.csr_matrix(rng.randn(2, m))
    bare = _Bare(A, v, q, constraints=(B, np.zeros(2)))
    got = log_marginal_likelihood(bare, HyperParams(sigma2=0.3))
    assert got == pytest.approx(dense_loglik(bare, 0.3), abs=1e-8)


def test_block_order_invariance():
    rng = np.random.RandomState(19)
    m, d = 8, 10
    a = sp.random(m, m, density=0.5, random_state=rng)
    q = (a @ a.T + sp.identity(m) * m).tocsc()
    A = rng.randn(d, m)
    v = rng.randn(d)
    base = log_marginal_likelihood(_Bare(A, v, q), HyperParams(sigma2=0.2))
    perm = rng.permutation(m)
    P = np.eye(m)[perm]
    q_p = sp.csc_matrix(P @ q.toarray() @ P.T)
    permuted = log_marginal_likelihood(
        _Bare(A @ P.T, v, q_p), HyperParams(sigma2=0.2)
    )
    assert permuted == pytest.approx(base, abs=1e-10)


def test_noninformative_noise_flattens_likelihood():
    coords, s0, mesh, es = synthetic_setup(side=3, n=3, seed=20)
    model = assemble(ModelSpec.variant(0), es, mesh)

    def spread(s2):
        a = log_marginal_likelihood(model, HyperParams(sigma2=s2, sigma_z=0.8, rho_z=2.0))
        b = log_marginal_likelihood(model, HyperParams(sigma2=s2, sigma_z=2.4, rho_z=2.0))
        return abs(a - b)

    # huge observation noise drowns the field: the likelihood goes flat
    # in the latent hyperparameters
    assert spread(1e6) < 1e-3 < spread(1.0)


def test_latent_posterior_no_data_is_prior_mean():
    coords, s0, mesh, es = synthetic_setup(side=3, n=2, seed=21)
    model = assemble(ModelSpec.variant(0), es, mesh)
    model.like_weight[:] = 0.0
    mean, factor = latent_posterior(
        model, HyperParams(sigma2=0.1, sigma_z=1.0, rho_z=2.0)
    )
    assert np.max(np.abs(mean)) < 1e-12


def test_latent_posterior_interpolation_limit():
    rng = np.random.RandomState(22)
    m = 5
    A = np.eye(m)
    v = rng.randn(m)
    bare = _Bare(A, v, sp.identity(m, format="csc") * 1e-6)
    mean, _ = latent_posterior(bare, HyperParams(sigma2=1e-12))
    assert np.max(np.abs(mean - v)) < 1e-4


def test_latent_posterior_dense_oracle():
    rng = np.random.RandomState(23)
    m, d = 6, 9
    a = sp.random(m, m, density=0.6, random_state=rng)
    q = (a @ a.T + sp.identity(m) * m).tocsc()
    A = rng.randn(d, m)
    v = rng.randn(d)
    bare = _Bare(A, v, q)
    s2 = 0.4
    mean, factor = latent_posterior(bare, HyperParams(sigma2=s2))
    qd = q.toarray()
    qpost = qd + A.T @ A / s2
    expect = np.linalg.solve(qpost, A.T @ v / s2)
    assert np.max(np.abs(mean - expect)) < 1e-8
    assert factor.logdet == pytest.approx(np.linalg.slogdet(qpost)[1], abs=1e-8)


# ---------------------------------------------------------------------------
# priors

def test_pc_sd_density_value():
    rate = np.log(2.0) / 0.1
    assert pc_prior_logdensity("sd", 0.0, 0.1, 0.5) == pytest.approx(np.log(rate))
    # integrates the stated tail: Pr(sd > r) = p
    assert np.exp(-rate * 0.1) == pytest.approx(0.5)


def test_pc_range_tail_probability_monte_carlo():
    rng = np.random.default_rng(5)
    rate = -100.0 * np.log1p(-0.5)
    inv_range = rng.exponential(1.0 / rate, size=1_000_000)
    assert np.mean(1.0 / inv_range > 100.0) == pytest.approx(0.5, abs=0.01)


def test_pc_range_density_normalizes():
    from scipy.integrate import quad
    val, _ = quad(lambda r: np.exp(pc_prior_logdensity("range", r, 100.0, 0.5)),
                  1e-6, np.inf, limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_pc_ar1_density_normalizes_and_tail():
    from scipy.integrate import quad

    def dist(rho):
        return np.sqrt(-np.log1p(-rho * rho))

    rate = -np.log(0.5) / dist(0.5)
    cut = 1.0 - 1e-9
    beyond = np.exp(-rate * dist(cut))  # mass past the numerical cutoff
    val, _ = quad(lambda r: np.exp(pc_prior_logdensity("ar1", r, 0.5, 0.5)),
                  -cut, cut, limit=400)
    assert val == pytest.approx(1.0 - beyond, abs=1e-4)
    tail, _ = quad(lambda r: np.exp(pc_prior_logdensity("ar1", r, 0.5, 0.5)),
                   0.5, cut, limit=400)
    # symmetric construction: Pr(|rho| > 0.5) = 0.5
    assert 2.0 * tail == pytest.approx(0.5 - beyond, abs=1e-4)


def test_beta_prior_median_is_half():
    # log-normal with normal mean -log 2: median exp(-log 2) = 1/2
    from scipy.integrate import quad
    mu, var = -np.log(2.0), 1.0
    below, _ = quad(lambda b: np.exp(lognormal_logdensity(b, mu, var)), 1e-12, 0.5)
    assert below == pytest.approx(0.5, abs=1e-6)


def test_pc_prior_invalid_args():
    with pytest.raises(ValueError):
        pc_prior_logdensity("sd", 1.0, -1.0, 0.5)
    with pytest.raises(ValueError):
        pc_prior_logdensity("nope", 1.0, 1.0, 0.5)


def test_transform_roundtrip():
    theta = HyperParams(sigma2=0.04, sigma_z=1.3, rho_z=7.0, rho_t=-0.4, beta=0.6)
    names = ["sigma", "sigma_z", "rho_z", "rho_t", "beta"]
    t = vector_from_theta(names, theta)
    back = theta_from_vector(names, t)
    for name in ("sigma2", "sigma_z", "rho_z", "rho_t", "beta"):
        assert getattr(back, name) == pytest.approx(getattr(theta, name), rel=1e-12)


# ---------------------------------------------------------------------------
# exploration

def test_explorer_recovers_gaussian_posterior():
    fn = lambda t: float(-0.5 * ((t[0] - 2.0) / 0.5) ** 2)
    mode, H, pts, lps, wts = explore_logposterior(fn, np.array([0.0]))
    assert mode[0] == pytest.approx(2.0, abs=1e-5)
    assert H[0, 0] == pytest.approx(1.0 / 0.25, rel=1e-4)
    assert wts.sum() == pytest.approx(1.0)
    assert np.all(wts > 0)
    # grid-integrated posterior mean matches the analytic mean to 1%
    assert wts @ pts[:, 0] == pytest.approx(2.0, abs=0.01 * 0.5)


def test_explorer_conjugate_gaussian_mean():
    # known-variance Gaussian data with a conjugate normal prior on the mean
    rng = np.random.RandomState(31)
    data = rng.normal(1.4, 0.7, size=40)
    s2, tau2 = 0.49, 4.0
    post_var = 1.0 / (len(data) / s2 + 1.0 / tau2)
    post_mean = post_var * data.sum() / s2

    def logpost(t):
        return float(
            -0.5 * np.sum((data - t[0]) ** 2) / s2 - 0.5 * t[0] ** 2 / tau2
        )

    mode, H, pts, lps, wts = explore_logposterior(logpost, np.array([0.0]))
    est = wts @ pts[:, 0]
    assert est == pytest.approx(post_mean, abs=0.01 * abs(post_mean))
    assert 1.0 / H[0, 0] == pytest.approx(post_var, rel=0.01)


def test_explorer_curvature_failure_raises():
    with pytest.raises(NumericalError):
        explore_logposterior(lambda t: float(t[0]), np.array([0.0]), max_iter=5)


# ---------------------------------------------------------------------------
# full fits

@pytest.fixture(scope="module")
def small_fit():
    coords, s0, mesh, es = synthetic_setup(side=5, n=12, seed=30)
    model = assemble(ModelSpec.variant(3), es, mesh, spline_range=4.0)
    return fit(model, priors=tight_priors(), config=FitConfig(seed=1))


def test_fit_weights_normalized(small_fit):
    assert small_fit.weights.sum() == pytest.approx(1.0)
    assert np.all(small_fit.weights > 0)
    assert len(small_fit.weights) == 1 + 2 * 2 * len(small_fit.names)


def test_fit_summary_shape(small_fit):
    doc = small_fit.summary()
    assert set(doc["hyperparameters"]) == {"sigma2", "sigma_z", "rho_z"}
    for entry in doc["hyperparameters"].values():
        lo, hi = entry["ci95"]
        assert lo < entry["mean"] * 1.5 and lo < hi
    assert doc["log_marginal_likelihood_mode"] == pytest.approx(
        small_fit.loglikes[0]
    )


def test_posterior_sample_self_consistency(small_fit):
    thetas, draws = posterior_sample(small_fit, 50000, seed=9)
    grid_mean = small_fit.latent_mean()
    err = np.abs(draws.mean(axis=0) - grid_mean)
    scale = 4.0 * draws.std(axis=0) / np.sqrt(len(draws)) + 1e-8
    assert np.mean(err < scale + 1e-3) > 0.95


def test_posterior_sample_reproducible(small_fit):
    _, a = posterior_sample(small_fit, 64, seed=12)
    _, b = posterior_sample(small_fit, 64, seed=12)
    assert np.array_equal(a, b)


def test_posterior_sample_degenerate_grid(small_fit):
    import copy
    single = copy.copy(small_fit)
    single.weights = np.array([1.0])
    single.grid_t = small_fit.grid_t[:1]
    single.evaluations = small_fit.evaluations[:1]
    thetas, draws = posterior_sample(single, 16, seed=3)
    assert all(t is single.evaluations[0].theta for t in thetas)


def test_fixed_hyperparameter_respected():
    coords, s0, mesh, es = synthetic_setup(side=3, n=6, seed=33)
    model = assemble(ModelSpec.variant(0), es, mesh)
    result = fit(model, priors=tight_priors(),
                 config=FitConfig(seed=2, fix={"sigma": 0.1}))
    assert result.names == ["sigma_z", "rho_z"]
    assert all(ev.theta.sigma2 == pytest.approx(0.01) for ev in result.evaluations)


def test_prior_rate_monotone_influence():
    coords, s0, mesh, es = synthetic_setup(side=4, n=8, seed=34)
    model = assemble(ModelSpec.variant(0), es, mesh)
    loose = fit(model, priors={"sigma_z": PriorSpec("sd", 1.0, 0.5),
                               "rho_z": PriorSpec("range", 3.0, 0.5)},
                config=FitConfig(seed=3))
    tight = fit(model, priors={"sigma_z": PriorSpec("sd", 0.5, 0.5),
                               "rho_z": PriorSpec("range", 3.0, 0.5)},
                config=FitConfig(seed=3))
    # doubling the shrinkage rate on sigma_z cannot increase its mode
    assert tight.theta_mode.sigma_z <= loose.theta_mode.sigma_z + 1e-9


def test_constraint_holds_for_every_draw():
    coords, s0, mesh, es = synthetic_setup(side=4, n=6, seed=35,
                                           residual="condition")
    model = assemble(ModelSpec.variant(3, residual="condition"), es, mesh,
                     spline_range=4.0)
    result = fit(model, priors=tight_priors(), config=FitConfig(seed=4))
    B, e = model.constraints
    _, draws = posterior_sample(result, 200, seed=7)
    assert np.max(np.abs(B @ draws.T)) < 1e-10
