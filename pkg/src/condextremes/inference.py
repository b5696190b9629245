"""Bayesian inference for the assembled latent-Gaussian models.

With a Gaussian response the integral over the latent vector is exact:

    log p(v | theta) = log p(w*; Q_prior) + log p(v | w*, sigma^2)
                       - log p(w*; posterior)

evaluated at the posterior mean w*, which costs one sparse factorization
of Q_post = Q_prior + A^T W A / sigma^2 per hyperparameter value.  The
hyperparameter posterior is explored by finite-difference BFGS on the
unconstrained scale, curvature by central differences, and an axis grid
in the eigenbasis of the curvature; every grid point stores the latent
conditional for downstream sampling and diagnostics.

Hyperparameters carry penalized-complexity priors: exponential on the
standard deviations, exponential on the inverse range, and the
distance-based construction with independence baseline for the temporal
autocorrelation.  The residual scaling exponent beta gets a log-normal
prior.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import NumericalError
from .gmrf import factorize, sample_gmrf
from .rng import rng_from_seed

__all__ = [
    "HyperParams",
    "PriorSpec",
    "default_priors",
    "pc_prior_logdensity",
    "lognormal_logdensity",
    "FitConfig",
    "PosteriorFit",
    "log_marginal_likelihood",
    "latent_posterior",
    "fit",
    "posterior_sample",
    "explore_logposterior",
]


@dataclass(frozen=True)
class HyperParams:
    """Natural-scale hyperparameter values.

    sigma2 is the observation-noise variance; sigma_z and rho_z the
    standard deviation and empirical range of the unconstrained residual
    field; rho_t the temporal AR(1) coefficient (space-time models);
    beta the residual scaling exponent (when estimated).
    """

    sigma2: float
    sigma_z: float = None
    rho_z: float = None
    rho_t: float = None
    beta: float = None

    def as_dict(self):
        out = {"sigma2": self.sigma2}
        for name in ("sigma_z", "rho_z", "rho_t", "beta"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out


# ---------------------------------------------------------------------------
# priors

@dataclass(frozen=True)
class PriorSpec:
    """Tail-calibrated prior: Pr(hyperparameter > r) = p, or log-normal.

    kind is one of "sd", "noise_sd", "range", "ar1" (penalized
    complexity) or "lognormal", in which case (r, p) are the mean and
    variance of the underlying normal.
    """

    kind: str
    r: float
    p: float


def default_priors():
    """Moderately informative defaults in km-scaled coordinates."""
    return {
        "sigma": PriorSpec("noise_sd", 0.1, 0.5),
        "sigma_z": PriorSpec("sd", 1.0, 0.5),
        "rho_z": PriorSpec("range", 100.0, 0.5),
        "rho_t": PriorSpec("ar1", 0.5, 0.5),
        "beta": PriorSpec("lognormal", -np.log(2.0), 1.0),
    }


def _ar1_dist(rho):
    return np.sqrt(-np.log1p(-rho * rho))


def pc_prior_logdensity(kind, value, r, p):
    """Log density of a penalized-complexity prior at a natural value.

    sd / noise_sd: exponential with rate -log(p)/r on the standard
    deviation, so Pr(sd > r) = p.  range: exponential on the inverse
    range with rate -r log(1-p), so Pr(range > r) = p.  ar1: the
    distance d(rho) = sqrt(-log(1-rho^2)) from the independence baseline
    is exponential with rate -log(p)/d(r), calibrated as Pr(|rho| > r) = p
    and symmetric in rho.
    """
    if not (r > 0 and 0.0 < p < 1.0):
        raise ValueError("need r > 0 and p in (0, 1)")
    if kind in ("sd", "noise_sd"):
        if value < 0:
            return -np.inf
        rate = -np.log(p) / r
        return np.log(rate) - rate * value
    if kind == "range":
        if value <= 0:
            return -np.inf
        rate = -r * np.log1p(-p)
        return np.log(rate) - rate / value - 2.0 * np.log(value)
    if kind == "ar1":
        if not abs(value) < 1:
            return -np.inf
        if not r < 1:
            raise ValueError("ar1 threshold r must lie in (0, 1)")
        rate = -np.log(p) / _ar1_dist(r)
        t = abs(value)
        if t < 1e-12:
            dprime = 1.0
            dist = 0.0
        else:
            dist = _ar1_dist(t)
            dprime = t / ((1.0 - t * t) * dist)
        return np.log(rate / 2.0) - rate * dist + np.log(dprime)
    raise ValueError(f"unknown prior kind {kind!r}")


def lognormal_logdensity(value, mu, var):
    """Log density of a log-normal at a positive value."""
    if value <= 0:
        return -np.inf
    lv = np.log(value)
    return -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (lv - mu) ** 2 / var - lv


# ---------------------------------------------------------------------------
# unconstrained parameterization

_TCLIP = 40.0


def theta_from_vector(names, tvec, beta_logit=False, fixed=None):
    """Map an unconstrained vector to HyperParams.

    sigma and sigma_z are log standard deviations, rho_z a log range,
    rho_t an inverse hyperbolic tangent, beta a log (or logit when
    beta_logit is set).
    """
    vals = dict(fixed or {})
    for name, t in zip(names, np.clip(tvec, -_TCLIP, _TCLIP)):
        if name == "sigma":
            vals["sigma2"] = np.exp(2.0 * t)
        elif name in ("sigma_z", "rho_z"):
            vals[name] = np.exp(t)
        elif name == "rho_t":
            vals["rho_t"] = np.tanh(np.clip(t, -12.0, 12.0))
        elif name == "beta":
            vals["beta"] = 1.0 / (1.0 + np.exp(-t)) if beta_logit else np.exp(t)
        else:
            raise ValueError(f"unknown hyperparameter {name!r}")
    return HyperParams(**vals)


def vector_from_theta(names, theta, beta_logit=False):
    out = []
    for name in names:
        if name == "sigma":
            out.append(0.5 * np.log(theta.sigma2))
        elif name in ("sigma_z", "rho_z"):
            out.append(np.log(getattr(theta, name)))
        elif name == "rho_t":
            out.append(np.arctanh(theta.rho_t))
        elif name == "beta":
            b = theta.beta
            out.append(np.log(b / (1.0 - b)) if beta_logit else np.log(b))
    return np.array(out)


def _log_prior_t(names, tvec, priors, beta_logit=False):
    """Log prior density in unconstrained coordinates (Jacobian included)."""
    total = 0.0
    for name, t in zip(names, np.clip(tvec, -_TCLIP, _TCLIP)):
        spec = priors[name]
        if name == "sigma":
            sd = np.exp(t)
            total += pc_prior_logdensity(spec.kind, sd, spec.r, spec.p) + t
        elif name == "sigma_z":
            sd = np.exp(t)
            total += pc_prior_logdensity(spec.kind, sd, spec.r, spec.p) + t
        elif name == "rho_z":
            rho = np.exp(t)
            total += pc_prior_logdensity(spec.kind, rho, spec.r, spec.p) + t
        elif name == "rho_t":
            tc = np.clip(t, -12.0, 12.0)
            rho = np.tanh(tc)
            total += pc_prior_logdensity(spec.kind, rho, spec.r, spec.p)
            total += np.log1p(-rho * rho)
        elif name == "beta":
            if spec.kind != "lognormal":
                raise ValueError("beta takes a lognormal prior")
            mu, var = spec.r, spec.p
            if beta_logit:
                b = 1.0 / (1.0 + np.exp(-t))
                total += lognormal_logdensity(b, mu, var) + np.log(b) + np.log1p(-b)
            else:
                # normal on log beta, evaluated directly on t
                total += -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (t - mu) ** 2 / var
    return total


# ---------------------------------------------------------------------------
# exact marginal likelihood and latent conditionals

def _weighted_design(model):
    if model._ata is None:
        w = model.like_weight
        Aw = model.A.multiply(w[:, None])
        model._ata = (model.A.T @ Aw).tocsc()
        model._atr = model.A.T @ (w * (model.v - model.offset))
    return model._ata, model._atr


def _ordering(model, ata):
    if model.factor_ordering is None:
        model.factor_ordering = model.build_ordering(ata)
    return model.factor_ordering


class _Evaluation:
    """Everything computed at one hyperparameter value."""

    __slots__ = (
        "theta", "lml", "mean", "factor",
        "krig_dirs", "krig_chol", "mean_unconstrained",
    )


def _evaluate(model, theta):
    ata, atr = _weighted_design(model)
    order = _ordering(model, ata)
    q_prior = model.prior_precision(theta)
    sigma2 = theta.sigma2
    q_post = (q_prior.m + ata * (1.0 / sigma2)).tocsc()
    f_post = factorize(q_post, ordering=order)
    f_prior = factorize(q_prior.m, ordering=order)
    mu = f_post.solve(atr / sigma2)
    resid = model.v - model.offset - model.A @ mu
    w = model.like_weight
    rss = float(np.sum(w * resid * resid))
    quad = float(mu @ (q_prior.m @ mu))
    n_like = model.n_like
    lml = (
        0.5 * f_prior.logdet
        - 0.5 * quad
        - 0.5 * n_like * np.log(2.0 * np.pi * sigma2)
        - 0.5 * rss / sigma2
        - 0.5 * f_post.logdet
    )
    ev = _Evaluation()
    ev.theta = theta
    ev.mean_unconstrained = mu
    ev.krig_dirs = None
    ev.krig_chol = None
    if model.constraints is not None:
        B, e = model.constraints
        Bd = np.asarray(B.todense(), dtype=np.float64)
        y_post = f_post.solve(Bd.T)                    # (M, k)
        s_post = Bd @ y_post
        y_prior = f_prior.solve(Bd.T)
        s_prior = Bd @ y_prior
        bmu = np.asarray(B @ mu).ravel() - e
        try:
            c_post = np.linalg.cholesky(s_post)
            c_prior = np.linalg.cholesky(s_prior)
        except np.linalg.LinAlgError as err:
            raise NumericalError("constraint system is rank deficient") from err
        half = np.linalg.solve(c_post, bmu)
        logdet_post = 2.0 * np.sum(np.log(np.diag(c_post)))
        logdet_prior = 2.0 * np.sum(np.log(np.diag(c_prior)))
        lml += -0.5 * logdet_post - 0.5 * float(half @ half) + 0.5 * logdet_prior
        coef = np.linalg.solve(c_post.T, half)
        mu = mu - y_post @ coef
        ev.krig_dirs = y_post
        ev.krig_chol = c_post
    ev.lml = float(lml)
    ev.mean = mu
    ev.factor = f_post
    return ev


def log_marginal_likelihood(model, theta):
    """Exact log p(v | theta) for the Gaussian-response model."""
    return _evaluate(model, theta).lml


def latent_posterior(model, theta):
    """Conditional mean and precision factor of the latent vector.

    Under the conditioning mechanism the mean already satisfies the
    registered constraints; draws from the factor must be corrected the
    same way (posterior_sample does this).
    """
    ev = _evaluate(model, theta)
    return ev.mean, ev.factor


# ---------------------------------------------------------------------------
# posterior exploration

@dataclass(frozen=True)
class FitConfig:
    """Controls for posterior exploration.

    fd_step is the central-difference step for the curvature on the
    unconstrained scale; grid_steps the standardized offsets per
    eigen-axis.  ``fix`` holds hyperparameter values excluded from
    optimization, e.g. {"sigma": 0.1} fixes the noise sd.
    """

    seed: int = 0
    max_iter: int = 200
    fd_step: float = 1e-3
    grid_steps: tuple = (1.0, 2.0)
    beta_logit: bool = False
    init: dict = None
    fix: dict = None


def explore_logposterior(fn, t0, fd_step=1e-3, grid_steps=(1.0, 2.0), max_iter=200):
    """Mode, curvature, and weighted integration grid of a log density.

    Maximizes with finite-difference BFGS, estimates the negative Hessian
    by central differences, and lays grid points along each eigen-axis of
    the curvature at the standardized offsets in ``grid_steps`` (both
    signs) plus the center.  Weights combine the density values with
    trapezoid end-coefficients and are normalized to sum to one.

    Returns (mode, neg_hessian, points, logposts, weights).
    """
    t0 = np.atleast_1d(np.asarray(t0, dtype=np.float64))
    res = minimize(lambda t: -fn(t), t0, method="BFGS",
                   options={"maxiter": max_iter, "gtol": 1e-5})
    if not np.all(np.isfinite(res.x)) or res.status == 1:
        raise NumericalError(
            f"hyperparameter optimization did not converge: status={res.status} "
            f"message={res.message!r} nit={res.nit} x={res.x}"
        )
    mode = res.x
    f0 = -res.fun
    k = len(mode)
    h = fd_step
    H = np.empty((k, k))
    cache = {}

    def feval(t):
        key = tuple(np.round(t / (h / 16.0)).astype(np.int64))
        if key not in cache:
            cache[key] = fn(t)
        return cache[key]

    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        H[i, i] = -(feval(mode + ei) - 2.0 * f0 + feval(mode - ei)) / h**2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h
            mixed = (
                feval(mode + ei + ej)
                - feval(mode + ei - ej)
                - feval(mode - ei + ej)
                + feval(mode - ei - ej)
            ) / (4.0 * h * h)
            H[i, j] = H[j, i] = -mixed
    evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
    if evals.max() <= 0:
        raise NumericalError("posterior curvature is not positive definite")
    floor = evals.max() * 1e-8
    if np.any(evals < floor):
        warnings.warn("posterior curvature nearly singular; flooring eigenvalues",
                      stacklevel=2)
        evals = np.maximum(evals, floor)
    scales = evecs / np.sqrt(evals)[None, :]
    points = [mode]
    logposts = [f0]
    coefs = [1.0]
    for i in range(k):
        for step in grid_steps:
            for sign in (1.0, -1.0):
                t = mode + sign * step * scales[:, i]
                points.append(t)
                logposts.append(fn(t))
                coefs.append(0.5 if step == max(grid_steps) else 1.0)
    points = np.array(points)
    logposts = np.array(logposts)
    raw = np.exp(logposts - logposts.max()) * np.array(coefs)
    weights = raw / raw.sum()
    return mode, 0.5 * (H + H.T), points, logposts, weights


@dataclass
class PosteriorFit:
    """Hyperparameter grid with per-point latent conditionals.

    The object every diagnostic and simulation consumes: grid points
    (unconstrained coordinates and natural-scale HyperParams), positive
    weights summing to one, marginal log-likelihood values, and the
    latent conditional (mean, factor, constraint pieces) at each point.
    """

    model: object
    names: list
    theta_mode: HyperParams
    mode_t: np.ndarray
    neg_hessian: np.ndarray
    grid_t: np.ndarray
    weights: np.ndarray
    logposts: np.ndarray
    loglikes: np.ndarray
    evaluations: list
    config: FitConfig
    priors: dict

    @property
    def grid_thetas(self):
        return [ev.theta for ev in self.evaluations]

    def latent_mean(self):
        """Grid-weighted posterior mean of the latent vector."""
        out = np.zeros_like(self.evaluations[0].mean)
        for wk, ev in zip(self.weights, self.evaluations):
            out += wk * ev.mean
        return out

    def hyper_posterior_mean(self):
        """Grid-weighted posterior means on the natural scale."""
        acc = {}
        for name in self.names:
            key = "sigma2" if name == "sigma" else name
            acc[key] = sum(
                wk * getattr(ev.theta, key)
                for wk, ev in zip(self.weights, self.evaluations)
            )
        return acc

    def hyper_credible_intervals(self, level=0.95):
        """Equal-tailed intervals from the curvature, centered on the grid mean.

        The marginal posterior of each unconstrained coordinate is
        approximated as Gaussian with variance from the inverse curvature;
        the monotone transforms then map quantiles to the natural scale.
        """
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2.0)
        cov = np.linalg.inv(self.neg_hessian)
        t_mean = self.weights @ self.grid_t
        out = {}
        for i, name in enumerate(self.names):
            sd = np.sqrt(cov[i, i])
            lo_t, hi_t = t_mean[i] - z * sd, t_mean[i] + z * sd
            lo = theta_from_vector([name], [lo_t], self.config.beta_logit,
                                   fixed={"sigma2": 1.0})
            hi = theta_from_vector([name], [hi_t], self.config.beta_logit,
                                   fixed={"sigma2": 1.0})
            key = "sigma2" if name == "sigma" else name
            out[key] = (getattr(lo, key), getattr(hi, key))
        return out

    def summary(self):
        means = self.hyper_posterior_mean()
        cis = self.hyper_credible_intervals()
        hyper = {
            key: {"mean": means[key], "ci95": list(cis[key])}
            for key in means
        }
        mode = {}
        for name in self.names:
            key = "sigma2" if name == "sigma" else name
            mode[key] = getattr(self.theta_mode, key)
        return {
            "hyperparameters": hyper,
            "mode": mode,
            "log_marginal_likelihood_mode": float(self.loglikes[0]),
            "grid_size": int(len(self.weights)),
            "weights": self.weights.tolist(),
            "seed": self.config.seed,
            "model": {
                "alpha_form": self.model.spec.alpha_form,
                "gamma": self.model.spec.gamma,
                "beta_mode": self.model.spec.beta_mode,
                "residual": self.model.spec.residual,
                "ell": self.model.spec.ell,
            },
        }

    def to_json(self, path=None):
        text = json.dumps(self.summary(), sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def fit(model, priors=None, config=None):
    """Explore the hyperparameter posterior of an assembled model.

    Returns a PosteriorFit holding the mode, curvature, integration grid
    with normalized weights, and the latent conditional at every grid
    point.

    Raises NumericalError if the optimizer fails to converge or the
    curvature is not positive definite.
    """
    config = config or FitConfig()
    all_priors = default_priors()
    all_priors.update(priors or {})
    fix = dict(config.fix or {})
    names = [n for n in model.hyper_names if n not in fix]
    if not names:
        raise ValueError("at least one free hyperparameter is required")
    fixed_nat = {}
    for name, val in fix.items():
        fixed_nat["sigma2" if name == "sigma" else name] = (
            val * val if name == "sigma" else val
        )

    init = dict(config.init or {})
    r = model.v - model.offset
    rw = r[model.like_weight > 0]
    spread = max(float(np.std(rw)), 1e-3)
    diam = float(
        np.linalg.norm(
            model.episodes.site_coords.max(axis=0)
            - model.episodes.site_coords.min(axis=0)
        )
    )
    defaults = {
        "sigma": 0.3 * spread,
        "sigma_z": spread,
        "rho_z": max(0.3 * diam, 1e-3),
        "rho_t": 0.3,
        "beta": 0.3,
    }
    defaults.update(init)
    t0 = vector_from_theta(
        names,
        HyperParams(
            sigma2=defaults["sigma"] ** 2,
            sigma_z=defaults.get("sigma_z"),
            rho_z=defaults.get("rho_z"),
            rho_t=defaults.get("rho_t"),
            beta=defaults.get("beta"),
        ),
        config.beta_logit,
    )

    def logpost(tvec):
        theta = theta_from_vector(names, tvec, config.beta_logit, fixed=fixed_nat)
        try:
            lml = log_marginal_likelihood(model, theta)
        except NumericalError:
            return -1e12
        return lml + _log_prior_t(names, tvec, all_priors, config.beta_logit)

    mode, H, points, logposts, weights = explore_logposterior(
        logpost, t0, fd_step=config.fd_step,
        grid_steps=config.grid_steps, max_iter=config.max_iter,
    )
    evaluations = []
    loglikes = np.empty(len(points))
    for idx, t in enumerate(points):
        theta = theta_from_vector(names, t, config.beta_logit, fixed=fixed_nat)
        ev = _evaluate(model, theta)
        evaluations.append(ev)
        loglikes[idx] = ev.lml
    theta_mode = theta_from_vector(names, mode, config.beta_logit, fixed=fixed_nat)
    return PosteriorFit(
        model=model,
        names=names,
        theta_mode=theta_mode,
        mode_t=mode,
        neg_hessian=H,
        grid_t=points,
        weights=weights,
        logposts=logposts,
        loglikes=loglikes,
        evaluations=evaluations,
        config=config,
        priors=all_priors,
    )


def posterior_sample(fit_result, count, seed):
    """Draw joint posterior samples of (hyperparameters, latent vector).

    Samples a grid point by weight, then the latent Gaussian at that
    point, applying the registered constraint correction where present.
    Returns (list of HyperParams, draws) with one draw per row, in
    grid-grouped order.
    """
    rng = rng_from_seed(seed)
    ks = rng.choice(len(fit_result.weights), size=count, p=fit_result.weights)
    order = np.argsort(ks, kind="stable")
    ks = ks[order]
    m = fit_result.evaluations[0].mean.shape[0]
    draws = np.empty((count, m))
    thetas = []
    pos = 0
    for k in np.unique(ks):
        nk = int(np.sum(ks == k))
        ev = fit_result.evaluations[k]
        w = ev.mean + sample_gmrf(ev.factor, nk, rng)
        if ev.krig_dirs is not None:
            B, e = fit_result.model.constraints
            resid = np.asarray(B @ w.T) - np.asarray(e)[:, None]
            half = np.linalg.solve(ev.krig_chol, resid)
            coef = np.linalg.solve(ev.krig_chol.T, half)
            w = w - (ev.krig_dirs @ coef).T
        draws[pos:pos + nk] = w
        thetas.extend([ev.theta] * nk)
        pos += nk
    return thetas, draws
