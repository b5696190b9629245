"""Per-site marginal models and the Laplace-scale transformation.

Each site gets a semiparametric distribution function: rank-interpolated
empirical body below a high threshold v, generalized Pareto tail above.
The fitted model maps data to standard Laplace margins via

    x = log(2 F(y))        if F(y) <= 1/2,
    x = -log(2 (1 - F(y))) otherwise,

and back.  The empirical tail correlation chi_q lives here as well since
it is a rank-based statistic of the marginal scale.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from .errors import DataError, NumericalError

__all__ = ["MarginalModel", "fit_gpd", "to_laplace", "from_laplace", "chi_q"]


@dataclass(frozen=True)
class MarginalModel:
    """Semiparametric marginal fit for one site.

    Attributes
    ----------
    v : float
        Threshold, the empirical (1 - exceed_prob) quantile of the sample.
    exceed_prob : float
        lambda_v = P(Y > v); 0.05 for the default 0.95 quantile.
    gpd_scale, gpd_shape : float
        Generalized Pareto parameters of the exceedances of v.
    sorted_body : array
        Sorted observations <= v, the support of the empirical body CDF.
    n_sample : int
        Size of the sample the model was fitted on (sets the rank scale).
    site_id : str
        Optional label carried through serialization.
    """

    v: float
    exceed_prob: float
    gpd_scale: float
    gpd_shape: float
    sorted_body: np.ndarray
    n_sample: int
    site_id: str = ""

    def __post_init__(self):
        if not (0.0 < self.exceed_prob < 1.0):
            raise ValueError("exceed_prob must lie in (0, 1)")
        if self.gpd_scale <= 0:
            raise ValueError("gpd_scale must be positive")
        body = np.asarray(self.sorted_body, dtype=np.float64)
        object.__setattr__(self, "sorted_body", body)

    # knots of the interpolated body CDF: (order stat, rank/(n+1)) pairs
    # closed with (v, 1 - lambda_v) so the two branches meet at v
    def _body_knots(self):
        n = self.n_sample
        ranks = (np.arange(len(self.sorted_body)) + 1.0) / (n + 1.0)
        ys = self.sorted_body
        if len(ys) == 0 or ys[-1] < self.v:
            ys = np.append(ys, self.v)
            ranks = np.append(ranks, 1.0 - self.exceed_prob)
        else:
            ranks = ranks.copy()
            ranks[-1] = 1.0 - self.exceed_prob
        return ys, ranks

    def cdf(self, y):
        """Semiparametric distribution function F(y)."""
        y = np.asarray(y, dtype=np.float64)
        out = np.empty(y.shape)
        tail = y >= self.v
        ys, ranks = self._body_knots()
        out[~tail] = np.interp(y[~tail], ys, ranks, left=ranks[0])
        z = (y[tail] - self.v) / self.gpd_scale
        xi = self.gpd_shape
        if abs(xi) < 1e-12:
            surv = np.exp(-z)
        else:
            arg = 1.0 + xi * z
            if np.any(arg <= 0):
                raise NumericalError(
                    "value beyond the upper endpoint of the fitted tail"
                )
            surv = arg ** (-1.0 / xi)
        out[tail] = 1.0 - self.exceed_prob * surv
        return out if out.shape else float(out)

    def quantile(self, prob):
        """Inverse of cdf; exact on the tail branch."""
        prob = np.asarray(prob, dtype=np.float64)
        out = np.empty(prob.shape)
        split = 1.0 - self.exceed_prob
        tail = prob >= split
        ys, ranks = self._body_knots()
        out[~tail] = np.interp(prob[~tail], ranks, ys, left=ys[0])
        t = (1.0 - prob[tail]) / self.exceed_prob
        xi = self.gpd_shape
        if abs(xi) < 1e-12:
            out[tail] = self.v - self.gpd_scale * np.log(t)
        else:
            out[tail] = self.v + self.gpd_scale / xi * (t ** (-xi) - 1.0)
        return out if out.shape else float(out)

    def to_json(self, path=None):
        doc = {
            "site_id": self.site_id,
            "v": self.v,
            "lambda_v": self.exceed_prob,
            "sigma_v": self.gpd_scale,
            "xi": self.gpd_shape,
            "n_sample": self.n_sample,
            "body_quantiles": self.sorted_body.tolist(),
        }
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
            v=doc["v"],
            exceed_prob=doc["lambda_v"],
            gpd_scale=doc["sigma_v"],
            gpd_shape=doc["xi"],
            sorted_body=np.asarray(doc["body_quantiles"], dtype=np.float64),
            n_sample=doc["n_sample"],
            site_id=doc.get("site_id", ""),
        )


def _gpd_negloglik(params, z):
    log_sigma, xi = params
    sigma = np.exp(log_sigma)
    if abs(xi) < 1e-12:
        return len(z) * log_sigma + np.sum(z) / sigma
    arg = 1.0 + xi * z / sigma
    if np.any(arg <= 0):
        return 1e12
    return len(z) * log_sigma + (1.0 + 1.0 / xi) * np.sum(np.log(arg))


def fit_gpd(sample, quantile, site_id=""):
    """Fit the semiparametric marginal at the given threshold quantile.

    Maximum likelihood for the generalized Pareto exceedances, fitted by
    Nelder-Mead on (log scale, shape) from a moments start.  The shape is
    unconstrained; estimates outside (-0.5, 0.5) raise a warning rather
    than an error.

    Raises
    ------
    DataError
        Fewer than 50 observations or fewer than 20 exceedances.
    NumericalError
        Optimizer failure, with the optimizer status in the message.
    """
    sample = np.asarray(sample, dtype=np.float64).ravel()
    sample = sample[np.isfinite(sample)]
    if len(sample) < 50:
        raise DataError(f"need at least 50 observations, got {len(sample)}")
    if not (0.5 < quantile < 1.0):
        raise ValueError("quantile must lie in (0.5, 1)")
    v = float(np.quantile(sample, quantile))
    exc = sample[sample > v] - v
    if len(exc) < 20:
        raise DataError(
            f"too few exceedances: {len(exc)} above the {quantile} quantile "
            "(need at least 20)"
        )
    mean, var = exc.mean(), exc.var(ddof=1)
    xi0 = 0.5 * (1.0 - mean * mean / var)
    sigma0 = 0.5 * mean * (mean * mean / var + 1.0)
    sigma0 = max(sigma0, 1e-8)
    res = minimize(
        _gpd_negloglik,
        np.array([np.log(sigma0), np.clip(xi0, -0.4, 0.4)]),
        args=(exc,),
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 2000},
    )
    if not res.success:
        raise NumericalError(
            f"GPD maximum likelihood did not converge: status={res.status}, "
            f"message={res.message!r}"
        )
    sigma, xi = float(np.exp(res.x[0])), float(res.x[1])
    if not (-0.5 < xi < 0.5):
        warnings.warn(
            f"fitted GPD shape {xi:.3f} outside (-0.5, 0.5); "
            "tail estimates may be unstable",
            stacklevel=2,
        )
    return MarginalModel(
        v=v,
        exceed_prob=1.0 - quantile,
        gpd_scale=sigma,
        gpd_shape=xi,
        sorted_body=np.sort(sample[sample <= v]),
        n_sample=len(sample),
        site_id=site_id,
    )


def to_laplace(y, m):
    """Map data values to the standard Laplace scale through m."""
    f = np.asarray(m.cdf(y), dtype=np.float64)
    if np.any(f <= 0) or np.any(f >= 1):
        raise NumericalError("marginal CDF hit 0 or 1; cannot map to Laplace")
    lower = f <= 0.5
    out = np.empty(f.shape)
    out[lower] = np.log(2.0 * f[lower])
    out[~lower] = -np.log(2.0 * (1.0 - f[~lower]))
    return out if out.shape else float(out)


def from_laplace(x, m):
    """Inverse of to_laplace; exact on the parametric tail branch."""
    x = np.asarray(x, dtype=np.float64)
    f = np.where(x <= 0, 0.5 * np.exp(x), 1.0 - 0.5 * np.exp(-x))
    return m.quantile(f)


def chi_q(a, b, q):
    """Empirical tail correlation at level q.

    Fraction of joint exceedances among conditioning exceedances, using
    average ranks scaled by 1/(n+1), so the statistic is invariant under
    strictly increasing marginal transformations.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("series must have equal length")
    if len(a) < 20:
        raise ValueError("need at least 20 paired observations")
    if not (0.0 < q < 1.0):
        raise ValueError("q must lie in (0, 1)")
    n = len(a)
    fa = rankdata(a, method="average") / (n + 1.0)
    fb = rankdata(b, method="average") / (n + 1.0)
    cond = fa > q
    n_cond = int(cond.sum())
    if n_cond == 0:
        raise DataError(f"no exceedances of the {q} quantile in the conditioning series")
    return float(np.sum(cond & (fb > q)) / n_cond)
