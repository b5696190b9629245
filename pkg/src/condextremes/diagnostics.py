"""Model comparison and validation diagnostics.

Everything here consumes a PosteriorFit (or a frozen simulator) and
produces plain numbers, vectors, or tables: the widely-applicable
information criterion on the smaller-is-better scale, leave-one-out
conditional predictive ordinates and probability integral transforms by
importance weighting, hold-out cross-validation error, the region-wise
exceedance proportions, and model-based tail-correlation curves.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DataError
from .inference import FitConfig, fit, posterior_sample
from .model import assemble
from .simulate import laplace_quantile

__all__ = [
    "waic",
    "waic_from_loglik",
    "cpo_pit",
    "cpo_pit_from_samples",
    "rmse_cv",
    "quadrant_holdout",
    "forecast_folds",
    "ring_partition",
    "region_exceedance",
    "model_chi_q",
    "DiagnosticReport",
]

_CHUNK = 4096


def _sample_predictors(fit_result, count, seed):
    """Posterior draws of the linear predictor and noise sd per draw."""
    thetas, draws = posterior_sample(fit_result, count, seed)
    model = fit_result.model
    rows = np.nonzero(model.like_weight > 0)[0]
    sigma = np.sqrt(np.array([t.sigma2 for t in thetas]))
    return model, rows, draws, sigma


def waic_from_loglik(loglik):
    """WAIC from an (S, N) matrix of per-draw per-observation log densities.

    Computes the log pointwise predictive density and the variance-based
    effective parameter count, and returns -2 (lppd - p_eff) so that
    smaller values indicate better fits.
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    if loglik.ndim != 2 or loglik.shape[0] < 2:
        raise ValueError("need an (S, N) log-likelihood matrix with S >= 2")
    s = loglik.shape[0]
    m = loglik.max(axis=0)
    lppd = float(np.sum(np.log(np.mean(np.exp(loglik - m), axis=0)) + m))
    p_eff = float(np.sum(np.var(loglik, axis=0, ddof=1)))
    return -2.0 * (lppd - p_eff)


def waic(fit_result, samples=1000, seed=0):
    """Posterior-sampled WAIC of a fitted model (smaller is better)."""
    if samples < 2:
        raise ValueError("need at least 2 posterior samples")
    model, rows, draws, sigma = _sample_predictors(fit_result, samples, seed)
    v = model.v[rows]
    off = model.offset[rows]
    lppd = 0.0
    p_eff = 0.0
    for lo in range(0, len(rows), _CHUNK):
        sel = rows[lo:lo + _CHUNK]
        eta = (model.A[sel] @ draws.T) + off[lo:lo + _CHUNK, None]  # (chunk, S)
        z = (v[lo:lo + _CHUNK, None] - eta) / sigma[None, :]
        ll = -0.5 * np.log(2.0 * np.pi) - np.log(sigma)[None, :] - 0.5 * z * z
        m = ll.max(axis=1, keepdims=True)
        lppd += float(np.sum(np.log(np.mean(np.exp(ll - m), axis=1)) + m[:, 0]))
        p_eff += float(np.sum(np.var(ll, axis=1, ddof=1)))
    return -2.0 * (lppd - p_eff)


def cpo_pit_from_samples(v, eta, sigma):
    """Importance-weighted leave-one-out CPO and PIT.

    v is (N,), eta (S, N) linear predictor draws, sigma (S,) noise sds.
    CPO_i is the harmonic mean of the per-draw densities; PIT_i the
    density-weighted predictive CDF.  Observations whose density
    underflows in some draw are flagged unreliable (returned mask).
    """
    v = np.asarray(v, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    z = (v[None, :] - eta) / sigma[:, None]
    dens = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * sigma[:, None])
    bad = np.any(dens <= 0.0, axis=0) | ~np.all(np.isfinite(dens), axis=0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / dens
        cdf = norm.cdf(z)
        inv_mean = inv.mean(axis=0)
        cpo = 1.0 / inv_mean
        pit = (cdf * inv).mean(axis=0) / inv_mean
    cpo[bad] = np.nan
    pit[bad] = np.nan
    return cpo, pit, bad


def cpo_pit(fit_result, samples=1000, seed=0):
    """Leave-one-out CPO and PIT vectors for every likelihood row."""
    if samples < 2:
        raise ValueError("need at least 2 posterior samples")
    model, rows, draws, sigma = _sample_predictors(fit_result, samples, seed)
    v = model.v[rows]
    off = model.offset[rows]
    cpo = np.empty(len(rows))
    pit = np.empty(len(rows))
    bad = np.zeros(len(rows), dtype=bool)
    for lo in range(0, len(rows), _CHUNK):
        sel = rows[lo:lo + _CHUNK]
        eta = ((model.A[sel] @ draws.T) + off[lo:lo + _CHUNK, None]).T  # (S, chunk)
        c, p, b = cpo_pit_from_samples(v[lo:lo + _CHUNK], eta, sigma)
        cpo[lo:lo + _CHUNK] = c
        pit[lo:lo + _CHUNK] = p
        bad[lo:lo + _CHUNK] = b
    return cpo, pit, bad


def quadrant_holdout(episodes):
    """Mask of all entries at sites south-east of the conditioning site."""
    coords = episodes.site_coords
    s0 = coords[episodes.s0_index]
    sel = (coords[:, 0] >= s0[0]) & (coords[:, 1] <= s0[1])
    sel[episodes.s0_index] = False
    mask = np.zeros(episodes.values.shape, dtype=bool)
    mask[:, sel, :] = True
    return mask


def forecast_folds(episodes, n_folds, seed=0):
    """Forecasting cross-validation masks: per fold, remove all steps
    after the first for the fold's episodes."""
    if episodes.ell < 2:
        raise ValueError("forecast folds need episodes with ell >= 2")
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(episodes.n)
    masks = []
    for fold in range(n_folds):
        eps = order[fold::n_folds]
        m = np.zeros(episodes.values.shape, dtype=bool)
        m[eps, :, 1:] = True
        masks.append(m)
    return masks


def rmse_cv(spec, episodes, mesh2d, holdout_mask, mesh1d=None, priors=None,
            fit_config=None, **assemble_kw):
    """Refit with the held-out entries masked and score their predictions.

    Held-out entries stay in the design with zero likelihood weight, so
    their posterior predictive means come straight out of the refit.
    Returns (rmse, fit) with the error on the Laplace scale.
    """
    holdout_mask = np.asarray(holdout_mask, dtype=bool)
    if not holdout_mask.any():
        raise ValueError("holdout mask selects no entries")
    model = assemble(spec, episodes, mesh2d, mesh1d=mesh1d,
                     holdout_mask=holdout_mask, **assemble_kw)
    fit_result = fit(model, priors=priors, config=fit_config or FitConfig())
    hm = np.transpose(holdout_mask, (0, 2, 1)).ravel()
    obs_mask = np.transpose(episodes.mask, (0, 2, 1)).ravel()
    keep = np.nonzero(obs_mask)[0]
    held_rows = np.nonzero(hm[keep])[0]
    if len(held_rows) == 0:
        raise ValueError("holdout selects no observed entries")
    pred = model.offset[held_rows] + model.A[held_rows] @ fit_result.latent_mean()
    err = model.v[held_rows] - pred
    return float(np.sqrt(np.mean(err * err))), fit_result


def ring_partition(site_coords, s0_index, n_regions):
    """Concentric equal-width rings around the conditioning site.

    Returns integer region labels per site, 0 at the center.
    """
    coords = np.asarray(site_coords, dtype=np.float64)
    dist = np.linalg.norm(coords - coords[s0_index], axis=1)
    edges = np.linspace(0.0, dist.max() * (1 + 1e-12), n_regions + 1)
    labels = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, n_regions - 1)
    labels[s0_index] = 0
    return labels


def region_exceedance(sim, regions, q, n_sim=10000, seed=0, episodes=None,
                      labels=None):
    """Per-region proportion of sites exceeding the Laplace q-quantile.

    Simulates episodes given an exceedance of the q-quantile at the
    conditioning site and averages, per region, the fraction of sites
    above the quantile at the conditioning time step.  When an EpisodeSet
    is passed the empirical counterpart is computed from its episodes
    whose conditioning value exceeds the q-quantile.  ``labels`` names the
    regions expected to exist; a label with no sites is an error.
    """
    regions = np.asarray(regions)
    labels = np.unique(regions) if labels is None else np.asarray(labels)
    ql = max(laplace_quantile(q), sim.u)
    _, fields = sim.simulate(n_sim, seed, q=q)
    exceed = fields[:, :, 0] > ql
    model_prop = np.empty(len(labels))
    for idx, lab in enumerate(labels):
        sel = regions == lab
        if not sel.any():
            raise DataError(f"region {lab} contains no sites")
        model_prop[idx] = float(exceed[:, sel].mean())
    emp_prop = None
    if episodes is not None:
        keep = episodes.x > ql
        if keep.any():
            vals = episodes.values[keep][:, :, 0]
            mask = episodes.mask[keep][:, :, 0]
            emp_prop = np.empty(len(labels))
            for idx, lab in enumerate(labels):
                sel = regions == lab
                obs = mask[:, sel]
                hit = (vals[:, sel] > ql) & obs
                emp_prop[idx] = float(hit.sum() / max(obs.sum(), 1))
        else:
            emp_prop = np.full(len(labels), np.nan)
    return {"labels": labels, "model": model_prop, "empirical": emp_prop, "q": q}


def model_chi_q(sim, q_levels, n_sim=10000, seed=0, n_bins=12):
    """Tail-correlation curves of the model by simulation.

    For each level q the conditioning value is drawn above the Laplace
    q-quantile, so chi_q(s0, s) is just the fraction of simulations where
    site s exceeds the quantile at the conditioning time step; curves are
    reported per site and binned by distance.
    """
    dist = sim.distances()
    edges = np.linspace(0.0, dist.max() * (1 + 1e-12), n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    out = []
    for k, q in enumerate(q_levels):
        ql = max(laplace_quantile(q), sim.u)
        _, fields = sim.simulate(n_sim, seed + k, q=q)
        chi_site = (fields[:, :, 0] > ql).mean(axis=0)
        binned = np.full(n_bins, np.nan)
        which = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, n_bins - 1)
        for b in range(n_bins):
            sel = which == b
            if sel.any():
                binned[b] = float(chi_site[sel].mean())
        out.append({
            "q": q,
            "distance": dist,
            "chi_site": chi_site,
            "bin_centers": centers,
            "chi_binned": binned,
        })
    return out


@dataclass
class DiagnosticReport:
    """Bundle of diagnostics with flat-file serialization."""

    waic: float = None
    cpo: np.ndarray = None
    pit: np.ndarray = None
    cpo_unreliable: np.ndarray = None
    rmse_cv: float = None
    region: dict = None
    chi_curves: list = field(default_factory=list)
    fit_hash: str = None

    def summary(self):
        out = {"waic": self.waic, "rmse_cv": self.rmse_cv, "fit_hash": self.fit_hash}
        if self.cpo is not None:
            good = np.isfinite(self.cpo)
            out["cpo_mean"] = float(np.mean(self.cpo[good]))
            out["log_cpo_mean"] = float(np.mean(np.log(self.cpo[good])))
            out["cpo_unreliable"] = int((~good).sum())
        if self.pit is not None:
            good = np.isfinite(self.pit)
            out["pit_mean"] = float(np.mean(self.pit[good]))
        if self.region is not None:
            out["region_q"] = self.region["q"]
            out["region_model"] = self.region["model"].tolist()
            emp = self.region["empirical"]
            out["region_empirical"] = None if emp is None else emp.tolist()
        return out

    def to_json(self, path=None):
        text = json.dumps(self.summary(), sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def write_cpo_csv(self, path):
        with open(path, "w") as fh:
            fh.write("index,cpo,pit,unreliable\n")
            for i in range(len(self.cpo)):
                bad = int(self.cpo_unreliable[i]) if self.cpo_unreliable is not None else 0
                fh.write(f"{i},{float(self.cpo[i])!r},{float(self.pit[i])!r},{bad}\n")

    def write_region_csv(self, path):
        with open(path, "w") as fh:
            fh.write("region,q,model_proportion,empirical_proportion\n")
            emp = self.region["empirical"]
            for i, lab in enumerate(self.region["labels"]):
                e = "" if emp is None else repr(float(emp[i]))
                fh.write(f"{lab},{self.region['q']},{float(self.region['model'][i])!r},{e}\n")

    def write_chi_csv(self, path):
        with open(path, "w") as fh:
            fh.write("q,bin_center,chi\n")
            for curve in self.chi_curves:
                for c, val in zip(curve["bin_centers"], curve["chi_binned"]):
                    fh.write(f"{curve['q']},{float(c)!r},{float(val)!r}\n")


def content_hash(text):
    """Stable short hash used to link reports to the fit they describe."""
    return hashlib.sha256(text.encode()).hexdigest()[:16]
