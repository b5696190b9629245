"""Assembly of conditional extremes models into latent-Gaussian designs.

A model variant couples, per extreme episode j with conditioning value
x_j: a known offset (the pinned part of the scaled profile), optional
latent spline blocks for the distance profiles, and a replicated latent
spatial (or space-time) residual field whose observation matrix encodes
the conditioning-site constraint.  The result is a Gaussian-response
linear model  v = offset + A w + noise  with a sparse, block-structured
prior precision on w that depends on the hyperparameters.

Model variants 0-6:

    0: x + Z0(s)
    1: x a(h) + Z0(s)
    2: x + g(h) + Z0(s)
    3: x a(h) + g(h) + Z0(s)
    4: x a(h) + g(h) + x^beta Z0(s)
    5: x a(h) + x^beta Z0(s)
    6: x a(h) + g(h)            (no residual field)

where a is the multiplicative profile with a(0) = 1, g the additive
profile with g(0) = 0, and Z0 the residual field with Z0(s0) = 0.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .episodes import EpisodeSet
from .gmrf import SparsePrecision, ar1_precision, kronecker, min_degree_order
from .mesh import (
    Mesh1D,
    Mesh2D,
    condition_observation_matrix,
    observation_matrix,
    replicate_observation_matrix,
)
from .spde import matern_to_spde, spde_precision

__all__ = [
    "ModelSpec",
    "AssembledModel",
    "assemble",
    "parametric_alpha",
    "spline_prior_precision",
    "alpha_one_offset",
]

_ALPHA_FORMS = ("one", "parametric", "spline")
_BETA_MODES = ("fixed", "estimated")
_RESIDUALS = ("subtract", "condition", "none")


@dataclass(frozen=True)
class ModelSpec:
    """Which variant of the conditional model to fit.

    alpha_form selects the multiplicative profile: "one" (constant 1),
    "parametric" (exp{-(h/alpha_lambda)^alpha_kappa} with fixed
    parameters), or "spline".  beta_mode "fixed" pins beta = 0;
    "estimated" adds it to the hyperparameters.  residual selects the
    conditioning mechanism for the latent field: subtract the value at
    the conditioning site, condition on it being zero, or drop the field
    entirely.
    """

    alpha_form: str = "spline"
    gamma: bool = True
    beta_mode: str = "fixed"
    residual: str = "subtract"
    ell: int = 1
    threshold_quantile: float = 0.95
    alpha_lambda: float = None
    alpha_kappa: float = None
    zeta: float = 1.5

    def __post_init__(self):
        if self.alpha_form not in _ALPHA_FORMS:
            raise ValueError(f"alpha_form must be one of {_ALPHA_FORMS}")
        if self.beta_mode not in _BETA_MODES:
            raise ValueError(f"beta_mode must be one of {_BETA_MODES}")
        if self.residual not in _RESIDUALS:
            raise ValueError(f"residual must be one of {_RESIDUALS}")
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if not (0.5 < self.threshold_quantile < 1.0):
            raise ValueError("threshold_quantile must lie in (0.5, 1)")
        if self.residual == "none":
            if self.alpha_form == "one" and not self.gamma:
                raise ValueError(
                    "residual='none' needs a profile term: use a non-constant "
                    "alpha and/or include gamma"
                )
            if self.beta_mode == "estimated":
                raise ValueError("beta is meaningless without a residual field")
        if self.alpha_form == "parametric":
            if self.alpha_lambda is None or self.alpha_kappa is None:
                raise ValueError("parametric alpha needs alpha_lambda and alpha_kappa")
            if self.alpha_lambda <= 0 or not (0 <= self.alpha_kappa <= 2):
                raise ValueError("need alpha_lambda > 0 and alpha_kappa in [0, 2]")

    @classmethod
    def variant(cls, number, residual="subtract", ell=1, **kw):
        """Spec for one of the numbered model variants 0-6."""
        table = {
            0: dict(alpha_form="one", gamma=False, beta_mode="fixed"),
            1: dict(alpha_form="spline", gamma=False, beta_mode="fixed"),
            2: dict(alpha_form="one", gamma=True, beta_mode="fixed"),
            3: dict(alpha_form="spline", gamma=True, beta_mode="fixed"),
            4: dict(alpha_form="spline", gamma=True, beta_mode="estimated"),
            5: dict(alpha_form="spline", gamma=False, beta_mode="estimated"),
            6: dict(alpha_form="spline", gamma=True, beta_mode="fixed",
                    residual="none"),
        }
        if number not in table:
            raise ValueError(f"unknown model number {number}")
        args = table[number]
        if number != 6:
            args["residual"] = residual
        return cls(ell=ell, **args, **kw)

    @property
    def hyper_names(self):
        names = ["sigma"]
        if self.residual != "none":
            names += ["sigma_z", "rho_z"]
            if self.ell > 1:
                names.append("rho_t")
            if self.beta_mode == "estimated":
                names.append("beta")
        return names


def parametric_alpha(dist, lam, kappa_a):
    """Parametric multiplicative profile exp{-(dist/lam)^kappa_a}.

    Equals 1 at distance 0 for every shape, including kappa_a = 0 where
    the profile is the constant exp(-1) at all positive distances.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not (0 <= kappa_a <= 2):
        raise ValueError("kappa_a must lie in [0, 2]")
    dist = np.asarray(dist, dtype=np.float64)
    out = np.where(dist == 0, 1.0, np.exp(-((dist / lam) ** kappa_a)))
    return out if out.shape else float(out)


def spline_prior_precision(mesh1d, range_fixed, sd_fixed, ell=1, rho=0.0):
    """Prior precision for a distance-profile spline, replicated in time.

    The 1D field uses the smooth exponent (zeta = 2) at fixed range and
    standard deviation.  For ell > 1 the profile is replicated per time
    lag with AR(1) prior dependence between consecutive lags.
    """
    params = matern_to_spde(range_fixed, sd_fixed, nu=1.5, dim=1)
    q1 = spde_precision(mesh1d, params)
    if ell == 1:
        return q1
    return kronecker(ar1_precision(ell, rho), q1)


def alpha_one_offset(episodes):
    """Fixed offset x_j on every row of episode j (constant-alpha models)."""
    per_ep = episodes.d * episodes.ell
    return np.repeat(episodes.x, per_ep)


@dataclass
class AssembledModel:
    """A model variant bound to data, ready for inference.

    Rows follow (episode, time, site) order and cover observed entries
    only.  ``like_weight`` is 1 for likelihood rows and 0 for rows kept
    for prediction but excluded from the likelihood (the conditioning
    row of each episode, where the noise is pinned to zero, and any
    held-out entries).
    """

    spec: ModelSpec
    episodes: EpisodeSet
    mesh2d: Mesh2D
    mesh1d: Mesh1D
    A: sp.csr_matrix
    v: np.ndarray
    offset: np.ndarray
    like_weight: np.ndarray
    row_episode: np.ndarray
    row_site: np.ndarray
    row_time: np.ndarray
    layout: dict
    spline_prior: SparsePrecision
    constraints: tuple
    basis1d: sp.csr_matrix
    A_space: sp.csr_matrix
    A_s0row: sp.csr_matrix
    z_obs_episode: sp.csr_matrix
    factor_ordering: np.ndarray = field(default=None, repr=False)
    _z_cache: dict = field(default_factory=dict, repr=False)
    _ata: sp.csc_matrix = field(default=None, repr=False)
    _atr: np.ndarray = field(default=None, repr=False)

    @property
    def latent_dim(self):
        return self.A.shape[1]

    @property
    def n_like(self):
        return float(self.like_weight.sum())

    @property
    def hyper_names(self):
        return self.spec.hyper_names

    def z_block_precision(self, sigma_z, rho_z, rho_t=None):
        """Per-episode precision of the unconstrained latent field."""
        key = (sigma_z, rho_z, rho_t)
        hit = self._z_cache.get(key)
        if hit is not None:
            return hit
        params = matern_to_spde(rho_z, sigma_z, nu=self.spec.zeta - 1.0, dim=2)
        qs = spde_precision(self.mesh2d, params)
        if self.spec.ell > 1:
            qs = kronecker(ar1_precision(self.spec.ell, rho_t), qs)
        self._z_cache.clear()  # values change every hyperparameter step
        self._z_cache[key] = qs
        return qs

    def prior_precision(self, theta):
        """Joint prior precision of the latent vector at hyperparameters theta.

        ``theta`` needs attributes sigma_z, rho_z, rho_t, beta as
        applicable.  The per-episode field block is scaled by
        x_j^{-2 beta}, which is how the x^beta factor on the residual
        enters without touching the observation matrix.
        """
        blocks = []
        if "alpha" in self.layout:
            blocks.append(self.spline_prior.m)
        if "gamma" in self.layout:
            blocks.append(self.spline_prior.m)
        if "z" in self.layout:
            qz = self.z_block_precision(
                theta.sigma_z, theta.rho_z, getattr(theta, "rho_t", None)
            ).m
            beta = getattr(theta, "beta", None)
            if self.spec.beta_mode == "estimated" and beta is not None and beta != 0:
                scales = self.episodes.x ** (-2.0 * beta)
            else:
                scales = np.ones(self.episodes.n)
            blocks.extend(qz * s for s in scales)
        return SparsePrecision(sp.block_diag(blocks, format="csc"))

    def build_ordering(self, ata):
        """Fill-reducing ordering exploiting the block structure.

        Field columns are ordered first (minimum-degree within one episode
        block, reused across episodes sharing an observation pattern) and
        the globally-coupled spline columns last.
        """
        if "z" not in self.layout:
            return np.arange(self.latent_dim, dtype=np.int64)
        z_start, z_size, n_ep = self.layout["z"]
        qz_pat = self.z_block_precision(1.0, 1.0, 0.5 if self.spec.ell > 1 else None).m
        local_orders = {}
        order = []
        for j in range(self.episodes.n):
            mask_key = self.episodes.mask[j].tobytes()
            local = local_orders.get(mask_key)
            if local is None:
                cols = slice(z_start + j * z_size, z_start + (j + 1) * z_size)
                sub = ata[cols, cols]
                pattern = (abs(qz_pat) + abs(sub)).tocsc()
                local = min_degree_order(pattern)
                local_orders[mask_key] = local
            order.append(z_start + j * z_size + local)
        spline_cols = []
        for name, block in sorted(self.layout.items(), key=lambda kv: kv[1][0]):
            if name != "z":
                spline_cols.append(np.arange(block[0], block[0] + block[1]))
        head = np.concatenate(order)
        tail = (
            np.concatenate(spline_cols) if spline_cols else np.empty(0, dtype=np.int64)
        )
        return np.concatenate([head, tail]).astype(np.int64)


def assemble(
    spec,
    episodes,
    mesh2d,
    mesh1d=None,
    spline_range=None,
    spline_sd=0.5,
    spline_ar1_rho=0.7,
    interior_knots=14,
    holdout_mask=None,
):
    """Bind a model spec to data and meshes.

    Parameters
    ----------
    spec : ModelSpec
    episodes : EpisodeSet
    mesh2d : Mesh2D covering the sites (required unless residual="none")
    mesh1d : Mesh1D for the profile splines; built automatically over
        [0, max distance] with ``interior_knots`` equidistant interior
        knots when omitted.
    spline_range, spline_sd, spline_ar1_rho : prior settings for the
        profile splines (range defaults to the maximum site distance).
    holdout_mask : optional (n, d, ell) boolean array; entries marked True
        stay in the design with zero likelihood weight, so their
        posterior predictions remain available.

    Raises ValueError on inconsistent inputs; mesh errors propagate.
    """
    if spec.ell != episodes.ell:
        raise ValueError(
            f"spec.ell={spec.ell} but episodes have {episodes.ell} time steps"
        )
    d, ell, n = episodes.d, episodes.ell, episodes.n
    dist = episodes.distances()
    if not np.allclose(
        episodes.values[:, episodes.s0_index, 0], episodes.x, equal_nan=False
    ):
        raise ValueError("episode values at the conditioning point must equal x")

    needs_spline = spec.alpha_form == "spline" or spec.gamma
    if needs_spline and mesh1d is None:
        mesh1d = Mesh1D.regular(dist.max(), interior_knots=interior_knots)
    if needs_spline and dist.max() > mesh1d.knots[-1] + 1e-9:
        raise ValueError("1D mesh does not cover the maximum site distance")

    basis1d = mesh1d.basis_matrix(dist) if needs_spline else None
    m1 = basis1d.shape[1] if needs_spline else 0

    layout = {}
    col = 0
    col_blocks = []

    def spline_block():
        block = sp.kron(sp.identity(ell, format="csr"), basis1d, format="csr")
        return block

    if spec.alpha_form == "spline":
        layout["alpha"] = (col, ell * m1)
        col += ell * m1
        per_ep = spline_block()
        col_blocks.append(
            sp.vstack([per_ep * xj for xj in episodes.x], format="csr")
        )
    if spec.gamma:
        layout["gamma"] = (col, ell * m1)
        col += ell * m1
        per_ep = spline_block()
        col_blocks.append(sp.kron(np.ones((n, 1)), per_ep, format="csr"))

    constraints = None
    A_space = A_s0row = z_obs = None
    if spec.residual != "none":
        if mesh2d is None:
            raise ValueError("a 2D mesh is required when the model has a residual field")
        A_space = observation_matrix(mesh2d, episodes.site_coords)
        A_s0row = observation_matrix(
            mesh2d, episodes.site_coords[episodes.s0_index][None, :]
        )
        m_z = A_space.shape[1]
        if spec.residual == "subtract":
            z_obs = condition_observation_matrix(A_space, A_s0row, ell)
        else:
            z_obs = (
                sp.block_diag([A_space] * ell, format="csr") if ell > 1 else A_space
            )
        z_size = ell * m_z
        layout["z"] = (col, z_size, n)
        col_blocks.append(replicate_observation_matrix(z_obs, n))
        if spec.residual == "condition":
            row = sp.hstack(
                [A_s0row, sp.csr_matrix((1, z_size - m_z))], format="csr"
            ) if ell > 1 else A_s0row
            B = sp.block_diag([row] * n, format="csr")
            pad_left = sp.csr_matrix((n, col))
            constraints = (sp.hstack([pad_left, B], format="csr"), np.zeros(n))
        col += z_size * n

    A_full = sp.hstack(col_blocks, format="csr") if col_blocks else None
    if A_full is None:
        raise ValueError("model has no latent components")

    # offsets: the pinned multiplicative part of the profile
    if spec.alpha_form == "parametric":
        alpha_sites = parametric_alpha(dist, spec.alpha_lambda, spec.alpha_kappa)
        offset_full = np.concatenate(
            [np.tile(xj * alpha_sites, ell) for xj in episodes.x]
        )
    else:
        offset_full = alpha_one_offset(episodes)

    obs_mask = np.transpose(episodes.mask, (0, 2, 1)).ravel()
    values_flat = np.transpose(episodes.values, (0, 2, 1)).ravel()
    ep_idx = np.repeat(np.arange(n), ell * d)
    t_idx = np.tile(np.repeat(np.arange(ell), d), n)
    s_idx = np.tile(np.arange(d), ell * n)

    keep = np.nonzero(obs_mask)[0]
    A = A_full[keep]
    v = values_flat[keep]
    offset = offset_full[keep]
    row_episode = ep_idx[keep]
    row_site = s_idx[keep]
    row_time = t_idx[keep]

    weight = np.ones(len(keep))
    cond_rows = (row_site == episodes.s0_index) & (row_time == 0)
    weight[cond_rows] = 0.0
    if holdout_mask is not None:
        hm = np.transpose(np.asarray(holdout_mask, dtype=bool), (0, 2, 1)).ravel()
        weight[hm[keep]] = 0.0

    spline_prior = None
    if needs_spline:
        if spline_range is None:
            spline_range = float(dist.max())
        spline_prior = spline_prior_precision(
            mesh1d, spline_range, spline_sd, ell=ell, rho=spline_ar1_rho
        )

    model = AssembledModel(
        spec=spec,
        episodes=episodes,
        mesh2d=mesh2d,
        mesh1d=mesh1d,
        A=A.tocsr(),
        v=v,
        offset=offset,
        like_weight=weight,
        row_episode=row_episode,
        row_site=row_site,
        row_time=row_time,
        layout=layout,
        spline_prior=spline_prior,
        constraints=constraints,
        basis1d=basis1d,
        A_space=A_space,
        A_s0row=A_s0row,
        z_obs_episode=z_obs,
    )
    return model
