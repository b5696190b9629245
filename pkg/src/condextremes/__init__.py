"""Conditional spatial and space-time extremes with sparse GMRFs.

The package models a process observed at many sites, conditioned on a
threshold exceedance at a fixed site, as a latent Gaussian model: fixed
distance profiles scale the conditioning value, a low-rank Markov random
field carries the residual spatial (or space-time) dependence, and exact
Laplace-style integration gives the hyperparameter posterior.

Typical flow: fit per-site marginals and move to the Laplace scale
(marginals), extract declustered extreme episodes (episodes), assemble a
model variant on a mesh (mesh, model), explore its posterior (inference),
and validate or simulate from the fit (diagnostics, simulate).  The cli
module wires the same steps into batch subcommands.
"""

from .diagnostics import (
    DiagnosticReport,
    cpo_pit,
    model_chi_q,
    region_exceedance,
    ring_partition,
    rmse_cv,
    waic,
)
from .episodes import EpisodeSet, RunsConfig, decluster_runs, extract_episodes
from .errors import ConfigError, DataError, NumericalError
from .gmrf import (
    CholeskyFactor,
    SparsePrecision,
    ar1_precision,
    condition_by_kriging,
    factorize,
    kronecker,
    sample_gmrf,
)
from .inference import (
    FitConfig,
    HyperParams,
    PosteriorFit,
    PriorSpec,
    fit,
    latent_posterior,
    log_marginal_likelihood,
    pc_prior_logdensity,
    posterior_sample,
)
from .marginals import MarginalModel, chi_q, fit_gpd, from_laplace, to_laplace
from .mesh import (
    Mesh1D,
    Mesh2D,
    build_mesh_2d,
    condition_observation_matrix,
    observation_matrix,
    replicate_observation_matrix,
)
from .model import (
    AssembledModel,
    ModelSpec,
    assemble,
    parametric_alpha,
    spline_prior_precision,
)
from .simulate import (
    ConditionalSimulator,
    simulate_episode_set,
    simulator_from_fit,
    simulator_from_params,
)
from .spde import SpdeParams, matern_to_spde, spde_precision, spde_to_matern

__version__ = "0.1.0"
