import numpy as np
import pytest

from condextremes.inference import FitConfig, PriorSpec, fit
from condextremes.mesh import build_mesh_2d
from condextremes.model import ModelSpec, assemble
from condextremes.simulate import simulate_episode_set, simulator_from_params


def make_grid_coords(side, spacing=1.0):
    return np.array(
        [[i * spacing, j * spacing] for j in range(side) for i in range(side)],
        dtype=np.float64,
    )


def synthetic_setup(side=7, n=30, ell=1, seed=7, sigma2=0.01, sigma_z=1.2,
                    rho_z=3.0, rho_t=0.6, alpha=None, gamma=0.0,
                    beta=0.0, residual="subtract"):
    """Grid sites, mesh, and episodes simulated from a known model."""
    coords = make_grid_coords(side)
    s0 = (side // 2) * side + side // 2
    mesh = build_mesh_2d(coords, 1.2, 2.5, 4.0)
    u = -np.log(2.0 * 0.05)
    if alpha is None:
        alpha = lambda h: np.exp(-((h / 4.0) ** 1.2))
    sim = simulator_from_params(
        coords, s0, u, mesh, sigma2=sigma2, alpha=alpha, gamma=gamma,
        beta=beta, sigma_z=sigma_z, rho_z=rho_z,
        rho_t=rho_t if ell > 1 else None, ell=ell, residual=residual,
    )
    episodes = simulate_episode_set(sim, n, seed)
    return coords, s0, mesh, episodes


def tight_priors(rho_z=3.0):
    return {
        "rho_z": PriorSpec("range", rho_z, 0.5),
        "sigma_z": PriorSpec("sd", 1.0, 0.5),
    }


@pytest.fixture(scope="session")
def model3_fit():
    """One moderately sized Model 3 fit shared across test modules."""
    coords, s0, mesh, episodes = synthetic_setup(side=7, n=30, seed=11)
    model = assemble(ModelSpec.variant(3), episodes, mesh, spline_range=4.0)
    result = fit(model, priors=tight_priors(), config=FitConfig(seed=3))
    return result
