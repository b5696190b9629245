"""Generate the bundled synthetic test dataset.

A space-time Gaussian field (Matern in space through the package's own
sparse construction, AR(1) in time) on a 6x6 lon/lat grid over four
synthetic summer seasons, written in the raw long CSV format the
`transform` subcommand ingests.  Deterministic: re-running reproduces the
file byte for byte.

Usage: python scripts/make_synthetic.py [output_csv]
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from condextremes.gmrf import factorize, sample_gmrf  # noqa: E402
from condextremes.mesh import build_mesh_2d, observation_matrix  # noqa: E402
from condextremes.rng import rng_from_seed  # noqa: E402
from condextremes.spde import matern_to_spde, spde_precision  # noqa: E402

LON0, LAT0, STEP, NSIDE = 36.0, 18.0, 0.2, 6
YEARS, STEPS_PER_YEAR = 8, 150
RHO_T = 0.7
SPACE_RANGE, SPACE_SD = 0.6, 1.0
NOISE_SD = 0.3
SEED = 20240901


def main(out_path):
    lon = LON0 + STEP * np.arange(NSIDE)
    lat = LAT0 + STEP * np.arange(NSIDE)
    grid = [(lo, la) for la in lat for lo in lon]
    coords = np.array([(lo * 1.04, la * 1.11) for lo, la in grid])
    mesh = build_mesh_2d(coords, 0.12, 0.3, 0.6)
    A = observation_matrix(mesh, coords)
    q = spde_precision(mesh, matern_to_spde(SPACE_RANGE, SPACE_SD, 0.5, 2))
    f = factorize(q.m)
    rng = rng_from_seed(SEED)
    T = YEARS * STEPS_PER_YEAR
    innov = sample_gmrf(f, T, rng)  # (T, m)
    field = np.empty_like(innov)
    field[0] = innov[0]
    for t in range(1, T):
        field[t] = RHO_T * field[t - 1] + np.sqrt(1 - RHO_T**2) * innov[t]
        if t % STEPS_PER_YEAR == 0:
            field[t] = innov[t]  # independent seasons
    at_sites = (A @ field.T).T  # (T, d)
    noise = rng.normal(scale=NOISE_SD, size=at_sites.shape)
    base = 30.0 - 1.2 * (np.array([la for _, la in grid]) - LAT0)
    values = base[None, :] + 0.9 * at_sites + noise
    with open(out_path, "w") as fh:
        fh.write("site_id,lon,lat,time,value\n")
        for i, (lo, la) in enumerate(grid):
            sid = f"s{i:02d}"
            for t in range(T):
                fh.write(f"{sid},{lo:.2f},{la:.2f},{t},{values[t, i]:.6f}\n")
    print(f"wrote {out_path}: {len(grid)} sites x {T} steps")


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "data/synthetic_field.csv"
    Path(target).parent.mkdir(parents=True, exist_ok=True)
    main(target)
