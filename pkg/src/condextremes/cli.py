"""Batch command-line front end.

Subcommands wire the pipeline end to end on plain CSV/JSON artifacts:

    transform   fit per-site marginals, write the Laplace-scale field
    decluster   extract extreme episodes at the conditioning site
    fit         explore the hyperparameter posterior, write the summary
    diagnose    WAIC / CPO / PIT / region exceedance / model chi tables
    cv          hold-out cross-validation RMSE tables
    simulate    conditional episode simulations from the fitted model
    chi         empirical tail-correlation tables

Each run is driven by a flat key = value config file; every default
mirrors the reference analysis choices (0.95 marginal quantile, runs
parameter 12, 14 interior spline knots, spline prior range 100 km and sd
0.5, the stated prior tail probabilities).  With the default coordinate
multipliers (1.04 per degree longitude, 1.11 per degree latitude) all
distances are in units of roughly 100 km, so the default range prior
threshold is 1.0 in coordinate units.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .episodes import EpisodeSet, RunsConfig, decluster_runs, extract_episodes
from .errors import ConfigError, DataError, NumericalError
from .inference import FitConfig, PriorSpec, fit
from .marginals import fit_gpd, to_laplace
from .mesh import Mesh1D, Mesh2D, build_mesh_2d
from .model import ModelSpec, assemble
from .simulate import simulator_from_fit, simulator_from_params

_DEFAULTS = {
    "coords.lon_multiplier": 1.04,
    "coords.lat_multiplier": 1.11,
    "marginal.quantile": 0.95,
    "episodes.r": 12,
    "episodes.steps_per_year": 0,
    "episodes.r_table_max": 30,
    "conditioning.site_id": "auto",
    "mesh.inner_edge": 0.25,
    "mesh.outer_edge": 0.5,
    "mesh.extension": 1.0,
    "mesh.file": "",
    "spline.interior_knots": 14,
    "spline.range": 1.0,
    "spline.sd": 0.5,
    "spline.ar1_rho": 0.7,
    "model.variant": 3,
    "model.residual": "subtract",
    "model.ell": 1,
    "model.zeta": 1.5,
    "model.alpha_lambda": 0.0,
    "model.alpha_kappa": 1.0,
    "prior.sigma.r": 0.1,
    "prior.sigma.p": 0.5,
    "prior.sigma_z.r": 1.0,
    "prior.sigma_z.p": 0.5,
    "prior.rho_z.r": 1.0,
    "prior.rho_z.p": 0.5,
    "prior.rho_t.r": 0.5,
    "prior.rho_t.p": 0.5,
    "prior.beta.mean": -0.6931471805599453,
    "prior.beta.var": 1.0,
    "fit.seed": 0,
    "fit.samples": 1000,
    "fit.max_iter": 200,
    "fit.beta_logit": False,
    "cv.folds": 7,
    "cv.quadrant": True,
    "diagnose.n_regions": 10,
    "diagnose.n_sim": 10000,
    "diagnose.q": 0.95,
    "chi.q": [0.9, 0.95, 0.99],
    "chi.n_bins": 12,
    "sim.n": 1000,
    "sim.q": 0.95,
}


def parse_config(path):
    """Flat key = value file; values parsed as JSON where possible."""
    cfg = dict(_DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            cfg[key] = json.loads(val)
        except json.JSONDecodeError:
            cfg[key] = val
    return cfg


def _require(cfg, key):
    if key not in cfg or cfg[key] in ("", None):
        raise ConfigError(f"missing required config key: {key}")
    return cfg[key]


def _outdir(cfg):
    out = Path(_require(cfg, "data.output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# data ingestion

def ingest(csv_path, lon_mult, lat_mult):
    """Read the raw long-format CSV into a site table and value matrix.

    Expects a header ``site_id,lon,lat,time,value``; missing entries are
    simply absent rows.  Duplicate (site, time) pairs and malformed rows
    are reported with their line number.  Coordinates are scaled by the
    per-axis multipliers.
    """
    path = Path(csv_path)
    if not path.exists():
        raise DataError(f"input file not found: {csv_path}")
    site_order = []
    site_coord = {}
    records = {}
    times = set()
    with open(path) as fh:
        header = fh.readline().strip()
        if header.split(",")[:5] != ["site_id", "lon", "lat", "time", "value"]:
            raise DataError(f"{csv_path}:1: expected header site_id,lon,lat,time,value")
        for lineno, raw in enumerate(fh, 2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataError(f"{csv_path}:{lineno}: expected 5 fields")
            sid, lon, lat, t, val = parts
            try:
                lon, lat, t, val = float(lon), float(lat), int(t), float(val)
            except ValueError as err:
                raise DataError(f"{csv_path}:{lineno}: {err}") from None
            if sid not in site_coord:
                site_order.append(sid)
                site_coord[sid] = (lon * lon_mult, lat * lat_mult)
            if (sid, t) in records:
                raise DataError(f"{csv_path}:{lineno}: duplicate entry for ({sid}, {t})")
            records[(sid, t)] = val
            times.add(t)
    if not records:
        raise DataError(f"{csv_path}: no data rows")
    times = sorted(times)
    tindex = {t: j for j, t in enumerate(times)}
    sindex = {sid: i for i, sid in enumerate(site_order)}
    d, T = len(site_order), len(times)
    values = np.full((d, T), np.nan)
    for (sid, t), val in records.items():
        values[sindex[sid], tindex[t]] = val
    mask = np.isfinite(values)
    coords = np.array([site_coord[s] for s in site_order])
    return site_order, coords, np.array(times), values, mask


def _write_sites(path, site_ids, coords):
    with open(path, "w") as fh:
        fh.write("site_id,x,y\n")
        for sid, (x, y) in zip(site_ids, coords):
            fh.write(f"{sid},{float(x)!r},{float(y)!r}\n")


def _read_sites(path):
    site_ids, xs, ys = [], [], []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            sid, x, y = line.strip().split(",")
            site_ids.append(sid)
            xs.append(float(x))
            ys.append(float(y))
    return site_ids, np.column_stack([np.array(xs), np.array(ys)])


def _write_laplace(path, site_ids, times, values, mask):
    with open(path, "w") as fh:
        fh.write("site_id,time,value\n")
        for i, sid in enumerate(site_ids):
            for j, t in enumerate(times):
                if mask[i, j]:
                    fh.write(f"{sid},{t},{float(values[i, j])!r}\n")


def _read_laplace(path, site_ids):
    index = {sid: i for i, sid in enumerate(site_ids)}
    entries = []
    times = set()
    with open(path) as fh:
        fh.readline()
        for line in fh:
            sid, t, val = line.strip().split(",")
            entries.append((index[sid], int(t), float(val)))
            times.add(int(t))
    times = sorted(times)
    tindex = {t: j for j, t in enumerate(times)}
    values = np.full((len(site_ids), len(times)), np.nan)
    for i, t, val in entries:
        values[i, tindex[t]] = val
    return np.array(times), values, np.isfinite(values)


# ---------------------------------------------------------------------------
# shared assembly helpers

def _pick_s0(cfg, site_ids, coords):
    choice = cfg["conditioning.site_id"]
    if choice == "auto":
        center = coords.mean(axis=0)
        return int(np.argmin(np.linalg.norm(coords - center, axis=1)))
    sid = str(choice)
    if sid not in site_ids:
        raise ConfigError(f"conditioning.site_id {sid!r} not among the sites")
    return site_ids.index(sid)


def _model_spec(cfg):
    ell = int(cfg["model.ell"])
    zeta = float(cfg["model.zeta"])
    quantile = float(cfg["marginal.quantile"])
    if "model.alpha" in cfg:
        spec = ModelSpec(
            alpha_form=cfg["model.alpha"],
            gamma=bool(cfg.get("model.gamma", True)),
            beta_mode=cfg.get("model.beta", "fixed"),
            residual=cfg["model.residual"],
            ell=ell,
            threshold_quantile=quantile,
            alpha_lambda=float(cfg["model.alpha_lambda"]) or None,
            alpha_kappa=float(cfg["model.alpha_kappa"]),
            zeta=zeta,
        )
    else:
        spec = ModelSpec.variant(
            int(cfg["model.variant"]),
            residual=cfg["model.residual"],
            ell=ell,
            threshold_quantile=quantile,
            zeta=zeta,
        )
    return spec


def _priors(cfg):
    return {
        "sigma": PriorSpec("noise_sd", float(cfg["prior.sigma.r"]), float(cfg["prior.sigma.p"])),
        "sigma_z": PriorSpec("sd", float(cfg["prior.sigma_z.r"]), float(cfg["prior.sigma_z.p"])),
        "rho_z": PriorSpec("range", float(cfg["prior.rho_z.r"]), float(cfg["prior.rho_z.p"])),
        "rho_t": PriorSpec("ar1", float(cfg["prior.rho_t.r"]), float(cfg["prior.rho_t.p"])),
        "beta": PriorSpec("lognormal", float(cfg["prior.beta.mean"]), float(cfg["prior.beta.var"])),
    }


def _fit_config(cfg):
    return FitConfig(
        seed=int(cfg["fit.seed"]),
        max_iter=int(cfg["fit.max_iter"]),
        beta_logit=bool(cfg["fit.beta_logit"]),
    )


def _load_episode_set(cfg):
    out = _outdir(cfg)
    site_ids, coords = _read_sites(out / "sites.csv")
    meta = json.loads((out / "episodes_meta.json").read_text())
    ell, u = meta["ell"], meta["u"]
    s0 = site_ids.index(meta["s0_site_id"])
    n = meta["n"]
    d = len(site_ids)
    values = np.full((n, d, ell), np.nan)
    index = {sid: i for i, sid in enumerate(site_ids)}
    with open(out / "episodes.csv") as fh:
        fh.readline()
        for line in fh:
            ep, sid, t, val, _ = line.strip().split(",")
            values[int(ep), index[sid], int(t)] = float(val)
    mask = np.isfinite(values)
    x = values[:, s0, 0].copy()
    return EpisodeSet(values=values, mask=mask, x=x, u=u, site_coords=coords,
                      s0_index=s0, site_ids=site_ids), site_ids


def _build_meshes(cfg, episodes):
    if cfg["mesh.file"]:
        mesh2d = Mesh2D.from_json(cfg["mesh.file"])
    else:
        mesh2d = build_mesh_2d(
            episodes.site_coords,
            float(cfg["mesh.inner_edge"]),
            float(cfg["mesh.outer_edge"]),
            float(cfg["mesh.extension"]),
        )
    mesh1d = Mesh1D.regular(
        episodes.distances().max(), interior_knots=int(cfg["spline.interior_knots"])
    )
    return mesh2d, mesh1d


def _assemble(cfg, episodes, holdout_mask=None):
    mesh2d, mesh1d = _build_meshes(cfg, episodes)
    spec = _model_spec(cfg)
    return assemble(
        spec,
        episodes,
        mesh2d,
        mesh1d=mesh1d,
        spline_range=float(cfg["spline.range"]),
        spline_sd=float(cfg["spline.sd"]),
        spline_ar1_rho=float(cfg["spline.ar1_rho"]),
        holdout_mask=holdout_mask,
    )


def _run_fit(cfg, episodes):
    model = _assemble(cfg, episodes)
    return fit(model, priors=_priors(cfg), config=_fit_config(cfg))


# ---------------------------------------------------------------------------
# subcommands

def cmd_transform(cfg):
    out = _outdir(cfg)
    quantile = float(cfg["marginal.quantile"])
    site_ids, coords, times, values, mask = ingest(
        _require(cfg, "data.input_csv"),
        float(cfg["coords.lon_multiplier"]),
        float(cfg["coords.lat_multiplier"]),
    )
    laplace = np.full_like(values, np.nan)
    docs = []
    for i, sid in enumerate(site_ids):
        sample = values[i, mask[i]]
        m = fit_gpd(sample, quantile, site_id=sid)
        laplace[i, mask[i]] = to_laplace(sample, m)
        docs.append(json.loads(m.to_json()))
    (out / "marginals.json").write_text(
        json.dumps({"quantile": quantile, "sites": docs}, sort_keys=True)
    )
    _write_sites(out / "sites.csv", site_ids, coords)
    _write_laplace(out / "laplace.csv", site_ids, times, laplace, mask)
    return {"sites": len(site_ids), "times": int(len(times))}


def cmd_decluster(cfg):
    out = _outdir(cfg)
    site_ids, coords = _read_sites(out / "sites.csv")
    times, values, mask = _read_laplace(out / "laplace.csv", site_ids)
    s0 = _pick_s0(cfg, site_ids, coords)
    quantile = float(cfg["marginal.quantile"])
    u = -np.log(2.0 * (1.0 - quantile))
    steps = int(cfg["episodes.steps_per_year"])
    bounds = tuple(range(steps, values.shape[1], steps)) if steps else ()
    ell = int(cfg["model.ell"])
    # unobserved steps at the conditioning site count as non-exceedances
    series = np.where(mask[s0], values[s0], u - 1.0)
    runs = RunsConfig(u=u, r=int(cfg["episodes.r"]), ell=ell, year_boundaries=bounds)
    starts = decluster_runs(series, runs)
    if not starts:
        raise DataError("no threshold exceedances at the conditioning site")
    episodes = extract_episodes(values, mask, coords, s0, starts, runs,
                                site_ids=site_ids)
    episodes.to_csv(out / "episodes.csv")
    (out / "episodes_meta.json").write_text(json.dumps({
        "u": u,
        "s0_site_id": site_ids[s0],
        "ell": ell,
        "n": episodes.n,
        "r": int(cfg["episodes.r"]),
    }, sort_keys=True))
    with open(out / "cluster_counts.csv", "w") as fh:
        fh.write("r,n_clusters\n")
        for r in range(1, int(cfg["episodes.r_table_max"]) + 1):
            cnt = len(decluster_runs(
                series, RunsConfig(u=u, r=r, ell=ell, year_boundaries=bounds)
            ))
            fh.write(f"{r},{cnt}\n")
    return {"episodes": episodes.n, "u": u, "s0": site_ids[s0]}


def cmd_fit(cfg):
    out = _outdir(cfg)
    episodes, _ = _load_episode_set(cfg)
    result = _run_fit(cfg, episodes)
    text = result.to_json(out / "fit.json")
    return {"fit_hash": dg.content_hash(text),
            "log_marginal_likelihood": result.summary()["log_marginal_likelihood_mode"]}


def cmd_diagnose(cfg):
    out = _outdir(cfg)
    episodes, _ = _load_episode_set(cfg)
    result = _run_fit(cfg, episodes)
    text = result.to_json()
    fit_hash = dg.content_hash(text)
    stored = out / "fit.json"
    if stored.exists() and dg.content_hash(stored.read_text()) != fit_hash:
        raise ConfigError(
            "stored fit.json does not match this configuration; re-run fit"
        )
    samples = int(cfg["fit.samples"])
    seed = int(cfg["fit.seed"])
    w = dg.waic(result, samples=samples, seed=seed + 1)
    cpo, pit, bad = dg.cpo_pit(result, samples=samples, seed=seed + 2)
    sim = simulator_from_fit(result)
    regions = dg.ring_partition(episodes.site_coords, episodes.s0_index,
                                int(cfg["diagnose.n_regions"]))
    region = dg.region_exceedance(
        sim, regions, float(cfg["diagnose.q"]),
        n_sim=int(cfg["diagnose.n_sim"]), seed=seed + 3, episodes=episodes,
    )
    curves = dg.model_chi_q(sim, list(cfg["chi.q"]),
                            n_sim=int(cfg["diagnose.n_sim"]), seed=seed + 4,
                            n_bins=int(cfg["chi.n_bins"]))
    report = dg.DiagnosticReport(
        waic=w, cpo=cpo, pit=pit, cpo_unreliable=bad,
        region=region, chi_curves=curves, fit_hash=fit_hash,
    )
    report.to_json(out / "diagnostics.json")
    report.write_cpo_csv(out / "cpo_pit.csv")
    report.write_region_csv(out / "region_exceedance.csv")
    report.write_chi_csv(out / "chi_model.csv")
    return {"waic": w, "fit_hash": fit_hash}


def cmd_cv(cfg):
    out = _outdir(cfg)
    episodes, _ = _load_episode_set(cfg)
    mesh2d, mesh1d = _build_meshes(cfg, episodes)
    spec = _model_spec(cfg)
    kw = dict(
        mesh1d=mesh1d,
        spline_range=float(cfg["spline.range"]),
        spline_sd=float(cfg["spline.sd"]),
        spline_ar1_rho=float(cfg["spline.ar1_rho"]),
    )
    rows = []
    if bool(cfg["cv.quadrant"]):
        mask = dg.quadrant_holdout(episodes)
        rmse, _ = dg.rmse_cv(spec, episodes, mesh2d, mask, priors=_priors(cfg),
                             fit_config=_fit_config(cfg), **kw)
        rows.append(("quadrant", -1, rmse))
    if episodes.ell > 1:
        folds = dg.forecast_folds(episodes, int(cfg["cv.folds"]),
                                  seed=int(cfg["fit.seed"]))
        for k, mask in enumerate(folds):
            rmse, _ = dg.rmse_cv(spec, episodes, mesh2d, mask, priors=_priors(cfg),
                                 fit_config=_fit_config(cfg), **kw)
            rows.append(("forecast", k, rmse))
    if not rows:
        raise ConfigError("nothing to cross-validate: enable cv.quadrant or use ell > 1")
    with open(out / "rmse_cv.csv", "w") as fh:
        fh.write("holdout,fold,rmse\n")
        for name, fold, rmse in rows:
            fh.write(f"{name},{fold},{float(rmse)!r}\n")
    return {"rows": len(rows), "rmse": {f"{n}:{f}": r for n, f, r in rows}}


def cmd_simulate(cfg):
    out = _outdir(cfg)
    episodes, site_ids = _load_episode_set(cfg)
    if "sim.sigma2" in cfg:
        mesh2d, _ = _build_meshes(cfg, episodes)
        sim = simulator_from_params(
            episodes.site_coords, episodes.s0_index, episodes.u, mesh2d,
            sigma2=float(cfg["sim.sigma2"]),
            alpha=float(cfg.get("sim.alpha", 1.0)),
            gamma=float(cfg.get("sim.gamma", 0.0)),
            beta=float(cfg.get("sim.beta", 0.0)),
            sigma_z=float(cfg["sim.sigma_z"]) if "sim.sigma_z" in cfg else None,
            rho_z=float(cfg["sim.rho_z"]) if "sim.rho_z" in cfg else None,
            rho_t=float(cfg["sim.rho_t"]) if "sim.rho_t" in cfg else None,
            ell=int(cfg["model.ell"]),
            residual=cfg["model.residual"],
            zeta=float(cfg["model.zeta"]),
        )
    else:
        sim = simulator_from_fit(_run_fit(cfg, episodes))
    x, fields = sim.simulate(int(cfg["sim.n"]), int(cfg["fit.seed"]) + 5,
                             q=float(cfg["sim.q"]))
    with open(out / "simulations.csv", "w") as fh:
        fh.write("sim_id,site_id,time_offset,laplace_value\n")
        for s in range(fields.shape[0]):
            for i, sid in enumerate(site_ids):
                for t in range(fields.shape[2]):
                    fh.write(f"{s},{sid},{t},{float(fields[s, i, t])!r}\n")
    return {"simulations": int(fields.shape[0])}


def cmd_chi(cfg):
    out = _outdir(cfg)
    site_ids, coords = _read_sites(out / "sites.csv")
    times, values, mask = _read_laplace(out / "laplace.csv", site_ids)
    s0 = _pick_s0(cfg, site_ids, coords)
    dist = np.linalg.norm(coords - coords[s0], axis=1)
    qs = list(cfg["chi.q"])
    from .marginals import chi_q as chi_fn
    both0 = mask[s0]
    with open(out / "chi_empirical.csv", "w") as fh:
        fh.write("site_id,distance,q,chi\n")
        for i, sid in enumerate(site_ids):
            both = both0 & mask[i]
            a, b = values[s0, both], values[i, both]
            for q in qs:
                try:
                    val = chi_fn(a, b, q)
                except (ValueError, DataError):
                    val = np.nan
                fh.write(f"{sid},{float(dist[i])!r},{q},{float(val)!r}\n")
    return {"sites": len(site_ids), "q": qs}


_COMMANDS = {
    "transform": cmd_transform,
    "decluster": cmd_decluster,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "chi": cmd_chi,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="condextremes",
        description="Conditional spatial extremes modeling pipeline",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("config", help="path to the run configuration file")
    parser.add_argument("--output-dir", default=None,
                        help="override data.output_dir from the config")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.output_dir:
            cfg["data.output_dir"] = args.output_dir
        info = _COMMANDS[args.command](cfg)
        print(json.dumps({"command": args.command, "status": "ok", **(info or {})},
                         sort_keys=True))
        return 0
    except ConfigError as err:
        print(json.dumps({"status": "error", "kind": "config", "message": str(err)}),
              file=sys.stderr)
        return 2
    except (DataError, ValueError) as err:
        print(json.dumps({"status": "error", "kind": "data", "message": str(err)}),
              file=sys.stderr)
        return 3
    except NumericalError as err:
        print(json.dumps({"status": "error", "kind": "numerical", "message": str(err)}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
