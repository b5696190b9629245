"""Benchmark the sparse Cholesky kernels: numba JIT vs pure-Python fallback.

Runs the factorize / solve / sample cycle on a representative posterior
precision (2D field blocks coupled to dense spline columns) in a child
process per backend, selected by the CONDEXTREMES_NUMBA environment
variable, and reports wall times.

Usage: python benchmarks/bench_kernels.py [--size N] [--reps R]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

_WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    import scipy.sparse as sp
    from condextremes import gmrf
    from condextremes.mesh import build_mesh_2d
    from condextremes.spde import matern_to_spde, spde_precision
    from condextremes._accel import NUMBA_ENABLED

    size, reps = int(sys.argv[1]), int(sys.argv[2])
    side = max(4, int(np.sqrt(size)))
    pts = np.array([[i, j] for j in range(side) for i in range(side)], float)
    mesh = build_mesh_2d(pts, 1.0, 2.5, 3.0)
    q = spde_precision(mesh, matern_to_spde(side / 3.0, 1.0, 0.5, 2)).m
    n_blocks = 8
    rng = np.random.default_rng(0)
    blocks = [q] * n_blocks
    big = sp.block_diag(blocks, format="csc")
    m = big.shape[0]
    coupler = sp.csc_matrix(
        (rng.uniform(0.01, 0.1, m * 4),
         (np.tile(np.arange(m), 4), np.repeat(np.arange(4), m))),
        shape=(m, 4),
    )
    corner = sp.identity(4, format="csc") * (m * 1.0)
    Q = sp.bmat([[big + sp.identity(m) * 2.0, coupler],
                 [coupler.T, corner]], format="csc")

    t0 = time.perf_counter()
    f = gmrf.factorize(Q)
    t_first = time.perf_counter() - t0      # includes JIT compile on numba path

    times = {"factorize": [], "solve": [], "sample": []}
    b = rng.standard_normal(Q.shape[0])
    for _ in range(reps):
        t0 = time.perf_counter(); f = gmrf.factorize(Q)
        times["factorize"].append(time.perf_counter() - t0)
        t0 = time.perf_counter(); x = f.solve(b)
        times["solve"].append(time.perf_counter() - t0)
        t0 = time.perf_counter(); s = gmrf.sample_gmrf(f, 256, seed=1)
        times["sample"].append(time.perf_counter() - t0)
    print(json.dumps({
        "numba": NUMBA_ENABLED,
        "n": Q.shape[0],
        "nnz_factor": f.factor_nnz,
        "first_factorize_s": t_first,
        "checksum": float(np.sum(x) + np.sum(s)),
        **{k: min(v) for k, v in times.items()},
    }))
""")


def run(numba_on, size, reps):
    env = dict(os.environ, CONDEXTREMES_NUMBA="1" if numba_on else "0")
    out = subprocess.run(
        [sys.executable, "-c", _WORKER, str(size), str(reps)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=400, help="field block size")
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()
    jit = run(True, args.size, args.reps)
    py = run(False, args.size, args.reps)
    assert abs(jit["checksum"] - py["checksum"]) < 1e-6 * max(1, abs(py["checksum"])), \
        "backends disagree"
    print(f"matrix n={jit['n']}  factor nnz={jit['nnz_factor']}")
    print(f"{'kernel':<12}{'numba':>12}{'pure':>12}{'speedup':>10}")
    for key in ("factorize", "solve", "sample"):
        s = py[key] / jit[key]
        print(f"{key:<12}{jit[key]:>12.4f}{py[key]:>12.4f}{s:>9.1f}x")
    print(f"first factorize incl. JIT compile: {jit['first_factorize_s']:.2f}s")


if __name__ == "__main__":
    main()
