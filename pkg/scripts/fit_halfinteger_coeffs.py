"""Calibrate the quadratic spectral polynomial used for the 2D half-integer
field construction.

The target operator has radial spectral density proportional to
1/(kappa^2 + |w|^2)^{3/2} (exponential correlation in the plane).  A
Markov-representable precision must be a polynomial in the Laplacian, so we
approximate the reciprocal density by q(y) = c0 + c1*y + c2*y^2 with
y = (|w|/kappa)^2, and choose (c0, c1, c2) to minimize the worst-case
absolute error of the implied stationary correlation against exp(-kappa*d)
over scaled distances kappa*d in [0.1, 3].  A final rescaling makes the
spectral mass integral match the exact model, so variance formulas carry
over unchanged.

Run this script to regenerate the constants embedded in the spde module.
"""

import numpy as np
from scipy import optimize, special

# graded radial grid: dense where J0 oscillates and the density has mass
_T = np.concatenate([
    np.linspace(0.0, 20.0, 40001),
    np.linspace(20.0, 400.0, 40001)[1:],
])
_XS = np.linspace(0.1, 3.0, 40)
_J0 = special.j0(np.outer(_XS, _T))          # (nx, nt)
_TARGET = np.exp(-_XS)


def corr_curve(c, j0=_J0, t=_T):
    y = t * t
    dens = t / (c[0] + c[1] * y + c[2] * y * y)
    var = np.trapezoid(dens, t)
    cov = np.trapezoid(j0 * dens, t, axis=-1)
    return cov / var


def objective(logc):
    return np.max(np.abs(corr_curve(np.exp(logc)) - _TARGET))


def main():
    best = None
    for seed_c in ([1.0, 1.5, 1.0], [1.0, 2.0, 0.5], [0.8, 1.2, 0.8], [1.2, 1.0, 1.5]):
        res = optimize.minimize(
            objective, np.log(seed_c), method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000, "maxfev": 4000},
        )
        if best is None or res.fun < best.fun:
            best = res
    c = np.exp(best.x)
    # rescale so the spectral mass integral of 1/q equals the exact value
    # 2 = int_0^inf (1+y)^{-3/2} dy; keeps variance identities exact
    y = _T * _T
    mass = np.trapezoid(2.0 * _T / (c[0] + c[1] * y + c[2] * y * y), _T)  # dy = 2 t dt
    c_scaled = c * (mass / 2.0)
    print("max |corr error| :", best.fun)
    print("raw coefficients :", repr(c))
    print("mass integral    :", mass)
    print("scaled coeffs    :", repr(c_scaled))
    chk = np.array([0.1, 0.2, 0.5, 1.0, 1.5, 2.0, 3.0])
    j0c = special.j0(np.outer(chk, _T))
    print("corr at kd:", dict(zip(chk.tolist(), corr_curve(c_scaled, j0c).round(4).tolist())))
    print("target    :", np.exp(-chk).round(4).tolist())


if __name__ == "__main__":
    main()
