"""Pure numpy RK4 kernels; the fallback when the compiled core is absent.

Every kernel integrates the rows of ``X`` (shape ``(N, m)``, one member per
row) in place over ``nsteps`` substeps of size ``dt`` and returns the lowest
index of a row containing NaN/Inf, or -1.
"""

import numpy as np


def _finish(X):
    bad = ~np.isfinite(X).all(axis=1)
    return int(np.argmax(bad)) if bad.any() else -1


def _rk4(f, X, dt, nsteps):
    half = 0.5 * dt
    sixth = dt / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(nsteps):
            k1 = f(X)
            k2 = f(X + half * k1)
            k3 = f(X + half * k2)
            k4 = f(X + dt * k3)
            X += sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _finish(X)


def rk4_lorenz63(X, sigma, rho, beta, dt, nsteps):
    def f(Z):
        x, y, z = Z[:, 0], Z[:, 1], Z[:, 2]
        return np.column_stack((sigma * (y - x), x * (rho - z) - y, x * y - beta * z))

    return _rk4(f, X, dt, nsteps)


def rk4_lorenz96(X, forcing, dt, nsteps):
    def f(Z):
        return (np.roll(Z, -1, axis=1) - np.roll(Z, 2, axis=1)) * np.roll(Z, 1, axis=1) - Z + forcing

    return _rk4(f, X, dt, nsteps)


def rk4_linear(X, A, dt, nsteps):
    At = np.ascontiguousarray(np.asarray(A, dtype=float).T)
    return _rk4(lambda Z: Z @ At, X, dt, nsteps)
