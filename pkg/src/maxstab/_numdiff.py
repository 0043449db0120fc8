"""Central finite-difference helpers with a fixed step policy."""

import numpy as np

GRAD_REL_STEP = 1e-5
GRAD_ABS_STEP = 1e-7
# second differences divide by h**2, so they need a larger step than gradients
HESS_REL_STEP = 1e-4
HESS_ABS_STEP = 1e-4


def steps(x, rel, floor):
    x = np.asarray(x, dtype=float)
    return np.maximum(rel * np.abs(x), floor)


def hessian(f, x, h=None):
    """Central-difference Hessian of a scalar function, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if h is None:
        h = steps(x, HESS_REL_STEP, HESS_ABS_STEP)
    f0 = f(x)
    out = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        out[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4.0 * h[i] * h[j]
            )
            out[i, j] = out[j, i] = val
    return 0.5 * (out + out.T)
