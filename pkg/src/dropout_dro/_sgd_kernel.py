"""Compiled inner loop of dropout SGD.

Random numbers are generated by the caller with numpy and passed in, so the
kernel is a pure function of its inputs and the Python-side seed fully
determines the trajectory.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _mean_map(eta, kind):
    if kind == 0:
        return eta
    if kind == 1:
        if eta >= 0:
            return 1.0 / (1.0 + math.exp(-eta))
        e = math.exp(eta)
        return e / (1.0 + e)
    return math.exp(eta)


@njit(cache=True, nogil=True)
def sgd_run(beta, x, y, rows, u, deltas, scales, lr, kind, limit):
    """Run ``rows.shape[0]`` steps in place; False if ``||beta||_inf`` passes ``limit``."""
    steps, batch = rows.shape
    d = beta.shape[0]
    grad = np.zeros(d)
    xt = np.zeros(d)
    for t in range(steps):
        grad[:] = 0.0
        for b in range(batch):
            i = rows[t, b]
            eta = 0.0
            for j in range(d):
                if u[t, b, j] < deltas[j]:
                    xt[j] = 0.0
                else:
                    xt[j] = x[i, j] * scales[j]
                eta += xt[j] * beta[j]
            r = _mean_map(eta, kind) - y[i]
            for j in range(d):
                grad[j] += r * xt[j]
        for j in range(d):
            beta[j] -= lr * grad[j] / batch
            if not abs(beta[j]) <= limit:
                return False
    return True
