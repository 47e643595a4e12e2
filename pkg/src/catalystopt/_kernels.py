"""Compiled inner loops of the incremental solvers for logistic components.

Each kernel runs a batch of pre-drawn indices against components of the form

    f_i(x) = log(1 + exp(-b_i <a_i, x>)) + (lam/2)||x||^2 + (kappa/2)||x - y||^2

with rows given in CSR form, and a regularizer psi = l1||.||_1 + (l2/2)||.||^2.
They mirror the reference step functions in :mod:`catalystopt.solvers` line by
line and mutate their state arrays in place.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _prox_scalar(u, step, l1, l2):
    if l1 > 0.0:
        t = step * l1
        if u > t:
            u = u - t
        elif u < -t:
            u = u + t
        else:
            u = 0.0
    if l2 > 0.0:
        u = u / (1.0 + step * l2)
    return u


@njit(cache=True, nogil=True)
def _component(indptr, indices, data, labels, lam, kappa, y, x, i, g):
    """Write grad f_i(x) into g and return f_i(x)."""
    dot = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        dot += data[k] * x[indices[k]]
    b = labels[i]
    m = b * dot
    if m >= 0.0:
        e = math.exp(-m)
        loss = math.log1p(e)
        sg = e / (1.0 + e)
    else:
        e = math.exp(m)
        loss = -m + math.log1p(e)
        sg = 1.0 / (1.0 + e)
    s = -b * sg
    xx = 0.0
    dd = 0.0
    for j in range(x.shape[0]):
        d = x[j] - y[j]
        g[j] = lam * x[j] + kappa * d
        xx += x[j] * x[j]
        dd += d * d
    for k in range(indptr[i], indptr[i + 1]):
        g[indices[k]] += s * data[k]
    return loss + 0.5 * lam * xx + 0.5 * kappa * dd


@njit(cache=True, nogil=True)
def miso_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
               mu, delta, z, zbar, cprime, x, idx):
    n = z.shape[0]
    p = x.shape[0]
    g = np.empty(p)
    step = 1.0 / mu
    for t in range(idx.shape[0]):
        i = idx[t]
        fi = _component(indptr, indices, data, labels, lam, kappa, y, x, i, g)
        gx = 0.0
        xx = 0.0
        for j in range(p):
            gx += g[j] * x[j]
            xx += x[j] * x[j]
        cprime[i] = (1.0 - delta) * cprime[i] + delta * (fi - gx + 0.5 * mu * xx)
        for j in range(p):
            znew = (1.0 - delta) * z[i, j] + delta * (x[j] - g[j] / mu)
            zbar[j] += (znew - z[i, j]) / n
            z[i, j] = znew
        for j in range(p):
            x[j] = _prox_scalar(zbar[j], step, l1, l2)


@njit(cache=True, nogil=True)
def saga_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
               step, table, mean, x, idx):
    n = table.shape[0]
    p = x.shape[0]
    g = np.empty(p)
    for t in range(idx.shape[0]):
        i = idx[t]
        _component(indptr, indices, data, labels, lam, kappa, y, x, i, g)
        for j in range(p):
            d = g[j] - table[i, j]
            v = d + mean[j]
            mean[j] += d / n
            table[i, j] = g[j]
            x[j] = _prox_scalar(x[j] - step * v, step, l1, l2)


@njit(cache=True, nogil=True)
def sag_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
              step, table, mean, x, idx):
    n = table.shape[0]
    p = x.shape[0]
    g = np.empty(p)
    for t in range(idx.shape[0]):
        i = idx[t]
        _component(indptr, indices, data, labels, lam, kappa, y, x, i, g)
        for j in range(p):
            mean[j] += (g[j] - table[i, j]) / n
            table[i, j] = g[j]
        for j in range(p):
            x[j] = _prox_scalar(x[j] - step * mean[j], step, l1, l2)
