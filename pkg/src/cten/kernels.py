"""Inner-loop kernels with paired numba / numpy implementations.

Each kernel exists twice: a ``*_np`` version written with array operations and a
``*_nb`` version compiled with numba. The public name is bound to one of them
according to :data:`cten._accel.USE_NUMBA`. Both versions are always importable
so tests and the benchmark can compare them directly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# phase modulation: psi_r = h*cos(w t + phi), psi_i = h*sin(w t + phi)
# h has shape [N, T, H]


def wave_forward_np(h, omega, phi, t):
    theta = t[:, None] * omega[None, :] + phi[None, :]
    c = np.cos(theta)
    s = np.sin(theta)
    return h * c, h * s, c, s


@njit
def wave_forward_nb(h, omega, phi, t):
    n, nt, nh = h.shape
    c = np.empty((nt, nh))
    s = np.empty((nt, nh))
    for i in range(nt):
        for j in range(nh):
            th = t[i] * omega[j] + phi[j]
            c[i, j] = np.cos(th)
            s[i, j] = np.sin(th)
    pr = np.empty_like(h)
    pi = np.empty_like(h)
    for b in range(n):
        for i in range(nt):
            for j in range(nh):
                v = h[b, i, j]
                pr[b, i, j] = v * c[i, j]
                pi[b, i, j] = v * s[i, j]
    return pr, pi, c, s


def wave_backward_np(h, c, s, t, g_r, g_i):
    dh = g_r * c + g_i * s
    dtheta = (g_i * c - g_r * s) * h
    dtheta = dtheta.sum(axis=0)
    return dh, dtheta.T @ t, dtheta.sum(axis=0)


@njit
def wave_backward_nb(h, c, s, t, g_r, g_i):
    n, nt, nh = h.shape
    dh = np.empty_like(h)
    domega = np.zeros(nh)
    dphi = np.zeros(nh)
    for b in range(n):
        for i in range(nt):
            ti = t[i]
            for j in range(nh):
                gr = g_r[b, i, j]
                gi = g_i[b, i, j]
                dh[b, i, j] = gr * c[i, j] + gi * s[i, j]
                d = (gi * c[i, j] - gr * s[i, j]) * h[b, i, j]
                domega[j] += d * ti
                dphi[j] += d
    return dh, domega, dphi


# ---------------------------------------------------------------------------
# row-wise max with lowest-index argmax; x has shape [N, L]


def rowmax_np(x):
    idx = np.argmax(x, axis=1)
    return x[np.arange(x.shape[0]), idx], idx


@njit
def rowmax_nb(x):
    n, m = x.shape
    out = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for r in range(n):
        best = x[r, 0]
        k = 0
        for j in range(1, m):
            if x[r, j] > best:
                best = x[r, j]
                k = j
        out[r] = best
        idx[r] = k
    return out, idx


def rowmax_scatter_np(g, idx, m):
    out = np.zeros((g.shape[0], m))
    out[np.arange(g.shape[0]), idx] = g
    return out


@njit
def rowmax_scatter_nb(g, idx, m):
    n = g.shape[0]
    out = np.zeros((n, m))
    for r in range(n):
        out[r, idx[r]] = g[r]
    return out


# ---------------------------------------------------------------------------
# leaky accumulation acc[t] = decay * acc[t-1] + h[t] along axis 0 of [T, H]


def exp_accumulate_np(h, decay):
    nt = h.shape[0]
    lag = np.arange(nt)[:, None] - np.arange(nt)[None, :]
    weights = np.where(lag >= 0, decay ** np.maximum(lag, 0).astype(np.float64), 0.0)
    return weights @ h


@njit
def exp_accumulate_nb(h, decay):
    nt, nh = h.shape
    out = np.empty_like(h)
    for j in range(nh):
        acc = 0.0
        for i in range(nt):
            acc = decay * acc + h[i, j]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# Gaussian kernel sum: out[g] = sum_i exp(-(grid[g] - times[i])^2 / (2 sigma^2))


def gaussian_sum_np(times, grid, sigma):
    if times.size == 0:
        return np.zeros(grid.shape[0])
    d = grid[:, None] - times[None, :]
    return np.exp(-(d * d) / (2.0 * sigma * sigma)).sum(axis=1)


@njit
def gaussian_sum_nb(times, grid, sigma):
    out = np.zeros(grid.shape[0])
    inv = 1.0 / (2.0 * sigma * sigma)
    for g in range(grid.shape[0]):
        acc = 0.0
        for i in range(times.shape[0]):
            d = grid[g] - times[i]
            acc += np.exp(-d * d * inv)
        out[g] = acc
    return out


NUMPY_IMPL = {
    "wave_forward": wave_forward_np,
    "wave_backward": wave_backward_np,
    "rowmax": rowmax_np,
    "rowmax_scatter": rowmax_scatter_np,
    "exp_accumulate": exp_accumulate_np,
    "gaussian_sum": gaussian_sum_np,
}
NUMBA_IMPL = {
    "wave_forward": wave_forward_nb,
    "wave_backward": wave_backward_nb,
    "rowmax": rowmax_nb,
    "rowmax_scatter": rowmax_scatter_nb,
    "exp_accumulate": exp_accumulate_nb,
    "gaussian_sum": gaussian_sum_nb,
}

_ACTIVE = NUMBA_IMPL if USE_NUMBA else NUMPY_IMPL

wave_forward = _ACTIVE["wave_forward"]
wave_backward = _ACTIVE["wave_backward"]
rowmax = _ACTIVE["rowmax"]
rowmax_scatter = _ACTIVE["rowmax_scatter"]
exp_accumulate = _ACTIVE["exp_accumulate"]
gaussian_sum = _ACTIVE["gaussian_sum"]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
