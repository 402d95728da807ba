"""Self-checks shared by the ``verify`` subcommand and the test-suite."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import analysis, kernels
from . import autodiff as ad
from .model import ABLATION_ORDER, VARIANTS, ModelDims, attention_block, cten_ta, init, parameter_count

TABLE_COUNTS = {"full": 122316, "no-interaction": 106956, "no-phase": 122316, "mean-only": 101836, "max-only": 101836}
TINY_DIMS = ModelDims(n_inputs=4, hidden=6, rank=3, n_classes=3, mlp_hidden=5)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + step
        up = f()
        arr[i] = old - step
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def model_gradient_errors(params, x, labels, time_grid, step: float = 1e-5) -> dict:
    """Max relative error between tape and finite-difference gradients per parameter."""
    for p in params.tensors.values():
        p.grad = None
    with ad.Tape() as tape:
        loss = ad.softmax_cross_entropy(params.logits(x, time_grid), labels)
    tape.backward(loss)

    def f():
        return ad.softmax_cross_entropy(params.logits(x, time_grid), labels).item()

    errs = {}
    for name, p in params.tensors.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numerical_gradient(f, p.data, step)
        errs[name] = float(relative_error(analytic, numeric).max())
    return errs


def tiny_problem(seed: int = 0, batch: int = 2, steps: int = 8, dims: ModelDims = TINY_DIMS):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, steps, dims.n_inputs))
    labels = rng.integers(0, dims.n_classes, size=batch)
    return x, labels, np.arange(steps) * 1e-3


def check_gradients(attention: bool = False, seed: int = 0) -> float:
    abl = cten_ta(2) if attention else VARIANTS["full"]
    params = init(TINY_DIMS, abl, seed)
    # random phases over a 7 ms window: spread omega so the carrier actually turns
    params["omega"].data[:] = np.linspace(50.0, 600.0, TINY_DIMS.hidden)
    x, labels, t = tiny_problem(seed)
    return max(model_gradient_errors(params, x, labels, t).values())


def check_parameter_counts() -> dict:
    return {k: parameter_count(ModelDims(), VARIANTS[k]) for k in ABLATION_ORDER}


def check_interference(instances: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        nh, nt = rng.integers(1, 9), rng.integers(1, 17)
        res = analysis.interference_oracle(rng.normal(size=(nt, nh)), rng.normal(size=(nt, nh)))
        worst = max(worst, res.identity_error, res.cross_error)
    return worst


def check_moments(sigma_k: float = 5e-3, t0: float = 0.05, dt: float = 2.5e-4):
    grid = np.arange(0.0, 0.1 + dt / 2, dt)
    m = analysis.moments(analysis.smooth([t0], grid, sigma_k))
    return abs(m.mean - t0), abs(math.sqrt(m.variance) - sigma_k / math.sqrt(2)) / (sigma_k / math.sqrt(2))


def check_attention_rows(seed: int = 0) -> float:
    params = init(ModelDims(n_inputs=4, hidden=16, rank=2, n_classes=3, mlp_hidden=4), cten_ta(4), seed)
    P = ad.Tensor(np.random.default_rng(seed).random((3, 12, 16)))
    _, w = attention_block(P, params, 4, return_weights=True)
    return float(np.abs(w.sum(axis=-1) - 1.0).max())


def check_kernel_parity(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(3, 9, 5))
    om, ph, t = rng.uniform(1, 600, 5), rng.uniform(0, 6, 5), np.arange(9) * 1e-3
    worst = 0.0
    a = kernels.wave_forward_np(h, om, ph, t)
    b = kernels.wave_forward_nb(h, om, ph, t)
    worst = max(worst, *(float(np.abs(u - v).max()) for u, v in zip(a, b)))
    g1, g2 = rng.normal(size=h.shape), rng.normal(size=h.shape)
    a = kernels.wave_backward_np(h, a[2], a[3], t, g1, g2)
    b = kernels.wave_backward_nb(h, b[2], b[3], t, g1, g2)
    worst = max(worst, *(float(np.abs(u - v).max()) for u, v in zip(a, b)))
    x = rng.normal(size=(20, 7))
    worst = max(worst, float(np.abs(kernels.rowmax_np(x)[0] - kernels.rowmax_nb(x)[0]).max()))
    hh = rng.normal(size=(30, 4))
    worst = max(worst, float(np.abs(kernels.exp_accumulate_np(hh, 0.9) - kernels.exp_accumulate_nb(hh, 0.9)).max()))
    times, grid = rng.uniform(0, 0.1, 12), np.linspace(0, 0.1, 50)
    worst = max(worst, float(np.abs(kernels.gaussian_sum_np(times, grid, 0.005)
                                    - kernels.gaussian_sum_nb(times, grid, 0.005)).max()))
    return worst


def run_all() -> list:
    """(name, passed, detail) for every oracle check."""
    out = []
    counts = check_parameter_counts()
    out.append(("parameter counts", counts == TABLE_COUNTS, str(list(counts.values()))))
    for attn in (False, True):
        err = check_gradients(attention=attn)
        out.append((f"gradient check ({'CTEN-TA' if attn else 'CTEN'})", err < 1e-4, f"max rel err {err:.2e}"))
    err = check_interference()
    out.append(("interference identity", err < 1e-12, f"max abs err {err:.2e}"))
    dmu, dsig = check_moments()
    out.append(("energy moments", dmu <= 2.5e-4 and dsig < 0.01, f"|mu-t0|={dmu:.2e} rel sigma err={dsig:.2e}"))
    err = check_attention_rows()
    out.append(("attention rows stochastic", err < 1e-12, f"max |row sum - 1| {err:.2e}"))
    err = check_kernel_parity()
    out.append(("numba/numpy kernel parity", err < 1e-12, f"max abs diff {err:.2e}"))
    return out
