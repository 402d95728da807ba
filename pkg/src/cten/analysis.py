"""Temporal descriptors of smoothed spike trains, the interference decomposition
of a summed complex wave field, and the reduced two-channel wave demo."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels


@dataclass
class SmoothedSignal:
    values: np.ndarray
    times: np.ndarray
    dt: float
    kernel_sigma: float


@dataclass
class EnergyMoments:
    energy: float
    mean: Optional[float]
    variance: Optional[float]

    @property
    def defined(self) -> bool:
        return self.mean is not None


def smooth(spike_times, grid, sigma_k: float) -> SmoothedSignal:
    """Gaussian-kernel sum of ``spike_times`` evaluated on a uniform ``grid``.

    Each spike contributes ``exp(-(t - t_i)^2 / (2 sigma_k^2))`` (unit peak, not
    unit area).
    """
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-D array")
    if not sigma_k > 0:
        raise ValueError("sigma_k must be positive")
    times = np.ascontiguousarray(spike_times, dtype=np.float64).reshape(-1)
    dt = float(grid[1] - grid[0]) if grid.size > 1 else 1.0
    values = kernels.gaussian_sum(times, grid, float(sigma_k))
    return SmoothedSignal(values, grid, dt, float(sigma_k))


def moments(sig: SmoothedSignal) -> EnergyMoments:
    """Energy, temporal mean and temporal variance of ``sig.values**2`` (rectangle rule).

    A silent signal has zero energy and undefined mean/variance, reported as None.
    """
    rho = sig.values * sig.values
    energy = float(rho.sum() * sig.dt)
    if energy <= 0.0:
        return EnergyMoments(0.0, None, None)
    mu = float((sig.times * rho).sum() * sig.dt / energy)
    var = float(((sig.times - mu) ** 2 * rho).sum() * sig.dt / energy)
    return EnergyMoments(energy, mu, var)


@dataclass
class Interference:
    total: np.ndarray
    diagonal: np.ndarray
    cross: np.ndarray
    pairwise: np.ndarray = field(repr=False)

    @property
    def identity_error(self) -> float:
        """max |total - (diagonal + pairwise cross)|"""
        return float(np.max(np.abs(self.total - self.diagonal - self.pairwise), initial=0.0))

    @property
    def cross_error(self) -> float:
        return float(np.max(np.abs(self.cross - self.pairwise), initial=0.0))


def pairwise_cross(psi_r, psi_i) -> np.ndarray:
    """Brute-force sum over ordered pairs h != k of Re(psi_h conj(psi_k)), per time step."""
    psi_r = np.asarray(psi_r, dtype=np.float64)
    psi_i = np.asarray(psi_i, dtype=np.float64)
    nt, nh = psi_r.shape
    out = np.zeros(nt)
    for t in range(nt):
        acc = 0.0
        for h in range(nh):
            for k in range(nh):
                if h != k:
                    acc += psi_r[t, h] * psi_r[t, k] + psi_i[t, h] * psi_i[t, k]
        out[t] = acc
    return out


def interference_oracle(psi_r, psi_i) -> Interference:
    """Split ``|sum_h psi_h(t)|^2`` into per-component energy and cross terms."""
    psi_r = np.asarray(psi_r, dtype=np.float64)
    psi_i = np.asarray(psi_i, dtype=np.float64)
    if psi_r.shape != psi_i.shape or psi_r.ndim != 2:
        raise ValueError("psi_r and psi_i must be matching [T, H] arrays")
    sr, si = psi_r.sum(axis=1), psi_i.sum(axis=1)
    total = sr * sr + si * si
    diagonal = (psi_r * psi_r + psi_i * psi_i).sum(axis=1)
    return Interference(total, diagonal, total - diagonal, pairwise_cross(psi_r, psi_i))


# ---------------------------------------------------------------------------
# reduced two-channel demo

# Illustrative projection: units 0/1 read channel 1, units 2/3 read channel 2,
# with one mixed-sign unit per pair.
DEMO_W = np.array([[1.0, 0.6, 0.0, -0.3],
                   [0.0, -0.3, 1.0, 0.6]])


@dataclass
class DemoConfig:
    time_steps: int = 100
    dt: float = 1e-3
    decay_rate: float = 50.0  # 1/s
    pulse_steps: tuple = (10, 14, 18, 22)
    delay_steps: int = 30
    omega_hz: tuple = (40.0, 55.0, 40.0, 55.0)
    phase: tuple = (0.0, math.pi / 4, 0.0, math.pi / 4)
    W: np.ndarray = field(default_factory=lambda: DEMO_W.copy())


def demo_input(cfg: DemoConfig) -> np.ndarray:
    x = np.zeros((cfg.time_steps, 2))
    for s in cfg.pulse_steps:
        if 0 <= s < cfg.time_steps:
            x[s, 0] = 1.0
        if 0 <= s + cfg.delay_steps < cfg.time_steps:
            x[s + cfg.delay_steps, 1] = 1.0
    return x


def reduced_two_channel_demo(cfg: DemoConfig = DemoConfig(), x: Optional[np.ndarray] = None) -> dict:
    """Stage-by-stage traces of the two-input, four-unit real-valued wave model.

    Returns arrays keyed ``time``, ``input`` [T, 2], ``projection`` [T, 4],
    ``accumulated`` [T, 4], ``wave`` [T, 4] and ``energy`` [T, 4].
    """
    W = np.asarray(cfg.W, dtype=np.float64)
    if W.shape != (2, 4):
        raise ValueError("demo projection must be 2 x 4")
    x = demo_input(cfg) if x is None else np.asarray(x, dtype=np.float64)
    t = np.arange(cfg.time_steps) * cfg.dt
    h = x @ W
    decay = math.exp(-cfg.decay_rate * cfg.dt)
    h_acc = kernels.exp_accumulate(np.ascontiguousarray(h), decay)
    theta = t[:, None] * (2 * math.pi * np.asarray(cfg.omega_hz))[None, :] + np.asarray(cfg.phase)[None, :]
    psi = h_acc * np.cos(theta)
    return {"time": t, "input": x, "projection": h, "accumulated": h_acc, "wave": psi, "energy": psi * psi}


def write_trace_csv(path, time, values, prefix: str) -> None:
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"{prefix}{j}" for j in range(values.shape[1])])
        for i in range(values.shape[0]):
            w.writerow([repr(float(time[i]))] + [repr(float(v)) for v in values[i]])


def export_demo(stages: dict, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefixes = {"input": "x", "projection": "h", "accumulated": "h_acc", "wave": "psi", "energy": "P"}
    written = []
    for i, (name, prefix) in enumerate(prefixes.items(), start=1):
        path = out_dir / f"stage{i}_{name}.csv"
        write_trace_csv(path, stages["time"], stages[name], prefix)
        written.append(path)
    return written
