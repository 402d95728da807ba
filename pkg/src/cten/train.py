"""Minibatch Adam training, multi-seed runs and report aggregation."""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import ipd
from .model import (AblationConfig, ModelDims, init, init_mlp_baseline, mlp_baseline_count,
                    parameter_count)

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_train: int = 800
    n_test: int = 200
    workers: int = 1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1 (accuracy on an empty test set is undefined)")
        return self


class Adam:
    def __init__(self, tensors: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = tensors
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in tensors.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.tensors.values():
            p.grad = None

    def step(self) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.tensors.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def split_seeds(seed: int) -> tuple:
    """Independent (init, shuffle, train-data, test-data) seeds derived from ``seed``."""
    ss = np.random.SeedSequence(int(seed))
    return tuple(int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(4))


def predict(model, data: ipd.SpikeBatch, time_grid, batch_size: int = 200) -> np.ndarray:
    out = []
    for s in range(0, len(data), batch_size):
        idx = np.arange(s, min(s + batch_size, len(data)))
        out.append(np.argmax(model.logits(data.inputs(idx), time_grid).data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model, data: ipd.SpikeBatch, time_grid) -> float:
    if len(data) == 0:
        raise ValueError("accuracy on an empty dataset is undefined")
    return float(np.mean(predict(model, data, time_grid) == data.labels))


def fit(model, train: ipd.SpikeBatch, time_grid, cfg: TrainConfig, shuffle_seed: int,
        epochs: Optional[int] = None, stop: Optional[Callable[[int], bool]] = None) -> list:
    """Train in place; returns the mean training loss of every epoch.

    ``stop(epoch)`` is called after each epoch (1-based) and ends training early
    when it returns True.
    """
    opt = Adam(model.tensors, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng(shuffle_seed)
    n = len(train)
    curve = []
    for epoch in range(epochs or cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = ad.softmax_cross_entropy(model.logits(train.inputs(idx), time_grid), train.labels[idx])
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch + 1}")
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        curve.append(total / n)
        logger.debug("epoch %d loss %.4f", epoch + 1, curve[-1])
        if stop is not None and stop(epoch + 1):
            break
    return curve


def make_datasets(data_cfg: ipd.IpdConfig, cfg: TrainConfig, seed: int, external=None):
    """Train/test split for one seed: fresh generated sets, or a seeded split of ``external``."""
    _, _, train_seed, test_seed = split_seeds(seed)
    if external is not None:
        order = np.random.default_rng(train_seed).permutation(len(external))
        n_test = min(cfg.n_test, len(external) - 1)
        return external.subset(np.sort(order[n_test:])), external.subset(np.sort(order[:n_test]))
    train = ipd.generate(data_cfg.replace(n_samples=cfg.n_train, seed=train_seed))
    test = ipd.generate(data_cfg.replace(n_samples=cfg.n_test, seed=test_seed))
    return train, test


def _build(kind: str, dims: ModelDims, ablation: AblationConfig, seed: int, n_flat: int, baseline_hidden: int):
    if kind == "mlp":
        return init_mlp_baseline(n_flat, baseline_hidden, dims.n_classes, seed)
    return init(dims, ablation, seed)


def train_model(dims: ModelDims, ablation: AblationConfig, data_cfg: ipd.IpdConfig, cfg: TrainConfig,
                seed: int, kind: str = "cten", baseline_hidden: int = 32, external=None):
    """Train one seed from scratch; returns ``(report_entry, model, test_set)``."""
    cfg.validate()
    init_seed, shuffle_seed, _, _ = split_seeds(seed)
    train, test = make_datasets(data_cfg, cfg, seed, external)
    t_grid = np.arange(train.events.shape[1]) * data_cfg.dt
    n_flat = train.events.shape[1] * train.events.shape[2]
    model = _build(kind, dims, ablation, init_seed, n_flat, baseline_hidden)
    t0 = time.perf_counter()
    curve = fit(model, train, t_grid, cfg, shuffle_seed)
    train_time = time.perf_counter() - t0
    entry = {
        "seed": int(seed),
        "final_test_accuracy": accuracy(model, test, t_grid),
        "final_train_accuracy": accuracy(model, train, t_grid),
        "wall_time_s": train_time,
        "loss_curve": curve,
    }
    return entry, model, test


def train_one(dims: ModelDims, ablation: AblationConfig, data_cfg: ipd.IpdConfig, cfg: TrainConfig,
              seed: int, kind: str = "cten", baseline_hidden: int = 32, external=None) -> dict:
    """Train one seed from scratch and evaluate on its test split."""
    return train_model(dims, ablation, data_cfg, cfg, seed, kind, baseline_hidden, external)[0]


def aggregate(per_seed: list, parameter_count_: int) -> dict:
    ok = [r for r in per_seed if "error" not in r]
    accs = [r["final_test_accuracy"] for r in ok]
    agg = {"n_seeds": len(ok), "n_failed": len(per_seed) - len(ok), "parameter_count": parameter_count_}
    if not accs:
        return {**agg, "mean_acc": None, "std_acc": None, "best_acc": None, "worst_acc": None, "mean_time_s": None}
    return {
        **agg,
        "mean_acc": statistics.fmean(accs),
        "std_acc": statistics.stdev(accs) if len(accs) > 1 else None,
        "best_acc": max(accs),
        "worst_acc": min(accs),
        "mean_time_s": statistics.fmean(r["wall_time_s"] for r in ok),
    }


def _seed_job(args):
    dims, ablation, data_cfg, cfg, seed, kind, baseline_hidden, external = args
    try:
        return train_one(dims, ablation, data_cfg, cfg, seed, kind, baseline_hidden, external)
    except (TrainingDiverged, ad.NonFiniteError) as exc:
        logger.warning("seed %s failed: %s", seed, exc)
        return {"seed": int(seed), "error": str(exc)}


def run_multi_seed(dims: ModelDims, ablation: AblationConfig, data_cfg: ipd.IpdConfig, cfg: TrainConfig,
                   kind: str = "cten", baseline_hidden: int = 32, external=None) -> dict:
    """Train every seed independently and aggregate. Failed seeds are kept in
    ``per_seed`` with an ``error`` field and excluded from the aggregate."""
    cfg.validate()
    jobs = [(dims, ablation, data_cfg, cfg, s, kind, baseline_hidden, external) for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            per_seed = list(pool.map(_seed_job, jobs))
    else:
        per_seed = [_seed_job(j) for j in jobs]
    if kind == "mlp":
        n_flat = data_cfg.time_steps * data_cfg.n_channels if external is None else \
            external.events.shape[1] * external.events.shape[2]
        count = mlp_baseline_count(n_flat, baseline_hidden, dims.n_classes)
    else:
        count = parameter_count(dims, ablation)
    return {
        "model": kind,
        "ablation": asdict(ablation) if kind == "cten" else None,
        "per_seed": per_seed,
        "aggregate": aggregate(per_seed, count),
        "failed": any("error" in r for r in per_seed),
    }


def mlp_baseline_train(dims: ModelDims, data_cfg: ipd.IpdConfig, cfg: TrainConfig, seed: int,
                       hidden: int = 32) -> dict:
    return train_one(dims, AblationConfig(), data_cfg, cfg, seed, kind="mlp", baseline_hidden=hidden)


def loss_curves_csv(report: dict) -> str:
    rows = [r for r in report["per_seed"] if "loss_curve" in r]
    if not rows:
        return "epoch\n"
    lines = ["epoch," + ",".join(f"seed_{r['seed']}" for r in rows)]
    for e in range(max(len(r["loss_curve"]) for r in rows)):
        vals = [repr(r["loss_curve"][e]) if e < len(r["loss_curve"]) else "" for r in rows]
        lines.append(f"{e + 1}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def report_json(report: dict, config_echo: dict, build: str) -> str:
    return json.dumps({"build": build, "config": config_echo, **report}, indent=2, sort_keys=True) + "\n"
