"""Acceptance criteria at their stated settings and tolerances.

The training criteria run the full desk-scale protocol (5 seeds, 800/200,
30 epochs) and take most of an hour on one core. Each criterion prints one
PASS/FAIL line, repeated in the terminal summary.
"""

import functools
import json
import math

import numpy as np
import pytest

from cten import analysis, cli, ipd, verify
from cten import autodiff as ad
from cten import train as T
from cten.model import (ABLATION_ORDER, VARIANTS, ModelDims, attention_block, cten_ta, init, parameter_count,
                        stage_arrays)

pytestmark = pytest.mark.slow

DIMS = ModelDims()
DATA = ipd.IpdConfig()
CFG = T.TrainConfig()  # 5 seeds, 800/200, 30 epochs


@functools.cache
def report(name: str) -> dict:
    if name == "mlp":
        return T.run_multi_seed(DIMS, VARIANTS["full"], DATA, CFG, kind="mlp", baseline_hidden=32)
    abl = cten_ta(8) if name == "cten-ta" else VARIANTS[name]
    return T.run_multi_seed(DIMS, abl, DATA, CFG)


def agg(name):
    return report(name)["aggregate"]


def pct(x):
    return f"{100 * x:.2f}%"


def test_c1_parameter_counts(criterion):
    want = [122316, 106956, 122316, 101836, 101836]
    got = [parameter_count(DIMS, VARIANTS[n]) for n in ABLATION_ORDER]
    assert criterion("C1 parameter counts", got == want, f"{got} (expected {want})")


def test_c2_ipd_accuracy(criterion):
    a = agg("full")
    ok = a["n_failed"] == 0 and a["mean_acc"] >= 0.85 and a["best_acc"] >= 0.90 and a["mean_time_s"] < 120
    assert criterion("C2 full CTEN accuracy", ok,
                     f"mean {pct(a['mean_acc'])} (>= 85%), best {pct(a['best_acc'])} (>= 90%), "
                     f"{a['mean_time_s']:.1f} s/seed (< 120 s)")


def test_c3_ablation_insensitivity(criterion):
    full = agg("full")
    gaps = {n: agg(n)["mean_acc"] - full["mean_acc"] for n in ABLATION_ORDER[1:]}
    faster = agg("no-interaction")["mean_time_s"] < full["mean_time_s"]
    ok = all(abs(g) <= 0.04 for g in gaps.values()) and faster
    detail = ", ".join(f"{n} {100 * g:+.2f} pt" for n, g in gaps.items())
    detail += f"; no-interaction {agg('no-interaction')['mean_time_s']:.1f} s vs full {full['mean_time_s']:.1f} s"
    assert criterion("C3 ablation within 4 points", ok, detail)


def test_c4_mlp_baseline(criterion):
    a = agg("mlp")
    ok = a["parameter_count"] > 122316 and a["mean_acc"] < 0.25
    assert criterion("C4 MLP baseline near chance", ok,
                     f"{a['parameter_count']} params, mean {pct(a['mean_acc'])} (< 25%)")


def test_c5_attention_variant(criterion):
    ta, full = agg("cten-ta"), agg("full")
    batch = ipd.generate(DATA.replace(n_samples=4, seed=123))
    params = init(DIMS, cten_ta(8), 0)
    energy = stage_arrays(params, batch.inputs(np.arange(4)), DATA.time_grid())["energy"]
    _, w = attention_block(ad.Tensor(energy), params, 8, return_weights=True)
    row_err = float(np.abs(w.sum(axis=-1) - 1).max())
    ok = ta["n_failed"] == 0 and ta["mean_acc"] >= full["mean_acc"] - 0.01 and row_err < 1e-12
    assert criterion("C5 CTEN-TA vs CTEN", ok,
                     f"TA mean {pct(ta['mean_acc'])} vs full {pct(full['mean_acc'])} (>= full - 1 pt), "
                     f"row-sum error {row_err:.1e}")


@pytest.mark.parametrize("attention", [False, True], ids=["cten", "cten-ta"])
def test_c6_gradients(criterion, attention):
    worst = verify.check_gradients(attention=attention)
    name = "CTEN-TA" if attention else "CTEN"
    assert criterion(f"C6 gradient check {name}", worst < 1e-4, f"max relative error {worst:.2e} (< 1e-4)")


def test_c7_interference_identity(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        h, t = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        r = analysis.interference_oracle(rng.normal(size=(t, h)), rng.normal(size=(t, h)))
        worst = max(worst, r.identity_error)
    assert criterion("C7 interference identity", worst < 1e-12, f"max error {worst:.1e} over 100 fields (< 1e-12)")


def test_c8_moments(criterion):
    sk, t0 = 0.01, 0.5
    dt = sk / 20
    g = np.arange(int(round(1.0 / dt)) + 1) * dt
    m = analysis.moments(analysis.smooth([t0], g, sk))
    mu_err = abs(m.mean - t0)
    sd_err = abs(math.sqrt(m.variance) / (sk / math.sqrt(2)) - 1)
    ok = mu_err <= dt and sd_err < 0.01
    assert criterion("C8 moments", ok, f"|mu - t0| {mu_err:.1e} (<= {dt:.0e}), sigma rel. error {sd_err:.1e} (< 1%)")


def test_c9_ablate_determinism(criterion, tmp_path):
    # reduced protocol; the bitwise claim does not depend on run length
    args = ["ablate", "--set", "train.epochs=2", "--set", "train.n_train=96", "--set", "train.n_test=50",
            "--set", "train.seeds=[0,1]"]
    runs = []
    for k in range(2):
        assert cli.run(args + ["--out", str(tmp_path / f"run{k}")]) == 0
        rows = json.loads((tmp_path / f"run{k}" / "ablation.json").read_text())["variants"]
        runs.append([[s["final_test_accuracy"] for s in r["per_seed"]] for r in rows])
    assert criterion("C9 ablate determinism", runs[0] == runs[1], f"per-seed accuracies {runs[0]}")


def test_c10_overfit(criterion):
    cfg = T.TrainConfig(n_train=32, batch_size=32)
    train, _ = T.make_datasets(DATA, cfg, 0)
    params = init(DIMS, VARIANTS["full"], 0)
    grid = DATA.time_grid()
    hit = []

    def stop(epoch):
        if T.accuracy(params, train, grid) == 1.0:
            hit.append(epoch)
            return True
        return False

    T.fit(params, train, grid, cfg, shuffle_seed=0, epochs=200, stop=stop)
    ok = bool(hit)
    detail = f"100% train accuracy at epoch {hit[0]}" if ok else \
        f"train accuracy {pct(T.accuracy(params, train, grid))} after 200 epochs"
    assert criterion("C10 overfit 32 samples", ok, detail + " (<= 200)")


def test_invariant_smoothed_loss_monotone(criterion):
    curves = [r["loss_curve"] for r in report("full")["per_seed"] if "loss_curve" in r]
    good = 0
    for c in curves:
        ma = np.convolve(c, np.ones(5) / 5, mode="valid")  # first value ends at epoch 5
        good += bool(np.all(np.diff(ma) <= 0))
    assert criterion("Invariant: 5-epoch moving average loss non-increasing", good >= 4,
                     f"{good}/{len(curves)} seeds (>= 4)")


def test_invariant_aggregate_consistent(criterion):
    bad = []
    for name in ("full", "no-interaction", "no-phase", "mean-only", "max-only", "mlp", "cten-ta"):
        rep = report(name)
        accs = [r["final_test_accuracy"] for r in rep["per_seed"] if "error" not in r]
        a = rep["aggregate"]
        if not (all(0 <= x <= 1 for x in accs) and math.isclose(a["mean_acc"], sum(accs) / len(accs))
                and a["best_acc"] == max(accs) and a["worst_acc"] == min(accs)):
            bad.append(name)
    assert criterion("Invariant: aggregate recomputes from per-seed list", not bad, f"inconsistent: {bad or 'none'}")
