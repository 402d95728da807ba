import math

import numpy as np
import pytest

from cten import train as T
from cten.ipd import IpdConfig
from cten.model import AblationConfig, ModelDims, init

DIMS = ModelDims(n_inputs=8, hidden=8, rank=2, n_classes=3, mlp_hidden=6)
DATA = IpdConfig(time_steps=12, n_ear=4, n_classes=3)


def small_cfg(**kw):
    base = dict(epochs=2, batch_size=16, n_train=40, n_test=20, seeds=[0, 1])
    base.update(kw)
    return T.TrainConfig(**base)


class TestAdam:
    def test_zero_lr_leaves_params_bit_identical(self):
        p = init(DIMS, AblationConfig(), 0)
        before = {k: v.data.copy() for k, v in p.tensors.items()}
        train, _ = T.make_datasets(DATA, small_cfg(), 0)
        T.fit(p, train, np.arange(12) * DATA.dt, small_cfg(learning_rate=0.0), 0)
        for k, v in p.tensors.items():
            assert v.data.tobytes() == before[k].tobytes()

    def test_first_step_magnitude_is_lr(self):
        from cten.autodiff import Tensor
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = T.Adam({"x": x}, lr=0.01)
        x.grad = np.array([0.5, -4.0, 1e-3])
        opt.step()
        np.testing.assert_allclose(x.data, [0.99, -1.99, 2.99], rtol=1e-6)


class TestAggregate:
    def test_two_seeds(self):
        agg = T.aggregate([{"final_test_accuracy": 0.90, "wall_time_s": 1.0},
                           {"final_test_accuracy": 0.94, "wall_time_s": 3.0}], 7)
        assert agg["mean_acc"] == pytest.approx(0.92)
        assert agg["std_acc"] == pytest.approx(math.sqrt(0.0008), rel=1e-12)
        assert agg["std_acc"] == pytest.approx(0.0283, abs=1e-4)
        assert (agg["best_acc"], agg["worst_acc"], agg["mean_time_s"]) == (0.94, 0.90, 2.0)

    def test_single_seed(self):
        agg = T.aggregate([{"final_test_accuracy": 0.5, "wall_time_s": 1.0}], 1)
        assert agg["std_acc"] is None
        assert agg["mean_acc"] == agg["best_acc"] == agg["worst_acc"] == 0.5

    def test_failed_seeds_excluded(self):
        agg = T.aggregate([{"seed": 0, "error": "nan"}, {"final_test_accuracy": 0.25, "wall_time_s": 1.0}], 1)
        assert agg["n_failed"] == 1 and agg["n_seeds"] == 1 and agg["mean_acc"] == 0.25


class TestConfig:
    def test_empty_test_set(self):
        with pytest.raises(ValueError, match="empty"):
            small_cfg(n_test=0).validate()

    def test_accuracy_on_empty(self):
        train, _ = T.make_datasets(DATA, small_cfg(), 0)
        with pytest.raises(ValueError):
            T.accuracy(init(DIMS, AblationConfig(), 0), train.subset(np.array([], dtype=int)), np.arange(12) * 1e-3)

    def test_split_seeds_independent(self):
        s = T.split_seeds(3)
        assert len(set(s)) == 4 and s == T.split_seeds(3) and s != T.split_seeds(4)


class TestRuns:
    def test_report_structure_and_determinism(self):
        a = T.run_multi_seed(DIMS, AblationConfig(), DATA, small_cfg())
        b = T.run_multi_seed(DIMS, AblationConfig(), DATA, small_cfg())
        accs = [r["final_test_accuracy"] for r in a["per_seed"]]
        assert accs == [r["final_test_accuracy"] for r in b["per_seed"]]
        assert [r["loss_curve"] for r in a["per_seed"]] == [r["loss_curve"] for r in b["per_seed"]]
        assert all(0 <= x <= 1 for x in accs)
        assert a["aggregate"]["mean_acc"] == pytest.approx(sum(accs) / 2)
        assert a["aggregate"]["parameter_count"] == init(DIMS, AblationConfig(), 0).count()
        assert not a["failed"] and len(a["per_seed"][0]["loss_curve"]) == 2

    def test_loss_decreases_on_tiny_problem(self):
        entry = T.train_one(DIMS, AblationConfig(), DATA, small_cfg(epochs=8, learning_rate=1e-2), 0)
        assert entry["loss_curve"][-1] < entry["loss_curve"][0]

    def test_divergence_is_recorded(self, monkeypatch):
        real = T.train_one

        def flaky(dims, abl, data, cfg, seed, *a):
            if seed == 1:
                raise T.TrainingDiverged("loss became non-finite in epoch 1")
            return real(dims, abl, data, cfg, seed, *a)

        monkeypatch.setattr(T, "train_one", flaky)
        rep = T.run_multi_seed(DIMS, AblationConfig(), DATA, small_cfg(epochs=1))
        assert rep["failed"] and rep["per_seed"][1]["error"].startswith("loss")
        assert rep["aggregate"]["n_failed"] == 1 and rep["aggregate"]["n_seeds"] == 1

    def test_external_split(self):
        from cten import ipd
        ext = ipd.generate(DATA.replace(n_samples=30))
        tr, te = T.make_datasets(DATA, small_cfg(n_test=10), 0, external=ext)
        assert len(tr) == 20 and len(te) == 10
        both = np.concatenate([tr.events, te.events])
        assert sorted(map(bytes, both)) == sorted(map(bytes, ext.events))

    def test_mlp_baseline(self):
        rep = T.run_multi_seed(DIMS, AblationConfig(), DATA, small_cfg(epochs=1), kind="mlp", baseline_hidden=4)
        assert rep["aggregate"]["parameter_count"] == 12 * 8 * 4 + 4 + 4 * 3 + 3
        assert rep["ablation"] is None

    def test_loss_curves_csv(self):
        rep = {"per_seed": [{"seed": 0, "loss_curve": [2.0, 1.5]}, {"seed": 3, "error": "x"},
                            {"seed": 4, "loss_curve": [1.0, 0.5]}]}
        assert T.loss_curves_csv(rep) == "epoch,seed_0,seed_4\n1,2.0,1.0\n2,1.5,0.5\n"
