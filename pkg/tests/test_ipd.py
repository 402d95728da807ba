import math

import numpy as np
import pytest
from scipy import stats

from cten import ipd
from cten.ipd import IpdConfig


@pytest.fixture
def small():
    return IpdConfig(time_steps=20, n_ear=6, n_samples=12, seed=7)


class TestClassOf:
    def test_edges(self):
        assert ipd.class_of(-math.pi, 12) == 0
        assert ipd.class_of(0.0, 12) == 6
        assert ipd.class_of(math.pi - 1e-9, 12) == 11

    def test_bin_width(self):
        edges = -math.pi + np.arange(12) * math.pi / 6
        np.testing.assert_array_equal(ipd.class_of(edges + 1e-9, 12), np.arange(12))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ipd.class_of(4.0, 12)


class TestGenerate:
    def test_defaults_match_task(self):
        c = IpdConfig()
        assert (c.time_steps, c.n_channels, c.n_classes) == (100, 400, 12)
        assert c.duration == pytest.approx(0.1)

    def test_shapes_and_binary(self, small):
        b = ipd.generate(small)
        assert b.events.shape == (12, 20, 12)
        assert set(np.unique(b.events)) <= {0, 1}
        b.validate()

    def test_labels_follow_ipd(self, small):
        b = ipd.generate(small)
        np.testing.assert_array_equal(b.labels, ipd.class_of(b.ipd_values, small.n_classes))
        assert np.all((b.ipd_values >= -math.pi) & (b.ipd_values < math.pi))

    def test_zero_probability(self, small):
        b = ipd.generate(small.replace(max_spike_prob=0.0))
        assert b.events.sum() == 0
        np.testing.assert_array_equal(b.labels, ipd.class_of(b.ipd_values, 12))

    def test_zero_ipd_ears_identical(self):
        c = IpdConfig(time_steps=50, n_ear=9)
        p = ipd.spike_probability(c, 0.0, start_phase=1.1)
        np.testing.assert_array_equal(p[:, :9], p[:, 9:])

    def test_shared_phase_mode(self):
        c = IpdConfig(time_steps=30, n_ear=5, channel_phase_spread=0.0)
        p = ipd.spike_probability(c, 0.7)
        assert np.all(p[:, :5] == p[:, :1]) and np.all(p[:, 5:] == p[:, 5:6])

    def test_determinism(self, small):
        a, b = ipd.generate(small), ipd.generate(small)
        assert a.equals(b)
        assert not a.equals(ipd.generate(small.replace(seed=8)))

    def test_substreams_are_per_sample(self, small):
        full = ipd.generate(small)
        tail = ipd.generate(small.replace(n_samples=4), start=8)
        np.testing.assert_array_equal(full.events[8:], tail.events)

    def test_left_ear_rate_matches_analytic(self):
        # Monte-Carlo oracle: per-bin firing rate of every left-ear channel
        c = IpdConfig(time_steps=40, n_ear=3, n_samples=10_000, seed=3, random_start_phase=False)
        b = ipd.generate(c)
        p = ipd.spike_probability(c, 0.0)[:, :3]  # left ear does not depend on the IPD
        emp = b.events[:, :, :3].mean(axis=0)
        se = np.sqrt(p * (1 - p) / c.n_samples)
        assert np.all(np.abs(emp - p) <= 3 * np.maximum(se, 1e-12) + 1e-12)

    def test_marginal_rate_is_half_pmax(self):
        c = IpdConfig(time_steps=100, n_ear=2, n_samples=2000, seed=4, max_spike_prob=0.6)
        b = ipd.generate(c)
        p = ipd.spike_probability(c, 0.3)
        assert p.mean(axis=0) == pytest.approx(np.full(4, 0.3), abs=1e-12)
        rate = b.events.mean()
        assert abs(rate - 0.3) < 4 * math.sqrt(0.3 * 0.7 / b.events.size) + 2e-3

    def test_label_balance_chi_square(self):
        c = IpdConfig(time_steps=1, n_ear=1, n_samples=10_000, seed=11)
        counts = np.bincount(ipd.generate(c).labels, minlength=12)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            IpdConfig(max_spike_prob=1.5).validate()
        with pytest.raises(ValueError):
            IpdConfig(n_classes=1).validate()


class TestBinaryContainer:
    def test_round_trip(self, small, tmp_path):
        b = ipd.generate(small)
        ipd.save(b, tmp_path / "d.bin")
        back = ipd.load(tmp_path / "d.bin")
        assert back.equals(b)
        assert back.config == small
        assert back.ipd_values.tobytes() == b.ipd_values.tobytes()

    def test_truncated(self, small, tmp_path):
        ipd.save(ipd.generate(small), tmp_path / "d.bin")
        raw = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-5])
        with pytest.raises(ipd.DatasetFormatError) as exc:
            ipd.load(tmp_path / "t.bin")
        assert exc.value.offset is not None and "byte" in str(exc.value)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTMAGIC" + bytes(40))
        with pytest.raises(ipd.DatasetFormatError, match="magic"):
            ipd.load(tmp_path / "x.bin")

    def test_label_out_of_range(self, small, tmp_path):
        b = ipd.generate(small)
        bad = ipd.SpikeBatch(b.events, b.labels.copy(), b.n_classes, None, b.config)
        bad.labels[0] = 12
        ipd.save(bad, tmp_path / "bad.bin")
        with pytest.raises(ipd.DatasetValidationError):
            ipd.load(tmp_path / "bad.bin")


class TestCsv:
    def test_round_trip(self, small, tmp_path):
        b = ipd.generate(small)
        ipd.export_csv(b, tmp_path / "d.csv")
        back = ipd.ingest_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.events, b.events)
        np.testing.assert_array_equal(back.labels, b.labels)
        assert back.events.dtype == np.uint8

    def test_header_lines(self, small, tmp_path):
        ipd.export_csv(ipd.generate(small), tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "# cten-events T=20 D=12 C=12 kind=binary"
        assert lines[1].startswith("sample,t,e0,") and lines[1].endswith(",e11,label")
        assert len(lines) == 2 + 12 * 20

    def test_missing_column_names_row(self, small, tmp_path):
        ipd.export_csv(ipd.generate(small), tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        lines[6] = lines[6].rsplit(",", 2)[0] + "," + lines[6].rsplit(",", 1)[1]
        (tmp_path / "e.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ipd.DatasetFormatError, match="row 7"):
            ipd.ingest_csv(tmp_path / "e.csv")

    def test_label_out_of_range(self, small, tmp_path):
        ipd.export_csv(ipd.generate(small.replace(n_samples=2)), tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        for i in range(2 + 20, 2 + 40):
            lines[i] = lines[i].rsplit(",", 1)[0] + ",15"
        (tmp_path / "e.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ipd.DatasetFormatError, match="row 23"):
            ipd.ingest_csv(tmp_path / "e.csv")

    def test_non_binary_value(self, tmp_path):
        text = "# cten-events T=1 D=2 C=3 kind=binary\nsample,t,e0,e1,label\n0,0,0.5,1,2\n"
        (tmp_path / "r.csv").write_text(text)
        with pytest.raises(ipd.DatasetFormatError, match="row 3"):
            ipd.ingest_csv(tmp_path / "r.csv")

    def test_real_valued_and_zscore(self, tmp_path):
        rng = np.random.default_rng(0)
        ev = rng.normal(3.0, 2.0, size=(5, 4, 3)) * np.array([1.0, 10.0, 0.1])
        b = ipd.SpikeBatch(ev, rng.integers(0, 3, 5), 3)
        ipd.export_csv(b, tmp_path / "r.csv")
        back = ipd.ingest_csv(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.events, ev)
        z = ipd.ingest_csv(tmp_path / "r.csv", normalize=True).events
        np.testing.assert_allclose(z.mean(axis=(0, 1)), 0.0, atol=1e-10)
        np.testing.assert_allclose(z.std(axis=(0, 1)), 1.0, atol=1e-10)

    def test_zscore_uses_training_statistics(self):
        rng = np.random.default_rng(1)
        tr, te = rng.normal(5, 3, (10, 4, 2)), rng.normal(5, 3, (6, 4, 2))
        ztr, zte = ipd.zscore(tr, te)
        mu, sd = tr.mean(axis=(0, 1)), tr.std(axis=(0, 1))
        np.testing.assert_allclose(zte, (te - mu) / sd, rtol=1e-12)
        np.testing.assert_allclose(ztr.mean(axis=(0, 1)), 0, atol=1e-10)
