"""Synthetic interaural-phase-difference (IPD) spike dataset.

Every sample is a binary event raster ``[T, D]`` with ``D = 2 * n_ear``. The
first ``n_ear`` channels form the left ear and the rest the right ear. Channel
``d`` fires in bin ``t`` with probability

    p_max * (1 + sin(2 pi f t dt + start + delay_d + ear_phase)) / 2

where ``ear_phase`` is 0 on the left and the sample's IPD on the right,
``delay_d`` is a per-channel phase delay (identical layout in both ears) and
``start`` is a per-sample random starting phase. Setting
``channel_phase_spread=0`` and ``random_start_phase=False`` gives the plain
shared-phase model where every channel of an ear carries the same phase.

Randomness for sample ``i`` is drawn from its own substream seeded by
``(seed, i)``, so any subset of samples can be regenerated independently.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi

MAGIC = b"CTENIPD\x00"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sHHI")
_DIMS = struct.Struct("<IIII")


class DatasetFormatError(ValueError):
    """Malformed dataset file or CSV; ``offset`` is a byte offset or row number."""

    def __init__(self, message: str, offset: Optional[int] = None, unit: str = "byte"):
        where = f" (at {unit} {offset})" if offset is not None else ""
        super().__init__(message + where)
        self.offset = offset


class DatasetValidationError(ValueError):
    """Well-formed data whose values violate the dataset invariants."""


@dataclass
class IpdConfig:
    time_steps: int = 100
    dt: float = 1e-3
    n_ear: int = 200
    n_classes: int = 12
    carrier_freq: float = 50.0
    max_spike_prob: float = 1.0
    n_samples: int = 1000
    seed: int = 0
    channel_phase_spread: float = math.pi / 2
    random_start_phase: bool = True

    @property
    def n_channels(self) -> int:
        return 2 * self.n_ear

    @property
    def duration(self) -> float:
        return self.time_steps * self.dt

    def time_grid(self) -> np.ndarray:
        return np.arange(self.time_steps) * self.dt

    def channel_delays(self) -> np.ndarray:
        return np.linspace(0.0, self.channel_phase_spread, self.n_ear)

    def validate(self) -> "IpdConfig":
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_ear < 1:
            raise ValueError("n_ear must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 <= self.max_spike_prob <= 1.0:
            raise ValueError("max_spike_prob must lie in [0, 1]")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return self

    def replace(self, **kw) -> "IpdConfig":
        return IpdConfig(**{**asdict(self), **kw})


@dataclass
class SpikeBatch:
    """Events ``[B, T, D]`` (uint8 for spike data, float64 for real-valued windows),
    integer labels and, for generated data, the underlying IPD values."""

    events: np.ndarray
    labels: np.ndarray
    n_classes: int
    ipd_values: Optional[np.ndarray] = None
    config: Optional[IpdConfig] = field(default=None, compare=False)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def shape(self) -> tuple:
        return self.events.shape

    @property
    def is_binary(self) -> bool:
        return self.events.dtype == np.uint8

    def subset(self, idx) -> "SpikeBatch":
        idx = np.asarray(idx)
        return SpikeBatch(
            self.events[idx], self.labels[idx], self.n_classes,
            None if self.ipd_values is None else self.ipd_values[idx], self.config)

    def inputs(self, idx=None) -> np.ndarray:
        """Float64 input array for the model (optionally a row subset)."""
        ev = self.events if idx is None else self.events[idx]
        return ev.astype(np.float64)

    def validate(self) -> "SpikeBatch":
        ev, lab = self.events, self.labels
        if ev.ndim != 3:
            raise DatasetValidationError(f"events must be [B, T, D], got shape {ev.shape}")
        if lab.shape != (ev.shape[0],):
            raise DatasetValidationError("labels must have one entry per sample")
        if lab.size and (lab.min() < 0 or lab.max() >= self.n_classes):
            raise DatasetValidationError(
                f"labels must lie in [0, {self.n_classes}), found [{lab.min()}, {lab.max()}]")
        if self.is_binary and ev.size and ev.max() > 1:
            raise DatasetValidationError("binary events must be 0 or 1")
        if not self.is_binary and not np.all(np.isfinite(ev)):
            raise DatasetValidationError("events contain NaN or Inf")
        if self.ipd_values is not None:
            expected = class_of(self.ipd_values, self.n_classes)
            if not np.array_equal(expected, lab):
                raise DatasetValidationError("labels disagree with ipd_values")
        return self

    def equals(self, other: "SpikeBatch") -> bool:
        same_ipd = (self.ipd_values is None and other.ipd_values is None) or (
            self.ipd_values is not None and other.ipd_values is not None
            and np.array_equal(self.ipd_values, other.ipd_values))
        return (self.n_classes == other.n_classes and np.array_equal(self.events, other.events)
                and np.array_equal(self.labels, other.labels) and same_ipd)


def class_of(ipd, n_classes: int):
    """Equal-width bin index of an IPD in [-pi, pi); the right edge clamps to C-1."""
    arr = np.asarray(ipd, dtype=np.float64)
    if np.any(arr < -math.pi) or np.any(arr > math.pi):
        raise ValueError("ipd must lie in [-pi, pi)")
    k = np.floor((arr + math.pi) * n_classes / TWO_PI).astype(np.int64)
    k = np.clip(k, 0, n_classes - 1)
    return int(k) if k.ndim == 0 else k


def spike_probability(config: IpdConfig, ipd: float, start_phase: float = 0.0) -> np.ndarray:
    """Per-bin firing probability ``[T, D]`` for one sample."""
    t = config.time_grid()
    delays = config.channel_delays()
    ear = np.concatenate([delays, delays + ipd])
    theta = TWO_PI * config.carrier_freq * t[:, None] + start_phase + ear[None, :]
    return config.max_spike_prob * 0.5 * (1.0 + np.sin(theta))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate(config: IpdConfig, start: int = 0) -> SpikeBatch:
    """Draw ``config.n_samples`` samples (indices ``start ..``) deterministically."""
    config.validate()
    n, nt, nd = config.n_samples, config.time_steps, config.n_channels
    events = np.empty((n, nt, nd), dtype=np.uint8)
    ipds = np.empty(n)
    for i in range(n):
        rng = sample_rng(config.seed, start + i)
        ipd = rng.uniform(-math.pi, math.pi)
        phase0 = rng.uniform(0.0, TWO_PI) if config.random_start_phase else 0.0
        p = spike_probability(config, ipd, phase0)
        events[i] = rng.random((nt, nd)) < p
        ipds[i] = ipd
    return SpikeBatch(events, class_of(ipds, config.n_classes), config.n_classes, ipds, config)


def zscore(train: np.ndarray, *others: np.ndarray):
    """Per-channel z-score using statistics of ``train`` ([B, T, D]).

    Returns the normalized arrays (train first). Constant channels are only
    centered.
    """
    x = train.astype(np.float64)
    mu = x.mean(axis=(0, 1))
    sd = x.std(axis=(0, 1))
    sd = np.where(sd > 0, sd, 1.0)
    out = [(x - mu) / sd] + [(o.astype(np.float64) - mu) / sd for o in others]
    return out[0] if not others else tuple(out)


# ---------------------------------------------------------------------------
# binary container


def save(batch: SpikeBatch, path) -> None:
    if not batch.is_binary:
        raise DatasetValidationError("the binary container stores 0/1 events only; use CSV for real data")
    b, t, d = batch.events.shape
    cfg = json.dumps(asdict(batch.config) if batch.config else {}, sort_keys=True).encode()
    has_ipd = batch.ipd_values is not None
    parts = [
        _HEAD.pack(MAGIC, FORMAT_VERSION, int(has_ipd), len(cfg)),
        cfg,
        _DIMS.pack(b, t, d, batch.n_classes),
        batch.labels.astype("<i4").tobytes(),
    ]
    if has_ipd:
        parts.append(batch.ipd_values.astype("<f8").tobytes())
    parts.append(np.packbits(batch.events.reshape(-1), bitorder="little").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path) -> SpikeBatch:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise DatasetFormatError(f"truncated file while reading {what}", pos)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    magic, version, flags, cfg_len = _HEAD.unpack(take(_HEAD.size, "header"))
    if magic != MAGIC:
        raise DatasetFormatError("bad magic bytes", 0)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version}", 8)
    cfg_at = pos
    try:
        cfg_dict = json.loads(take(cfg_len, "config block").decode("utf-8"))
        config = IpdConfig(**cfg_dict) if cfg_dict else None
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise DatasetFormatError(f"unreadable config block: {exc}", cfg_at) from None
    b, t, d, c = _DIMS.unpack(take(_DIMS.size, "dimensions"))
    labels = np.frombuffer(take(4 * b, "labels"), dtype="<i4").astype(np.int64)
    ipd = None
    if flags & 1:
        ipd = np.frombuffer(take(8 * b, "ipd values"), dtype="<f8").copy()
    nbits = b * t * d
    packed = np.frombuffer(take((nbits + 7) // 8, "events"), dtype=np.uint8)
    if pos != len(raw):
        raise DatasetFormatError(f"{len(raw) - pos} unexpected trailing bytes", pos)
    events = np.unpackbits(packed, count=nbits, bitorder="little").reshape(b, t, d)
    return SpikeBatch(events, labels, c, ipd, config).validate()


# ---------------------------------------------------------------------------
# CSV interchange
#
# line 1:  # cten-events T=<T> D=<D> C=<C> kind=<binary|real>
# line 2:  sample,t,e0,...,e<D-1>,label
# then one row per (sample, time step), samples contiguous, t = 0..T-1.


def export_csv(batch: SpikeBatch, path) -> None:
    b, t, d = batch.events.shape
    kind = "binary" if batch.is_binary else "real"
    with open(path, "w", newline="") as fh:
        fh.write(f"# cten-events T={t} D={d} C={batch.n_classes} kind={kind}\n")
        fh.write(",".join(["sample", "t"] + [f"e{j}" for j in range(d)] + ["label"]) + "\n")
        sample_col = np.repeat(np.arange(b), t)
        t_col = np.tile(np.arange(t), b)
        lab_col = np.repeat(batch.labels, t)
        ev = batch.events.reshape(b * t, d)
        if batch.is_binary:
            body = np.column_stack([sample_col, t_col, ev, lab_col])
            np.savetxt(fh, body, fmt="%d", delimiter=",")
        else:
            for k in range(b * t):
                vals = ",".join(repr(float(v)) for v in ev[k])
                fh.write(f"{sample_col[k]},{t_col[k]},{vals},{lab_col[k]}\n")


def _parse_header(line: str) -> dict:
    if not line.startswith("# cten-events"):
        raise DatasetFormatError("missing '# cten-events' header", 1, unit="row")
    meta = {}
    for tok in line[len("# cten-events"):].split():
        if "=" not in tok:
            raise DatasetFormatError(f"bad header token {tok!r}", 1, unit="row")
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        dims = {k: int(meta[k]) for k in ("T", "D", "C")}
    except (KeyError, ValueError):
        raise DatasetFormatError("header must declare integer T, D and C", 1, unit="row") from None
    dims["kind"] = meta.get("kind", "binary")
    if dims["kind"] not in ("binary", "real"):
        raise DatasetFormatError(f"unknown kind {dims['kind']!r}", 1, unit="row")
    return dims


def ingest_csv(path, normalize: bool = False) -> SpikeBatch:
    """Read a CSV written by :func:`export_csv` (or an external tool using the
    same layout). With ``normalize`` the events are per-channel z-scored using
    the statistics of this file; to normalize a test split with training
    statistics use :func:`zscore` directly."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file", 1, unit="row") from None
    dims = _parse_header(",".join(header))
    nt, nd, nc, kind = dims["T"], dims["D"], dims["C"], dims["kind"]
    cols = next(reader, None)
    expected = ["sample", "t"] + [f"e{j}" for j in range(nd)] + ["label"]
    if cols != expected:
        raise DatasetFormatError(f"column header must be sample,t,e0..e{nd - 1},label", 2, unit="row")
    width = nd + 3
    rows = []
    for lineno, row in enumerate(reader, start=3):
        if len(row) != width:
            raise DatasetFormatError(f"expected {width} columns, found {len(row)}", lineno, unit="row")
        rows.append(row)
    if len(rows) % nt:
        raise DatasetFormatError(f"row count {len(rows)} is not a multiple of T={nt}", len(rows) + 2, unit="row")
    nb = len(rows) // nt
    try:
        arr = np.array(rows, dtype=np.float64) if rows else np.zeros((0, width))
    except ValueError:
        for lineno, row in enumerate(rows, start=3):
            try:
                [float(v) for v in row]
            except ValueError:
                raise DatasetFormatError("non-numeric field", lineno, unit="row") from None
        raise
    arr = arr.reshape(nb, nt, width)
    sample_ids, t_ids, labels = arr[:, :, 0], arr[:, :, 1], arr[:, :, -1]
    for i in range(nb):
        bad_t = np.nonzero(t_ids[i] != np.arange(nt))[0]
        if bad_t.size:
            raise DatasetFormatError("time index out of sequence", 3 + i * nt + int(bad_t[0]), unit="row")
        bad_s = np.nonzero(sample_ids[i] != sample_ids[i, 0])[0]
        if bad_s.size:
            raise DatasetFormatError("sample id changes within a sample block", 3 + i * nt + int(bad_s[0]), unit="row")
        bad_l = np.nonzero(labels[i] != labels[i, 0])[0]
        if bad_l.size:
            raise DatasetFormatError("label changes within a sample block", 3 + i * nt + int(bad_l[0]), unit="row")
    lab = labels[:, 0] if nb else np.zeros(0)
    bad = np.nonzero((lab < 0) | (lab >= nc) | (lab != np.round(lab)))[0]
    if bad.size:
        raise DatasetFormatError(f"label {lab[bad[0]]:g} outside [0, {nc})", 3 + int(bad[0]) * nt, unit="row")
    ev = arr[:, :, 2:-1]
    if kind == "binary":
        off = np.argwhere((ev != 0) & (ev != 1))
        if off.size:
            i, j = int(off[0][0]), int(off[0][1])
            raise DatasetFormatError("binary event column holds a value other than 0/1", 3 + i * nt + j, unit="row")
        events = ev.astype(np.uint8)
    else:
        events = ev
    if normalize:
        events = zscore(events)
    return SpikeBatch(events, lab.astype(np.int64), nc).validate()


def config_fields() -> set:
    return {f.name for f in fields(IpdConfig)}
