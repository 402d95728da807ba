"""Continuous Temporal Energy Network and its temporal-attention variant.

Forward pass for an input raster ``x[B, T, D]`` sampled at times ``t[T]``:

1. ``h = tanh(x @ W)``
2. ``psi_r = h * cos(omega t + phi)``, ``psi_i = h * sin(omega t + phi)``
3. ``psi <- psi + alpha * tanh(psi @ W_int1 @ W_int2)`` for both parts
4. ``P = psi_r**2 + psi_i**2``
5. optional multi-head self-attention block over time on ``P``
6. temporal mean and/or max of ``P``
7. two-layer ReLU MLP to class logits

Ablations switch off step 2 (``psi_r = h``, ``psi_i = 0``), step 3, or one of the
pooling statistics.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

POOLINGS = ("mean+max", "mean", "max")


@dataclass(frozen=True)
class AblationConfig:
    use_phase: bool = True
    use_interaction: bool = True
    pooling: str = "mean+max"
    attention_heads: int = 0  # 0: no attention block

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.attention_heads < 0:
            raise ValueError("attention_heads must be >= 0")

    @property
    def has_attention(self) -> bool:
        return self.attention_heads > 0


VARIANTS = {
    "full": AblationConfig(),
    "no-interaction": AblationConfig(use_interaction=False),
    "no-phase": AblationConfig(use_phase=False),
    "mean-only": AblationConfig(pooling="mean"),
    "max-only": AblationConfig(pooling="max"),
}
ABLATION_ORDER = ("full", "no-interaction", "no-phase", "mean-only", "max-only")


def cten_ta(heads: int = 8) -> AblationConfig:
    return AblationConfig(attention_heads=heads)


@dataclass(frozen=True)
class ModelDims:
    n_inputs: int = 400
    hidden: int = 160
    rank: int = 48
    n_classes: int = 12
    mlp_hidden: int = 128
    alpha: float = 0.1
    ffn_mult: int = 2
    ln_eps: float = 1e-5
    omega_min_hz: float = 1.0
    omega_max_hz: float = 100.0

    def validate(self, ablation: AblationConfig) -> None:
        for name in ("n_inputs", "hidden", "rank", "n_classes", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if ablation.has_attention and self.hidden % ablation.attention_heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by {ablation.attention_heads} heads")


def feature_width(dims: ModelDims, ablation: AblationConfig) -> int:
    return 2 * dims.hidden if ablation.pooling == "mean+max" else dims.hidden


def param_shapes(dims: ModelDims, ablation: AblationConfig) -> dict:
    """Name -> shape of every learnable tensor (alpha is a fixed constant)."""
    d, h, r, c, m = dims.n_inputs, dims.hidden, dims.rank, dims.n_classes, dims.mlp_hidden
    f = feature_width(dims, ablation)
    shapes = {"W": (d, h), "omega": (h,), "phi": (h,)}
    if ablation.use_interaction:
        shapes["W_int1"] = (h, r)
        shapes["W_int2"] = (r, h)
    if ablation.has_attention:
        hf = dims.ffn_mult * h
        shapes.update({
            "attn.W_Q": (h, h), "attn.W_K": (h, h), "attn.W_V": (h, h), "attn.W_O": (h, h),
            "attn.ln1_gain": (h,), "attn.ln1_bias": (h,),
            "attn.ffn_W1": (h, hf), "attn.ffn_b1": (hf,),
            "attn.ffn_W2": (hf, h), "attn.ffn_b2": (h,),
            "attn.ln2_gain": (h,), "attn.ln2_bias": (h,),
        })
    shapes.update({"mlp_W1": (f, m), "mlp_b1": (m,), "mlp_W2": (m, c), "mlp_b2": (c,)})
    return shapes


def parameter_count(dims: ModelDims, ablation: AblationConfig = AblationConfig()) -> int:
    return sum(math.prod(s) for s in param_shapes(dims, ablation).values())


# fan-in used for uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init
_WEIGHTS = {
    "W", "W_int1", "W_int2", "mlp_W1", "mlp_W2",
    "attn.W_Q", "attn.W_K", "attn.W_V", "attn.W_O", "attn.ffn_W1", "attn.ffn_W2",
}
_BIAS_FAN_IN = {"mlp_b1": "mlp_W1", "mlp_b2": "mlp_W2", "attn.ffn_b1": "attn.ffn_W1", "attn.ffn_b2": "attn.ffn_W2"}


@dataclass
class CtenParams:
    dims: ModelDims
    ablation: AblationConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "CtenParams":
        return CtenParams(self.dims, self.ablation,
                          {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()})

    def logits(self, x, time_grid) -> Tensor:
        return forward(self, x, time_grid)


def init(dims: ModelDims, ablation: AblationConfig, seed: int) -> CtenParams:
    """Deterministic initialization from ``seed``."""
    dims.validate(ablation)
    rng = np.random.default_rng(seed)
    shapes = param_shapes(dims, ablation)
    out = {}
    for name, shape in shapes.items():
        if name == "omega":
            lo, hi = math.log(2 * math.pi * dims.omega_min_hz), math.log(2 * math.pi * dims.omega_max_hz)
            arr = np.exp(rng.uniform(lo, hi, size=shape))
        elif name == "phi":
            arr = rng.uniform(0.0, 2 * math.pi, size=shape)
        elif name.endswith("_gain"):
            arr = np.ones(shape)
        elif name.endswith("ln1_bias") or name.endswith("ln2_bias"):
            arr = np.zeros(shape)
        else:
            fan_in = shape[0] if name in _WEIGHTS else shapes[_BIAS_FAN_IN[name]][0]
            bound = math.sqrt(1.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        out[name] = Tensor(arr, requires_grad=True, name=name)
    return CtenParams(dims, ablation, out)


def attention_block(P: Tensor, params: CtenParams, heads: int, return_weights: bool = False):
    """Multi-head self-attention over time with residual LayerNorm and a GELU FFN.

    ``P`` is ``[B, T, H]`` (or a single ``[T, H]`` sample). With
    ``return_weights`` the per-head attention matrices ``[B, heads, T, T]`` are
    returned as a second value.
    """
    single = P.ndim == 2
    if single:
        P = P.reshape(1, *P.shape)
    b, t, h = P.shape
    if heads < 1 or h % heads:
        raise ad.DimensionError(f"hidden size {h} is not divisible by {heads} heads")
    dh = h // heads
    eps = params.dims.ln_eps

    def split(z):
        return z.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)

    q = split(P @ params["attn.W_Q"])
    k = split(P @ params["attn.W_K"])
    v = split(P @ params["attn.W_V"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    a = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, h)
    p1 = ad.layer_norm(P + a @ params["attn.W_O"], params["attn.ln1_gain"], params["attn.ln1_bias"], eps)
    ffn = ad.gelu(p1 @ params["attn.ffn_W1"] + params["attn.ffn_b1"]) @ params["attn.ffn_W2"] + params["attn.ffn_b2"]
    p2 = ad.layer_norm(p1 + ffn, params["attn.ln2_gain"], params["attn.ln2_bias"], eps)
    if single:
        p2 = p2.reshape(t, h)
    return (p2, weights.data) if return_weights else p2


def _stages(params: CtenParams, x, time_grid) -> dict:
    abl = params.ablation
    x = ad.as_tensor(x)
    if x.ndim != 3:
        raise ad.DimensionError(f"input must be [B, T, D], got {x.shape}")
    if x.shape[2] != params.dims.n_inputs:
        raise ad.DimensionError(f"input has {x.shape[2]} channels, model expects {params.dims.n_inputs}")
    time_grid = np.asarray(time_grid, dtype=np.float64)
    if time_grid.shape != (x.shape[1],):
        raise ad.DimensionError(f"time grid has shape {time_grid.shape}, expected ({x.shape[1]},)")
    st = {}
    h = ad.check_finite(ad.tanh(x @ params["W"]), "projection")
    st["h"] = h
    if abl.use_phase:
        psi_r, psi_i = ad.wave_modulate(h, params["omega"], params["phi"], time_grid)
    else:
        psi_r, psi_i = h, None
    if abl.use_interaction:
        w1, w2 = params["W_int1"], params["W_int2"]
        alpha = params.dims.alpha
        psi_r = psi_r + alpha * ad.tanh((psi_r @ w1) @ w2)
        if psi_i is not None:
            psi_i = psi_i + alpha * ad.tanh((psi_i @ w1) @ w2)
        ad.check_finite(psi_r, "interaction")
    st["psi_r"], st["psi_i"] = psi_r, psi_i
    energy = ad.square(psi_r) if psi_i is None else ad.square(psi_r) + ad.square(psi_i)
    st["energy"] = ad.check_finite(energy, "energy")
    P = energy
    if abl.has_attention:
        P = ad.check_finite(attention_block(P, params, abl.attention_heads), "attention")
    st["pooled_input"] = P
    if abl.pooling == "mean+max":
        feat = ad.concat([P.mean(axis=1), P.max(axis=1)], axis=-1)
    elif abl.pooling == "mean":
        feat = P.mean(axis=1)
    else:
        feat = P.max(axis=1)
    st["features"] = feat
    hid = ad.relu(feat @ params["mlp_W1"] + params["mlp_b1"])
    st["logits"] = ad.check_finite(hid @ params["mlp_W2"] + params["mlp_b2"], "classifier")
    return st


def forward(params: CtenParams, x, time_grid) -> Tensor:
    """Class logits ``[B, C]`` for inputs ``x[B, T, D]``."""
    return _stages(params, x, time_grid)["logits"]


def latent_energy_traces(params: CtenParams, x, time_grid, with_parts: bool = False):
    """Energy field ``P[T, H]`` of one sample ``x[T, D]`` before any pooling.

    With ``with_parts`` also returns the real and imaginary wave parts used to
    form it (the imaginary part is zeros when phase modulation is off).
    """
    x = np.asarray(x, dtype=np.float64)
    st = _stages(params, x[None], time_grid)
    P = st["energy"].data[0]
    if not with_parts:
        return P
    psi_r = st["psi_r"].data[0]
    psi_i = np.zeros_like(psi_r) if st["psi_i"] is None else st["psi_i"].data[0]
    return P, psi_r, psi_i


def stage_arrays(params: CtenParams, x, time_grid) -> dict:
    """All intermediate arrays of a forward pass, for export and inspection."""
    st = _stages(params, x, time_grid)
    return {k: (None if v is None else v.data) for k, v in st.items()}


# ---------------------------------------------------------------------------
# flattened-input MLP baseline


@dataclass
class MlpBaseline:
    tensors: dict

    @property
    def n_inputs(self) -> int:
        return self.tensors["W1"].shape[0]

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "MlpBaseline":
        return MlpBaseline({k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()})

    def logits(self, x, time_grid=None) -> Tensor:
        x = ad.as_tensor(x)
        flat = x.reshape(x.shape[0], -1)
        hid = ad.relu(flat @ self.tensors["W1"] + self.tensors["b1"])
        return hid @ self.tensors["W2"] + self.tensors["b2"]


def init_mlp_baseline(n_inputs: int, hidden: int, n_classes: int, seed: int) -> MlpBaseline:
    rng = np.random.default_rng(seed)
    b1, b2 = math.sqrt(1.0 / n_inputs), math.sqrt(1.0 / hidden)
    shapes = {"W1": ((n_inputs, hidden), b1), "b1": ((hidden,), b1),
              "W2": ((hidden, n_classes), b2), "b2": ((n_classes,), b2)}
    return MlpBaseline({k: Tensor(rng.uniform(-b, b, size=s), requires_grad=True, name=k)
                        for k, (s, b) in shapes.items()})


def mlp_baseline_count(n_inputs: int, hidden: int, n_classes: int) -> int:
    return n_inputs * hidden + hidden + hidden * n_classes + n_classes


# ---------------------------------------------------------------------------
# checkpoints: <path> holds the arrays, <path>.json the run metadata

CKPT_MAGIC = b"CTENCKPT"
_CKPT_HEAD = struct.Struct("<8sHI")


def save_checkpoint(params: CtenParams, path, metadata: Optional[dict] = None) -> None:
    names = list(params.tensors)
    header = json.dumps({
        "dims": asdict(params.dims),
        "ablation": asdict(params.ablation),
        "tensors": [[n, list(params[n].shape)] for n in names],
    }, sort_keys=True).encode()
    blob = [_CKPT_HEAD.pack(CKPT_MAGIC, 1, len(header)), header]
    blob += [params[n].data.astype("<f8").tobytes() for n in names]
    path = Path(path)
    path.write_bytes(b"".join(blob))
    meta = {"dims": asdict(params.dims), "ablation": asdict(params.ablation), **(metadata or {})}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> CtenParams:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise ValueError("checkpoint truncated in header")
    magic, version, hlen = _CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC or version != 1:
        raise ValueError("not a CTEN checkpoint (bad magic or version)")
    pos = _CKPT_HEAD.size
    header = json.loads(raw[pos:pos + hlen].decode())
    pos += hlen
    dims = ModelDims(**header["dims"])
    ablation = AblationConfig(**header["ablation"])
    tensors = {}
    for name, shape in header["tensors"]:
        n = math.prod(shape)
        if pos + 8 * n > len(raw):
            raise ValueError(f"checkpoint truncated in tensor {name!r} at byte {pos}")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
        pos += 8 * n
    if pos != len(raw):
        raise ValueError(f"trailing bytes in checkpoint at byte {pos}")
    return CtenParams(dims, ablation, tensors)
