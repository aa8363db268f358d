"""CNN-BiGRU network producing frame-wise event activations."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as tc
from .tensor import Tensor

GATES = ("g", "r", "h")
DIRECTIONS = ("f", "b")

CHECKPOINT_MAGIC = b"GLRSEDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_bands: int = 64
    conv_channels: tuple[int, ...] = (128, 128, 128)
    pool_sizes: tuple[int, ...] = (3, 3, 3)
    gru_units: int = 32
    num_events: int = 25

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pool_sizes", tuple(int(p) for p in self.pool_sizes))
        if len(self.conv_channels) != len(self.pool_sizes):
            raise ValueError("conv_channels and pool_sizes must have the same length")
        if min(self.conv_channels, default=1) < 1 or self.gru_units < 1 or self.num_events < 1:
            raise ValueError("channel, unit and event counts must be positive")
        d = self.input_bands
        for p in self.pool_sizes:
            if p < 1 or d < p:
                raise ValueError(f"{self.input_bands} bands cannot pass pooling {self.pool_sizes}")
            d //= p

    @property
    def pooled_bands(self) -> int:
        d = self.input_bands
        for p in self.pool_sizes:
            d //= p
        return d

    @property
    def gru_input_dim(self) -> int:
        return self.pooled_bands * self.conv_channels[-1]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = 1
    for i, cout in enumerate(cfg.conv_channels):
        shapes[f"conv{i}.kernel"] = (cout, cin, 3, 3)
        shapes[f"conv{i}.bias"] = (cout,)
        cin = cout
    h, f = cfg.gru_units, cfg.gru_input_dim
    for d in DIRECTIONS:
        for gate in GATES:
            shapes[f"gru.{d}.W_{gate}"] = (h, f)
            shapes[f"gru.{d}.U_{gate}"] = (h, h)
            shapes[f"gru.{d}.b_{gate}"] = (h,)
    shapes["out.W"] = (cfg.num_events, 2 * h)
    shapes["out.b"] = (cfg.num_events,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Matrices uniform in +-1/sqrt(fan_in); biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            s = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-s, s, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _as_batch(V) -> tuple[Tensor, bool]:
    t = V if isinstance(V, Tensor) else Tensor(V)
    if t.ndim == 2:
        return t.reshape(1, *t.shape), False
    if t.ndim == 3:
        return t, True
    raise ValueError(f"expected (D, T) or (B, D, T) features, got {t.shape}")


def conv_stack(V, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """(B, D, T) features -> (B, C, D', T); an unbatched (D, T) input gives (C, D', T)."""
    x, batched = _as_batch(V)
    if x.shape[1] != cfg.input_bands:
        raise ValueError(f"expected {cfg.input_bands} bands, got {x.shape[1]}")
    x = x.reshape(x.shape[0], 1, *x.shape[1:])
    for i, pool in enumerate(cfg.pool_sizes):
        x = tc.relu(tc.conv2d(x, params[f"conv{i}.kernel"], params[f"conv{i}.bias"]))
        x = tc.maxpool_freq(x, pool)
    return x if batched else x.reshape(x.shape[1:])


def flatten_time(conv_out: Tensor) -> Tensor:
    """(B, C, D', T) -> (B, T, D'*C); index d*C + c, frequency-major."""
    single = conv_out.ndim == 3
    x = conv_out.reshape(1, *conv_out.shape) if single else conv_out
    b, c, d, t = x.shape
    out = x.transpose(0, 3, 2, 1).reshape(b, t, d * c)
    return out.reshape(t, d * c) if single else out


def unflatten_time(seq: Tensor, channels: int) -> Tensor:
    single = seq.ndim == 2
    x = seq.reshape(1, *seq.shape) if single else seq
    b, t, dc = x.shape
    out = x.reshape(b, t, dc // channels, channels).transpose(0, 3, 2, 1)
    return out.reshape(out.shape[1:]) if single else out


def _gru_direction(xs: Tensor, params: Mapping[str, Tensor], d: str, reverse: bool) -> list[Tensor]:
    p = {k: params[f"gru.{d}.{k}"] for k in ("W_g", "W_r", "W_h", "U_g", "U_r", "U_h", "b_g", "b_r", "b_h")}
    units = p["U_g"].shape[0]
    if p["W_g"].shape[1] != xs.shape[-1]:
        raise ValueError(f"GRU expects inputs of size {p['W_g'].shape[1]}, got {xs.shape[-1]}")
    batch, steps = xs.shape[0], xs.shape[1]
    # input projections for all frames at once
    W = tc.concat([p["W_g"], p["W_r"], p["W_h"]], axis=0)
    b = tc.concat([p["b_g"], p["b_r"], p["b_h"]], axis=0)
    proj = xs @ W.T + b
    U_gr = tc.concat([p["U_g"], p["U_r"]], axis=0).T
    U_h = p["U_h"].T
    h = Tensor(np.zeros((batch, units)))
    out: list[Tensor] = [None] * steps  # type: ignore[list-item]
    for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
        gates = tc.sigmoid(proj[:, t, :2 * units] + h @ U_gr)
        g, r = gates[:, :units], gates[:, units:]
        cand = tc.tanh(proj[:, t, 2 * units:] + (r * h) @ U_h)
        h = h + g * (cand - h)
        out[t] = h
    return out


def bigru_forward(xs: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """(B, T, F) -> (B, T, 2H); forward states first, then backward states."""
    single = xs.ndim == 2
    x = xs.reshape(1, *xs.shape) if single else xs
    fwd = _gru_direction(x, params, "f", reverse=False)
    bwd = _gru_direction(x, params, "b", reverse=True)
    h = tc.concat([tc.stack(fwd, axis=1), tc.stack(bwd, axis=1)], axis=2)
    return h.reshape(h.shape[1:]) if single else h


def output_layer(h: Tensor, W_o: Tensor, b_o: Tensor) -> Tensor:
    return tc.sigmoid(h @ W_o.T + b_o)


def model_forward(V, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Features (D, T) or (B, D, T) -> activations (M, T) or (B, M, T)."""
    x, batched = _as_batch(V)
    seq = flatten_time(conv_stack(x, params, cfg))
    y = output_layer(bigru_forward(seq, params), params["out.W"], params["out.b"])
    y = y.transpose(0, 2, 1)
    return y if batched else y.reshape(y.shape[1:])


def predict(V, params: Mapping[str, Tensor], cfg: ModelConfig) -> np.ndarray:
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    return model_forward(V, frozen, cfg).data


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    labels: tuple[str, ...]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}


def save_checkpoint(path: str | Path, cfg: ModelConfig, labels, params: Mapping[str, Tensor | np.ndarray]) -> None:
    """Binary layout: magic, version, JSON metadata block, then named tensors.

    All integers are little-endian uint32; tensor data is row-major float64 LE.
    """
    meta = json.dumps({"config": asdict(cfg), "labels": list(labels)}, sort_keys=True).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta,
              struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    version, meta_len = take("<II")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(raw[pos:pos + meta_len])
    pos += meta_len
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (n,) = take("<I")
        name = raw[pos:pos + n].decode()
        pos += n
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        size = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    cfg = ModelConfig(**meta["config"])
    return Checkpoint(cfg, tuple(meta["labels"]), params)
