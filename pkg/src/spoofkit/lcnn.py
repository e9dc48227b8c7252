"""Light CNN classifier: nine MFM convolutions, two BLSTM layers, a
temporal residual mean, and two fully connected heads.

The width_scale knob shrinks every convolution width (desk-scale models
for tests and demos); the BLSTM hidden size follows the flattened feature
width so the residual sum stays well-defined at any scale.

Checkpoint format: magic "LCNN", u32 version, u32 JSON config length,
JSON config, then named tensor tables (u32 count; per tensor u16 name
length, UTF-8 name, u8 ndim, u32 dims..., f32-LE data) for parameters and
buffers.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError

_CKPT_MAGIC = b"LCNN"
_CKPT_VERSION = 1

_KERNEL_SIZES = (5, 1, 3, 1, 3, 1, 3, 1, 3)
# layers after which a 2x2 max pool runs (conv index, 1-based)
_POOL_AFTER = {1, 3, 5, 9}
# batch norm placement: conv index -> bn index running after that conv's MFM
_BN_AFTER_MFM = {2: 1, 4: 3, 6: 4, 7: 5, 8: 6}
# bn2 runs after MaxPool2 rather than after an MFM
_BN_AFTER_POOL = {2: 2}


@dataclass(frozen=True)
class LcnnConfig:
    input_bins: int = 257
    conv_channels: tuple = (64, 64, 96, 96, 128, 128, 64, 64, 64)
    embedding_dim: int = 512
    dropout_rate: float = 0.5
    width_scale: float = 1.0

    def __post_init__(self):
        if self.embedding_dim not in (128, 512):
            raise ValueError("embedding_dim must be 128 or 512")
        if len(self.conv_channels) != 9:
            raise ValueError("conv_channels must list nine widths")
        for c in self.scaled_channels():
            if c < 2 or c % 2:
                raise ValueError(
                    f"width_scale {self.width_scale} yields channel width {c}; "
                    "all scaled widths must be even and at least 2"
                )

    def scaled_channels(self) -> tuple[int, ...]:
        return tuple(int(round(c * self.width_scale)) for c in self.conv_channels)

    @property
    def final_bins(self) -> int:
        b = self.input_bins
        for _ in range(4):
            b //= 2
        return b

    @property
    def flatten_width(self) -> int:
        return self.final_bins * (self.scaled_channels()[-1] // 2)

    @property
    def lstm_hidden(self) -> int:
        return self.flatten_width // 2

    def to_dict(self) -> dict:
        return {
            "input_bins": self.input_bins,
            "conv_channels": list(self.conv_channels),
            "embedding_dim": self.embedding_dim,
            "dropout_rate": self.dropout_rate,
            "width_scale": self.width_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LcnnConfig":
        return cls(
            input_bins=int(d["input_bins"]),
            conv_channels=tuple(d["conv_channels"]),
            embedding_dim=int(d["embedding_dim"]),
            dropout_rate=float(d["dropout_rate"]),
            width_scale=float(d["width_scale"]),
        )


@dataclass
class LcnnParams:
    """All trainable tensors plus batch-norm running buffers."""

    cfg: LcnnConfig
    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray]
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def clone(self) -> "LcnnParams":
        return LcnnParams(
            cfg=self.cfg,
            tensors={k: _param(v.data.copy()) for k, v in self.tensors.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            dtype=self.dtype,
        )

    def zero_grads(self) -> None:
        ad.zero_grads(self.tensors.values())


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def init_lcnn_params(cfg: LcnnConfig, rng: np.random.Generator, dtype=np.float32) -> LcnnParams:
    """Kaiming-uniform conv/linear weights, +-1/sqrt(hidden) BLSTM weights."""
    dtype = np.dtype(dtype)
    tensors: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    channels = cfg.scaled_channels()
    in_ch = 1
    for i, (out_ch, k) in enumerate(zip(channels, _KERNEL_SIZES), start=1):
        fan_in = in_ch * k * k
        tensors[f"conv{i}.w"] = _param(uniform((out_ch, in_ch, k, k), np.sqrt(6.0 / fan_in)))
        tensors[f"conv{i}.b"] = _param(np.zeros(out_ch, dtype=dtype))
        in_ch = out_ch // 2  # MFM halves the channels

    bn_channels = {1: channels[1] // 2, 2: channels[2] // 2, 3: channels[3] // 2,
                   4: channels[5] // 2, 5: channels[6] // 2, 6: channels[7] // 2}
    for bn_idx, c in bn_channels.items():
        tensors[f"bn{bn_idx}.gamma"] = _param(np.ones(c, dtype=dtype))
        tensors[f"bn{bn_idx}.beta"] = _param(np.zeros(c, dtype=dtype))
        buffers[f"bn{bn_idx}.mean"] = np.zeros(c, dtype=dtype)
        buffers[f"bn{bn_idx}.var"] = np.ones(c, dtype=dtype)

    hidden = cfg.lstm_hidden
    bound = 1.0 / np.sqrt(hidden)
    in_width = cfg.flatten_width
    for layer in (1, 2):
        for direction in ("fwd", "bwd"):
            prefix = f"blstm{layer}.{direction}"
            tensors[f"{prefix}.wx"] = _param(uniform((in_width, 4 * hidden), bound))
            tensors[f"{prefix}.wh"] = _param(uniform((hidden, 4 * hidden), bound))
            tensors[f"{prefix}.b"] = _param(uniform((4 * hidden,), bound))
        in_width = 2 * hidden

    tensors["fc1.w"] = _param(uniform((cfg.flatten_width, cfg.embedding_dim),
                                      np.sqrt(6.0 / cfg.flatten_width)))
    tensors["fc1.b"] = _param(np.zeros(cfg.embedding_dim, dtype=dtype))
    tensors["fc2.w"] = _param(uniform((cfg.embedding_dim, 2), np.sqrt(6.0 / cfg.embedding_dim)))
    tensors["fc2.b"] = _param(np.zeros(2, dtype=dtype))
    tensors["amsoftmax.w"] = _param(uniform((2, cfg.embedding_dim), np.sqrt(6.0 / cfg.embedding_dim)))
    buffers["centers"] = np.zeros((2, cfg.embedding_dim), dtype=dtype)

    return LcnnParams(cfg=cfg, tensors=tensors, buffers=buffers, dtype=dtype)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _lstm_direction(steps, wx: Tensor, wh: Tensor, b: Tensor, reverse: bool):
    n_steps = len(steps)
    batch = steps[0].shape[0]
    hidden = wh.shape[0]
    h = Tensor(np.zeros((batch, hidden), dtype=wx.dtype))
    c = Tensor(np.zeros((batch, hidden), dtype=wx.dtype))
    out = [None] * n_steps
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in order:
        gates = ad.add(ad.add(ad.matmul(steps[t], wx), ad.matmul(h, wh)), b)
        i_gate = ad.sigmoid(ad.narrow(gates, 1, 0, hidden))
        f_gate = ad.sigmoid(ad.narrow(gates, 1, hidden, hidden))
        g_gate = ad.tanh(ad.narrow(gates, 1, 2 * hidden, hidden))
        o_gate = ad.sigmoid(ad.narrow(gates, 1, 3 * hidden, hidden))
        c = ad.add(ad.mul(f_gate, c), ad.mul(i_gate, g_gate))
        h = ad.mul(o_gate, ad.tanh(c))
        out[t] = h
    return out


def blstm_layer(steps, params: LcnnParams, layer: int):
    """Bidirectional LSTM over a list of [B, F] step tensors.

    Returns per-step [B, 2*hidden] tensors: forward direction output
    concatenated with the backward direction output.
    """
    t = params.tensors
    fwd = _lstm_direction(steps, t[f"blstm{layer}.fwd.wx"], t[f"blstm{layer}.fwd.wh"],
                          t[f"blstm{layer}.fwd.b"], reverse=False)
    bwd = _lstm_direction(steps, t[f"blstm{layer}.bwd.wx"], t[f"blstm{layer}.bwd.wh"],
                          t[f"blstm{layer}.bwd.b"], reverse=True)
    return [ad.concat([f, bkw], axis=1) for f, bkw in zip(fwd, bwd)]


def forward_lcnn(
    params: LcnnParams,
    batch: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the full stack on a [B, bins, frames] batch.

    Returns (logits [B, 2], embedding [B, embedding_dim]).  With trace a
    list, (layer name, shape) pairs are appended for every named stage;
    4-D shapes are reported as (bins, frames, channels).
    """
    cfg = params.cfg
    batch = np.asarray(batch, dtype=params.dtype)
    if batch.ndim != 3:
        raise ValueError(f"expected [B, bins, frames] input, got shape {batch.shape}")
    if batch.shape[1] != cfg.input_bins:
        raise ValueError(f"expected {cfg.input_bins} bins, got {batch.shape[1]}")
    if batch.shape[2] < 16:
        raise ValueError("need at least 16 frames to survive four 2x poolings")
    if train and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("training forward needs an rng for dropout")

    def note(name, tensor):
        if trace is not None:
            s = tensor.shape
            trace.append((name, (s[2], s[3], s[1]) if len(s) == 4 else tuple(s[1:])))

    t = params.tensors
    x = Tensor(batch[:, None, :, :])
    pool_count = 0
    for i in range(1, 10):
        k = _KERNEL_SIZES[i - 1]
        x = ad.conv2d(x, t[f"conv{i}.w"], t[f"conv{i}.b"], padding=k // 2)
        note(f"Conv{i}", x)
        x = ad.mfm(x)
        note(f"MFM{i}", x)
        bn_idx = _BN_AFTER_MFM.get(i)
        if bn_idx is not None:
            x = ad.batchnorm2d(x, t[f"bn{bn_idx}.gamma"], t[f"bn{bn_idx}.beta"],
                               params.buffers[f"bn{bn_idx}.mean"],
                               params.buffers[f"bn{bn_idx}.var"], train=train)
            note(f"BatchNorm{bn_idx}", x)
        if i in _POOL_AFTER:
            pool_count += 1
            x = ad.maxpool2d(x)
            note(f"MaxPool{pool_count}", x)
            bn_idx = _BN_AFTER_POOL.get(pool_count)
            if bn_idx is not None:
                x = ad.batchnorm2d(x, t[f"bn{bn_idx}.gamma"], t[f"bn{bn_idx}.beta"],
                                   params.buffers[f"bn{bn_idx}.mean"],
                                   params.buffers[f"bn{bn_idx}.var"], train=train)
                note(f"BatchNorm{bn_idx}", x)

    b, c, hb, n_steps = x.shape
    flat = ad.reshape(ad.transpose(x, (0, 3, 2, 1)), (b, n_steps, hb * c))
    note("Flatten", flat)

    steps = [ad.reshape(ad.narrow(flat, 1, s, 1), (b, hb * c)) for s in range(n_steps)]
    steps1 = blstm_layer(steps, params, layer=1)
    note("BLSTM1", ad.stack_steps(steps1, axis=1) if trace is not None else steps1[0])
    steps2 = blstm_layer(steps1, params, layer=2)
    rnn_out = ad.stack_steps(steps2, axis=1)
    note("BLSTM2", rnn_out)

    # residual over the recurrent stack, then temporal average
    summed = ad.add(flat, rnn_out)
    pooled = ad.mean_op(summed, axis=1)
    note("MeanPool", pooled)

    embedding = ad.add(ad.matmul(pooled, t["fc1.w"]), t["fc1.b"])
    note("FC1", embedding)
    embedding = ad.dropout(embedding, cfg.dropout_rate, rng, train)
    logits = ad.add(ad.matmul(embedding, t["fc2.w"]), t["fc2.b"])
    note("FC2", logits)
    return logits, embedding


def detection_score(logits: np.ndarray) -> np.ndarray:
    """Higher means more bonafide: logit(bonafide) - logit(spoof).

    Class order is (spoof=0, bonafide=1) throughout the toolkit.
    """
    return logits[:, 1] - logits[:, 0]


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

def _write_tensor_table(fh, table: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor_table(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", fh.read(4))
    table = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
        table[name] = data.copy()
    return table


def save_checkpoint(path, params: LcnnParams, meta: dict | None = None) -> None:
    header = {"config": params.cfg.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
    buf.write(blob)
    _write_tensor_table(buf, {k: v.data for k, v in params.tensors.items()})
    _write_tensor_table(buf, params.buffers)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[LcnnParams, dict]:
    fh = io.BytesIO(Path(path).read_bytes())
    if fh.read(4) != _CKPT_MAGIC:
        raise DataError(f"{path}: bad magic, not an LCNN checkpoint")
    version, blob_len = struct.unpack("<II", fh.read(8))
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(fh.read(blob_len).decode("utf-8"))
    cfg = LcnnConfig.from_dict(header["config"])
    tensors = {k: _param(v) for k, v in _read_tensor_table(fh).items()}
    buffers = _read_tensor_table(fh)
    params = LcnnParams(cfg=cfg, tensors=tensors, buffers=buffers)
    return params, header.get("meta", {})
