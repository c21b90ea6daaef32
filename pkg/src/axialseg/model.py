"""The axial-MLP segmentation architecture.

Pipeline: trilinear downsize to a patch multiple, patchify to the 8-axis
layout (batch, three grid axes, three patch axes, channels), channel
embedding, a stack of blocks (six axial fully connected branches with axial
dropout and leaky ReLU, summed, then globally normalized with one scalar
weight/bias pair), a per-element head with sigmoid, unpatchify, and trilinear
upsize back to the input shape.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tt
from .errors import DimensionError, ParameterError
from .tensor import Tensor

# Order matters: it fixes the parameter layout, rng consumption and the
# flat vector serialization.
AXIS_NAMES = ("grid_d", "grid_h", "grid_w", "patch_d", "patch_h", "patch_w")

CHECKPOINT_MAGIC = b"AXSEGCKP"
CHECKPOINT_VERSION = 1
BYTE_ORDER_MARK = 0x01020304


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; grid sizes are derived, not stored."""

    crop_shape: tuple = (102, 94, 76)
    patch: tuple = (8, 8, 8)
    in_channels: int = 1
    hidden: int = 8
    depth: int = 6
    leaky_slope: float = 0.01
    dropout_rate: float = 0.02
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "crop_shape", tuple(int(v) for v in self.crop_shape))
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        if len(self.crop_shape) != 3 or any(v < 1 for v in self.crop_shape):
            raise ParameterError(f"crop_shape must be 3 positive ints, got {self.crop_shape}")
        if len(self.patch) != 3 or any(v < 1 for v in self.patch):
            raise ParameterError(f"patch must be 3 positive ints, got {self.patch}")
        if self.in_channels < 1 or self.hidden < 1 or self.depth < 1:
            raise ParameterError("in_channels, hidden and depth must all be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if any(g < 1 for g in self.grid):
            raise ParameterError(
                f"crop_shape {self.crop_shape} smaller than patch {self.patch} along some axis"
            )

    @property
    def grid(self) -> tuple:
        return tuple(c // p for c, p in zip(self.crop_shape, self.patch))

    @property
    def downsample_shape(self) -> tuple:
        """Crop shape floored to the nearest patch multiple."""
        return tuple(g * p for g, p in zip(self.grid, self.patch))

    @property
    def axis_lengths(self) -> tuple:
        """Lengths of the six axial-FC axes, in AXIS_NAMES order."""
        return self.grid + self.patch

    def to_dict(self) -> dict:
        return {
            "crop_shape": list(self.crop_shape),
            "patch": list(self.patch),
            "in_channels": self.in_channels,
            "hidden": self.hidden,
            "depth": self.depth,
            "leaky_slope": self.leaky_slope,
            "dropout_rate": self.dropout_rate,
            "norm_eps": self.norm_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            crop_shape=tuple(d["crop_shape"]),
            patch=tuple(d["patch"]),
            in_channels=int(d["in_channels"]),
            hidden=int(d["hidden"]),
            depth=int(d["depth"]),
            leaky_slope=float(d["leaky_slope"]),
            dropout_rate=float(d["dropout_rate"]),
            norm_eps=float(d.get("norm_eps", 1e-5)),
        )


def parameter_count(config: ModelConfig) -> int:
    """Closed-form number of scalars in a model built from `config`.

    Per block: one (a*f)^2 weight plus a*f bias for each of the six axis
    lengths a, plus the two normalization scalars. Embedding costs
    c*f + f, the head f + 1.
    """
    f = config.hidden
    c = config.in_channels
    axes = config.axis_lengths
    sum_a = sum(axes)
    sum_a2 = sum(a * a for a in axes)
    per_block = f * f * sum_a2 + f * sum_a + 2
    return (c * f + f) + config.depth * per_block + (f + 1)


class AxialMLPModel:
    """Parameter store for the axial-MLP. Create with init_model()."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    def named_parameters(self):
        """(name, Tensor) pairs in the canonical (serialization) order."""
        return list(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def dtype(self):
        return self.params["embed.weight"].dtype

    def astype(self, dtype) -> "AxialMLPModel":
        """Copy of the model with parameters cast to `dtype` (e.g. float32)."""
        cast = {
            name: Tensor(p.data.astype(dtype), requires_grad=True)
            for name, p in self.params.items()
        }
        return AxialMLPModel(self.config, cast)

    def parameter_vector(self) -> np.ndarray:
        """All parameters flattened to one float64 vector, canonical order."""
        return np.concatenate(
            [p.data.astype(np.float64).ravel() for p in self.params.values()]
        )

    def load_parameter_vector(self, vec: np.ndarray) -> None:
        if vec.size != parameter_count(self.config):
            raise ParameterError(
                f"vector has {vec.size} values, model needs {parameter_count(self.config)}"
            )
        offset = 0
        for p in self.params.values():
            n = p.data.size
            p.data = vec[offset : offset + n].reshape(p.shape).astype(self.dtype)
            offset += n

    def to_checkpoint(self, meta: Optional[dict] = None) -> "Checkpoint":
        return Checkpoint(self.config, self.parameter_vector(), dict(meta or {}))


def _param_shapes(config: ModelConfig):
    """Yield (name, shape, fan_in) in canonical order."""
    f = config.hidden
    c = config.in_channels
    yield "embed.weight", (c, f), c
    yield "embed.bias", (f,), None
    for layer in range(config.depth):
        for name, a in zip(AXIS_NAMES, config.axis_lengths):
            k = a * f
            yield f"block{layer}.{name}.weight", (k, k), k
            yield f"block{layer}.{name}.bias", (k,), None
        yield f"block{layer}.norm.weight", (), None
        yield f"block{layer}.norm.bias", (), None
    yield "head.weight", (f, 1), f
    yield "head.bias", (1,), None


def init_model(config: ModelConfig, rng: np.random.Generator) -> AxialMLPModel:
    """Weights uniform in +-1/sqrt(fan_in), biases zero, norm affine (1, 0)."""
    params = {}
    for name, shape, fan_in in _param_shapes(config):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        elif name.endswith("norm.weight"):
            data = np.array(1.0)
        elif fan_in is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return AxialMLPModel(config, params)


def forward(
    model: AxialMLPModel,
    x: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run a batch through the model.

    `x` is (B, D, H, W) or (B, D, H, W, C) with spatial shape equal to
    config.crop_shape. Returns a (B, D, H, W) tensor of soft masks in (0, 1).
    """
    cfg = model.config
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    arr = np.asarray(x)
    if arr.ndim == 4:
        arr = arr[..., None]
    if arr.ndim != 5:
        raise DimensionError(f"expected (B, D, H, W[, C]) input, got shape {np.shape(x)}")
    if tuple(arr.shape[1:4]) != cfg.crop_shape:
        raise DimensionError(
            f"input spatial shape {arr.shape[1:4]} != crop_shape {cfg.crop_shape}"
        )
    if arr.shape[4] != cfg.in_channels:
        raise DimensionError(f"expected {cfg.in_channels} channels, got {arr.shape[4]}")
    if mode == "train" and cfg.dropout_rate > 0.0 and rng is None:
        raise ParameterError("train-mode forward needs an rng for dropout")

    p = model.params
    t = Tensor(arr.astype(model.dtype, copy=False))
    t = tt.trilinear_resize(t, cfg.downsample_shape, axes=(1, 2, 3))
    t = tt.patchify(t, cfg.patch)
    t = tt.dense_last(t, p["embed.weight"], p["embed.bias"])

    for layer in range(cfg.depth):
        branches = [
            tt.axial_branch(
                t,
                1 + i,  # grid axes at 1..3, patch axes at 4..6
                p[f"block{layer}.{name}.weight"],
                p[f"block{layer}.{name}.bias"],
                cfg.leaky_slope,
                cfg.dropout_rate,
                mode,
                rng,
            )
            for i, name in enumerate(AXIS_NAMES)
        ]
        t = tt.add_n(branches)
        t = tt.normalize_global(
            t,
            p[f"block{layer}.norm.weight"],
            p[f"block{layer}.norm.bias"],
            eps=cfg.norm_eps,
        )

    t = tt.dense_last(t, p["head.weight"], p["head.bias"])
    t = tt.sigmoid(t)
    t = tt.unpatchify(t)
    t = tt.trilinear_resize(t, cfg.crop_shape, axes=(1, 2, 3))
    return tt.reshape(t, t.shape[:4])


def predict(model: AxialMLPModel, volume: np.ndarray) -> np.ndarray:
    """Tape-free eval-mode forward for a single (D, H, W) volume."""
    with tt.no_grad():
        out = forward(model, volume[None, ...], mode="eval")
    return out.data[0]


# -- loss ----------------------------------------------------------------


def soft_dice_loss(pred: Tensor, target, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth), over everything."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if t.shape != pred.shape:
        raise DimensionError(f"pred {pred.shape} and target {t.shape} differ")
    inter = (pred * t).sum()
    denom = pred.sum() + t.sum() + smooth
    return 1.0 - (2.0 * inter + smooth) / denom


def batch_soft_dice_loss(pred: Tensor, target, smooth: float = 1.0) -> Tensor:
    """Mean of per-sample soft-Dice losses over the leading batch axis."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if t.shape != pred.shape:
        raise DimensionError(f"pred {pred.shape} and target {t.shape} differ")
    axes = tuple(range(1, pred.ndim))
    inter = (pred * t).sum(axes=axes)
    denom = pred.sum(axes=axes) + t.sum(axes=axes) + smooth
    losses = 1.0 - (2.0 * inter + smooth) / denom
    return losses.sum() / pred.shape[0]


# -- checkpoints -----------------------------------------------------------


@dataclass
class Checkpoint:
    """Frozen model state: config, flat float64 parameters, free-form meta."""

    config: ModelConfig
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def build_model(self, dtype=np.float64) -> AxialMLPModel:
        model = init_model(self.config, np.random.default_rng(0))
        model.load_parameter_vector(self.params)
        if dtype != np.float64:
            model = model.astype(dtype)
        return model


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Versioned binary container: magic, version, byte-order marker,
    JSON config+meta, then the flat float64 parameter vector."""
    if ckpt.params.size != parameter_count(ckpt.config):
        raise ParameterError(
            f"checkpoint has {ckpt.params.size} parameters, "
            f"config requires {parameter_count(ckpt.config)}"
        )
    header = json.dumps({"config": ckpt.config.to_dict(), "meta": ckpt.meta}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, BYTE_ORDER_MARK))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", ckpt.params.size))
        fh.write(ckpt.params.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ParameterError(f"not a checkpoint file: bad magic {blob[:8]!r}")
    version, bom = struct.unpack_from("<HI", blob, 8)
    if bom == BYTE_ORDER_MARK:
        endian = "<"
    elif bom == int.from_bytes(struct.pack("<I", BYTE_ORDER_MARK), "big"):
        endian = ">"
        (version,) = struct.unpack_from(">H", blob, 8)
    else:
        raise ParameterError(f"bad byte-order marker 0x{bom:08x}")
    if version != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from(endian + "I", blob, 14)
    header = json.loads(blob[18 : 18 + hlen].decode())
    config = ModelConfig.from_dict(header["config"])
    (n,) = struct.unpack_from(endian + "Q", blob, 18 + hlen)
    expected = parameter_count(config)
    if n != expected:
        raise ParameterError(f"checkpoint declares {n} parameters, config requires {expected}")
    start = 18 + hlen + 8
    try:
        params = np.frombuffer(blob, dtype=endian + "f8", count=n, offset=start)
    except ValueError as exc:
        raise ParameterError(f"checkpoint truncated: {exc}") from exc
    return Checkpoint(config, params.astype(np.float64), header.get("meta", {}))
