"""Minimal forward-only convnet inference.

Executes small feed-forward stacks (3x3 / 1x1 convolutions, 2x2 max
pooling, fully connected layers, batch norm, relu / sigmoid / channel
softmax, fixed bilinear upsampling) loaded from ``CRVW1`` weight files.
There is no training support: weights always come from files or from the
builder helpers below.

Weight file format (all integers little-endian):

    magic           5 bytes  "CRVW1"
    input shape     u8 flag; if 1: three u32 (channels, height, width)
    layer count     u32
    per layer:
        kind        u8   (see KIND_TAGS)
        emit name   u8 length + utf-8 bytes (0 = not a named output)
        takes name  u8 length + utf-8 bytes (0 = previous layer's output)
        saves name  u8 length + utf-8 bytes (0 = not stashed)
        ndims       u32, then ndims x u32 dimension values
        payload     float32 little-endian, size implied by kind + dims

Payload layouts: convolutions store ``out*in*k*k`` weights then ``out``
biases; fully connected layers store ``out*in`` weights then ``out``
biases; batch norm stores mean, variance, gamma, beta (``4*channels``).
The ``takes``/``saves``/``emit`` names let a file describe stacks with
side branches, e.g. per-encoder score heads that are reported as named
outputs while the main chain continues from the encoder features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imagecore
from .errors import FormatError, ShapeError

MAGIC = b"CRVW1"
BN_EPS = 1e-5

KIND_TAGS = {
    "conv3x3": 1,
    "conv1x1": 2,
    "relu": 3,
    "maxpool2": 4,
    "fc": 5,
    "batchnorm": 6,
    "sigmoid": 7,
    "softmax_channel": 8,
    "upsample_bilinear2": 9,
    "dropout": 10,
}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

_WEIGHTED = {"conv3x3", "conv1x1", "fc", "batchnorm"}


@dataclass(frozen=True)
class Layer:
    """One layer descriptor; weight arrays are float32, read-only."""

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stats: np.ndarray | None = None  # batchnorm: (4, channels) mean/var/gamma/beta
    emit: str | None = None
    takes: str | None = None
    saves: str | None = None

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        for name in ("weight", "bias", "stats"):
            arr = getattr(self, name)
            if arr is not None:
                a = np.array(arr, dtype=np.float32, copy=True)
                a.flags.writeable = False
                object.__setattr__(self, name, a)
        if self.kind in ("conv3x3", "conv1x1"):
            k = 3 if self.kind == "conv3x3" else 1
            if self.weight is None or self.weight.ndim != 4 or self.weight.shape[2:] != (k, k):
                raise ShapeError(f"{self.kind} weights must be (out, in, {k}, {k})")
            if self.bias is None or self.bias.shape != (self.weight.shape[0],):
                raise ShapeError(f"{self.kind} bias must match output channels")
        elif self.kind == "fc":
            if self.weight is None or self.weight.ndim != 2:
                raise ShapeError("fc weights must be (out, in)")
            if self.bias is None or self.bias.shape != (self.weight.shape[0],):
                raise ShapeError("fc bias must match output size")
        elif self.kind == "batchnorm":
            if self.stats is None or self.stats.ndim != 2 or self.stats.shape[0] != 4:
                raise ShapeError("batchnorm stats must be (4, channels)")


@dataclass(frozen=True)
class Network:
    """An immutable ordered layer stack, shareable across threads."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        _validate_chain(self)


def _validate_chain(net: Network) -> None:
    """Check channel compatibility along the chain (spatial dims too when
    the network declares its input shape)."""
    if net.input_shape is not None:
        shape: tuple | None = tuple(net.input_shape)
    else:
        shape = None
    stash: dict[str, tuple | None] = {}
    for idx, layer in enumerate(net.layers):
        if layer.takes is not None:
            if layer.takes not in stash:
                raise ShapeError(f"layer {idx} takes unknown stash {layer.takes!r}")
            shape = stash[layer.takes]
        shape = _propagate_shape(layer, shape, idx)
        if layer.saves is not None:
            stash[layer.saves] = shape


def _propagate_shape(layer: Layer, shape, idx: int):
    """Symbolic shape propagation; ``None`` entries mean unknown."""
    if shape is None:
        c = h = w = None
    else:
        c, h, w = shape
    kind = layer.kind
    if kind in ("conv3x3", "conv1x1"):
        out_c, in_c = layer.weight.shape[:2]
        if c is not None and c != in_c:
            raise ShapeError(f"layer {idx} ({kind}) expects {in_c} channels, gets {c}")
        return (out_c, h, w)
    if kind == "fc":
        out_n, in_n = layer.weight.shape
        if c is not None and h is not None and w is not None and c * h * w != in_n:
            raise ShapeError(f"layer {idx} (fc) expects {in_n} inputs, gets {c}x{h}x{w}")
        return (out_n, 1, 1)
    if kind == "maxpool2":
        return (c, None if h is None else h // 2, None if w is None else w // 2)
    if kind == "batchnorm":
        bn_c = layer.stats.shape[1]
        if c is not None and c != bn_c:
            raise ShapeError(f"layer {idx} (batchnorm) expects {bn_c} channels, gets {c}")
        return (bn_c, h, w)
    if kind == "upsample_bilinear2":
        return (c, None if h is None else 2 * h, None if w is None else 2 * w)
    return (c, h, w)


# ---------------------------------------------------------------------------
# Layer arithmetic
# ---------------------------------------------------------------------------


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, pad: int) -> np.ndarray:
    """Cross-correlation with zero padding; same spatial size for k=3, pad=1."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError("conv2d needs (c, h, w) input and (o, c, k, k) weights")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[0]}, weights {w.shape[1]}")
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError("input smaller than kernel")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    out = np.einsum("ocij,chwij->ohw", w, win, optimize=True)
    return out + np.asarray(bias, dtype=np.float64)[:, None, None]


def maxpool2(x: np.ndarray) -> np.ndarray:
    """Per-channel 2x2 stride-2 max; a trailing odd row/column is dropped."""
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError("maxpool2 needs at least 2x2 spatial extent")
    trimmed = x[:, : 2 * h2, : 2 * w2]
    return trimmed.reshape(c, h2, 2, w2, 2).max(axis=(2, 4))


def fully_connected(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map on the channel-major flattening of the input."""
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    w = np.asarray(weight, dtype=np.float64)
    if w.shape[1] != flat.size:
        raise ShapeError(f"fc expects {w.shape[1]} inputs, got {flat.size}")
    out = w @ flat + np.asarray(bias, dtype=np.float64)
    return out.reshape(-1, 1, 1)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_channel(x: np.ndarray) -> np.ndarray:
    """Softmax across channels at each pixel."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def batchnorm_inference(x: np.ndarray, stats: np.ndarray) -> np.ndarray:
    """Per-channel normalisation with stored statistics (eps = 1e-5)."""
    x = np.asarray(x, dtype=np.float64)
    mean, var, gamma, beta = (np.asarray(s, dtype=np.float64)[:, None, None] for s in stats)
    return gamma * (x - mean) / np.sqrt(var + BN_EPS) + beta


def _upsample_bilinear2(x: np.ndarray) -> np.ndarray:
    return np.stack([imagecore.bilinear_upsample(ch) for ch in x])


def _apply(layer: Layer, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "conv3x3":
        return conv2d(x, layer.weight, layer.bias, pad=1)
    if kind == "conv1x1":
        return conv2d(x, layer.weight, layer.bias, pad=0)
    if kind == "relu":
        return relu(x)
    if kind == "maxpool2":
        return maxpool2(x)
    if kind == "fc":
        return fully_connected(x, layer.weight, layer.bias)
    if kind == "batchnorm":
        if x.shape[0] != layer.stats.shape[1]:
            raise ShapeError("batchnorm channel mismatch")
        return batchnorm_inference(x, layer.stats)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_channel":
        return softmax_channel(x)
    if kind == "upsample_bilinear2":
        return _upsample_bilinear2(x)
    if kind == "dropout":
        return np.asarray(x, dtype=np.float64)  # identity at inference
    raise ShapeError(f"unknown layer kind {kind!r}")


def forward(net: Network, x: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Run the stack on a (channels, height, width) tensor.

    Returns the named outputs recorded by ``emit`` layers, in order,
    followed by the final chain output under the name ``"out"``.  All
    state lives in per-call locals, so one Network may serve concurrent
    forwards.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError("forward input must be (channels, height, width)")
    if not np.all(np.isfinite(x)):
        raise ShapeError("forward input must be finite")
    if net.input_shape is not None and tuple(x.shape) != tuple(net.input_shape):
        raise ShapeError(f"network declares input {net.input_shape}, got {x.shape}")
    current = x
    stash: dict[str, np.ndarray] = {}
    outputs: list[tuple[str, np.ndarray]] = []
    for layer in net.layers:
        src = stash[layer.takes] if layer.takes is not None else current
        current = _apply(layer, src)
        if layer.saves is not None:
            stash[layer.saves] = current
        if layer.emit is not None:
            outputs.append((layer.emit, current))
    outputs.append(("out", current))
    return outputs


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------


def _pack_name(name: str | None) -> bytes:
    if not name:
        return b"\x00"
    raw = name.encode("utf-8")
    if len(raw) > 255:
        raise ShapeError("layer names are limited to 255 bytes")
    return bytes([len(raw)]) + raw


def _layer_dims(layer: Layer) -> tuple[int, ...]:
    if layer.kind in ("conv3x3", "conv1x1", "fc"):
        return tuple(layer.weight.shape)
    if layer.kind == "batchnorm":
        return (layer.stats.shape[1],)
    return ()


def _payload_arrays(layer: Layer) -> list[np.ndarray]:
    if layer.kind in ("conv3x3", "conv1x1", "fc"):
        return [layer.weight, layer.bias]
    if layer.kind == "batchnorm":
        return [layer.stats]
    return []


def save_weights(net: Network, path) -> None:
    """Serialise a Network to the CRVW1 byte format."""
    chunks = [MAGIC]
    if net.input_shape is None:
        chunks.append(b"\x00")
    else:
        chunks.append(b"\x01" + struct.pack("<3I", *net.input_shape))
    chunks.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        chunks.append(bytes([KIND_TAGS[layer.kind]]))
        chunks.append(_pack_name(layer.emit))
        chunks.append(_pack_name(layer.takes))
        chunks.append(_pack_name(layer.saves))
        dims = _layer_dims(layer)
        chunks.append(struct.pack("<I", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        for arr in _payload_arrays(layer):
            chunks.append(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ShapeError(f"{self.path}: file ends {self.pos + n - len(self.raw)} bytes short")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def name(self) -> str | None:
        n = self.u8()
        return self.take(n).decode("utf-8") if n else None

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def load_weights(path) -> Network:
    """Load a CRVW1 weight file; validates magic, dims and payload sizes."""
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:5]!r}, expected {MAGIC!r}")
    r = _Reader(raw, path)
    r.pos = 5
    input_shape = None
    if r.u8():
        input_shape = struct.unpack("<3I", r.take(12))
    count = r.u32()
    layers = []
    for _ in range(count):
        tag = r.u8()
        if tag not in TAG_KINDS:
            raise FormatError(f"{path}: unknown layer tag {tag}")
        kind = TAG_KINDS[tag]
        emit = r.name()
        takes = r.name()
        saves = r.name()
        ndims = r.u32()
        dims = tuple(r.u32() for _ in range(ndims))
        kwargs: dict = {}
        if kind in ("conv3x3", "conv1x1"):
            if len(dims) != 4:
                raise ShapeError(f"{path}: {kind} needs 4 dims, got {dims}")
            k = 3 if kind == "conv3x3" else 1
            if dims[2:] != (k, k):
                raise ShapeError(f"{path}: {kind} kernel dims {dims[2:]} invalid")
            n = dims[0] * dims[1] * dims[2] * dims[3]
            kwargs["weight"] = r.floats(n).reshape(dims)
            kwargs["bias"] = r.floats(dims[0])
        elif kind == "fc":
            if len(dims) != 2:
                raise ShapeError(f"{path}: fc needs 2 dims, got {dims}")
            kwargs["weight"] = r.floats(dims[0] * dims[1]).reshape(dims)
            kwargs["bias"] = r.floats(dims[0])
        elif kind == "batchnorm":
            if len(dims) != 1:
                raise ShapeError(f"{path}: batchnorm needs 1 dim, got {dims}")
            kwargs["stats"] = r.floats(4 * dims[0]).reshape(4, dims[0])
        elif dims:
            raise ShapeError(f"{path}: {kind} takes no dims, got {dims}")
        layers.append(Layer(kind=kind, emit=emit, takes=takes, saves=saves, **kwargs))
    return Network(layers=tuple(layers), input_shape=input_shape)


# ---------------------------------------------------------------------------
# Reference topologies
# ---------------------------------------------------------------------------


def build_patch_classifier(rng: np.random.Generator | None = None, scale: float = 0.05) -> Network:
    """45x45 single-channel patch classifier: three conv/pool/batch-norm
    blocks (32, 64, 128 maps) into two fully connected layers and a
    sigmoid pair.  Channel 0 of the output is read as the curve
    probability.  Weights are random (or zero when ``rng`` is None);
    training is out of scope, so real weights arrive via files.
    """

    def w(*shape):
        if rng is None:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    def bn(c):
        stats = np.zeros((4, c), dtype=np.float32)
        stats[1] = 1.0  # unit variance
        stats[2] = 1.0  # unit gain
        return stats

    layers = [
        Layer("conv3x3", weight=w(32, 1, 3, 3), bias=w(32)),
        Layer("maxpool2"),
        Layer("batchnorm", stats=bn(32)),
        Layer("conv3x3", weight=w(64, 32, 3, 3), bias=w(64)),
        Layer("maxpool2"),
        Layer("batchnorm", stats=bn(64)),
        Layer("conv3x3", weight=w(128, 64, 3, 3), bias=w(128)),
        Layer("maxpool2"),
        Layer("fc", weight=w(512, 128 * 5 * 5), bias=w(512)),
        Layer("dropout"),
        Layer("fc", weight=w(2, 512), bias=w(2)),
        Layer("sigmoid"),
    ]
    return Network(layers=tuple(layers), input_shape=(1, 45, 45))


def build_skeleton_fcn(
    rng: np.random.Generator | None = None,
    widths: tuple[int, int, int] = (8, 16, 32),
    scale: float = 0.05,
) -> Network:
    """Three-encoder fully convolutional stack over a one-channel raster.

    Encoders 1 and 2 are conv-relu-conv-relu-pool; encoder 3 adds a third
    conv.  A 1x1 convolution after each encoder emits a two-channel score
    map (names ``S1``, ``S2``, ``S3``) at 1/2, 1/4 and 1/8 resolution while
    the main chain continues from the encoder features.
    """

    def w(*shape):
        if rng is None:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    def encoder(in_c, out_c, convs, takes, save):
        layers = []
        c = in_c
        for i in range(convs):
            layers.append(Layer("conv3x3", weight=w(out_c, c, 3, 3), bias=w(out_c),
                                takes=takes if i == 0 else None))
            layers.append(Layer("relu"))
            c = out_c
        layers.append(Layer("maxpool2", saves=save))
        return layers

    c1, c2, c3 = widths
    layers = []
    layers += encoder(1, c1, 2, None, "enc1")
    layers.append(Layer("conv1x1", weight=w(2, c1, 1, 1), bias=w(2), emit="S1"))
    layers += encoder(c1, c2, 2, "enc1", "enc2")
    layers.append(Layer("conv1x1", weight=w(2, c2, 1, 1), bias=w(2), emit="S2"))
    layers += encoder(c2, c3, 3, "enc2", "enc3")
    layers.append(Layer("conv1x1", weight=w(2, c3, 1, 1), bias=w(2), emit="S3"))
    return Network(layers=tuple(layers))
