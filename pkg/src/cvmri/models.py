"""Model builders: the dense U-net generator with residual-in-residual dense
blocks operating on complex images, the real-valued patch discriminator, and
the ".cvck" checkpoint container.

Parameters live in flat dicts keyed "layer.path.name" so the optimizer,
weight clipping, checkpointing and gradient bookkeeping all operate on plain
numpy arrays. Batch-norm running statistics live in separate state dicts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as L
from .activations import Activation
from .errors import DimensionError, FormatError


@dataclass
class GeneratorConfig:
    depth: int = 3            # stride-2 steps down (and up)
    channels: int = 8         # feature maps per layer
    reach: int = 3            # dense connections resize by at most 2**reach
    n_rrdb: int = 1
    dense_blocks: int = 3     # dense blocks per residual group
    block_convs: int = 4      # conv units per dense block, last one fuses
    alpha: float = 0.2        # residual scaling
    activation: str = "pcss"
    kernel: int = 3


@dataclass
class DiscriminatorConfig:
    layers: int = 5           # conv layers including the 1-channel patch head
    channels: int = 8         # width of the first layer, doubling while striding
    slope: float = 0.2
    kernel: int = 3


def _sub(params: dict, prefix: str) -> dict:
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


class DenseBlock:
    """Densely connected conv units; the last unit fuses back to `channels`
    with no activation. The block's own output is the fusion result (the
    caller adds the scaled residual)."""

    def __init__(self, channels: int, convs: int, activation: str, kernel: int):
        self.channels = channels
        self.convs = convs
        self.units = []
        for t in range(1, convs):
            conv = L.ComplexConv2D(channels * t, channels, kernel)
            self.units.append((f"conv{t}", conv, Activation(activation, channels)))
        self.fuse = L.ComplexConv2D(channels * convs, channels, kernel)

    def init_params(self, rng, dtype):
        rdt = np.float32 if dtype == np.complex64 else np.float64
        out = {}
        for name, conv, act in self.units:
            for k, v in conv.init_params(rng, dtype).items():
                out[f"{name}.{k}"] = v
            for k, v in act.init_params(rdt).items():
                out[f"{name}.act.{k}"] = v
        for k, v in self.fuse.init_params(rng, dtype).items():
            out[f"fuse.{k}"] = v
        return out

    def apply(self, params, x):
        feats = [x]
        for name, conv, act in self.units:
            xin = ad.concat(feats, axis=1) if len(feats) > 1 else feats[0]
            y = conv.apply(_sub(params, name), xin)
            feats.append(act.apply(_sub(params, f"{name}.act"), y))
        return self.fuse.apply(_sub(params, "fuse"), ad.concat(feats, axis=1))


class RRDB:
    """Residual group: dense blocks with block-level residual scaling, plus a
    group-level scaled residual. All conv weights zero gives the identity."""

    def __init__(self, channels: int, dense_blocks: int, block_convs: int,
                 alpha: float, activation: str, kernel: int):
        self.alpha = alpha
        self.blocks = [(f"db{d}", DenseBlock(channels, block_convs, activation, kernel))
                       for d in range(1, dense_blocks + 1)]

    def init_params(self, rng, dtype):
        out = {}
        for name, block in self.blocks:
            for k, v in block.init_params(rng, dtype).items():
                out[f"{name}.{k}"] = v
        return out

    def apply(self, params, x):
        inner = x
        for name, block in self.blocks:
            residual = block.apply(_sub(params, name), inner)
            inner = ad.add(inner, ad.mul(self.alpha, residual))
        return ad.add(x, ad.mul(self.alpha, ad.sub(inner, x)))


def rrdb_forward(x, params, block: RRDB):
    return block.apply(params, x)


class Generator:
    """Contracting/expanding complex U-net with dense concatenation links.

    Each contracting step is stride-2 conv -> complex batch norm -> activation;
    dense inputs from earlier steps arrive average-pooled. The expanding path
    mirrors it with bilinear x2 upsampling, equal-size skip concatenation and
    upsampled dense links. The bottleneck stacks the residual groups, and the
    head is a 1-channel conv under a split tanh.
    """

    def __init__(self, cfg: GeneratorConfig):
        self.cfg = cfg
        c, k = cfg.channels, cfg.kernel
        self.enc = []
        # level 0 is the input image (1 channel) at full resolution
        ch_at = {0: 1}
        for i in range(1, cfg.depth + 1):
            sources = list(range(i - 1, max(0, i - 1 - cfg.reach) - 1, -1))
            in_ch = sum(ch_at[j] for j in sources)
            self.enc.append({
                "name": f"enc{i}", "sources": sources,
                "conv": L.ComplexConv2D(in_ch, c, k, stride=2),
                "bn": L.ComplexBatchNorm(c),
                "act": Activation(cfg.activation, c),
            })
            ch_at[i] = c
        self.rrdbs = [(f"rrdb{r}", RRDB(c, cfg.dense_blocks, cfg.block_convs,
                                        cfg.alpha, cfg.activation, k))
                      for r in range(1, cfg.n_rrdb + 1)]
        self.dec = []
        for i in range(1, cfg.depth + 1):
            dense = list(range(i - 2, max(0, i - cfg.reach) - 1, -1))
            skip_ch = ch_at[cfg.depth - i]
            in_ch = c + skip_ch + c * len(dense)
            self.dec.append({
                "name": f"dec{i}", "dense": dense, "skip": cfg.depth - i,
                "conv": L.ComplexConv2D(in_ch, c, k, stride=1),
                "bn": L.ComplexBatchNorm(c),
                "act": Activation(cfg.activation, c),
            })
        self.head = L.ComplexConv2D(c, 1, k, stride=1)

    def init_params(self, rng, dtype=np.complex64):
        rdt = np.float32 if dtype == np.complex64 else np.float64
        out = {}
        for step in self.enc + self.dec:
            name = step["name"]
            for k, v in step["conv"].init_params(rng, dtype).items():
                out[f"{name}.conv.{k}"] = v
            for k, v in step["bn"].init_params(rng, dtype).items():
                out[f"{name}.bn.{k}"] = v
            for k, v in step["act"].init_params(rdt).items():
                out[f"{name}.act.{k}"] = v
        for name, block in self.rrdbs:
            for k, v in block.init_params(rng, dtype).items():
                out[f"{name}.{k}"] = v
        for k, v in self.head.init_params(rng, dtype).items():
            out[f"head.{k}"] = v
        return out

    def init_state(self, dtype=np.complex64):
        return {step["name"]: step["bn"].init_state(dtype)
                for step in self.enc + self.dec}

    def apply(self, params, state, x, train=False, update_state=False):
        size = ad.value_of(x).shape[-1]
        if size % (1 << self.cfg.depth):
            raise DimensionError(
                f"input size {size} not divisible by 2^{self.cfg.depth}")
        feats = {0: x}
        for i, step in enumerate(self.enc, start=1):
            parts = []
            for j in step["sources"]:
                src = feats[j]
                factor = 1 << (i - 1 - j)
                parts.append(ad.avg_pool2(src, factor) if factor > 1 else src)
            xin = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
            y = step["conv"].apply(_sub(params, f"{step['name']}.conv"), xin)
            y = step["bn"].apply(_sub(params, f"{step['name']}.bn"),
                                 state[step["name"]], y, train, update_state)
            feats[i] = step["act"].apply(_sub(params, f"{step['name']}.act"), y)
        ups = {0: feats[self.cfg.depth]}
        for name, block in self.rrdbs:
            ups[0] = block.apply(_sub(params, name), ups[0])
        for i, step in enumerate(self.dec, start=1):
            parts = [ad.upsample_bilinear(ups[i - 1], 2), feats[step["skip"]]]
            for j in step["dense"]:
                parts.append(ad.upsample_bilinear(ups[j], 1 << (i - j)))
            xin = ad.concat(parts, axis=1)
            y = step["conv"].apply(_sub(params, f"{step['name']}.conv"), xin)
            y = step["bn"].apply(_sub(params, f"{step['name']}.bn"),
                                 state[step["name"]], y, train, update_state)
            ups[i] = step["act"].apply(_sub(params, f"{step['name']}.act"), y)
        return L.tanh_out(self.head.apply(_sub(params, "head"), ups[self.cfg.depth]))


class Discriminator:
    """Real-valued conv stack scoring local patches; the output is the mean
    patch score, so any input size the strides accept works."""

    def __init__(self, cfg: DiscriminatorConfig):
        self.cfg = cfg
        self.stack = []
        in_ch = 1
        for i in range(1, cfg.layers):
            out_ch = cfg.channels * (1 << min(i - 1, 2))
            stride = 2 if i <= 3 else 1
            self.stack.append({
                "name": f"conv{i}",
                "conv": L.RealConv2D(in_ch, out_ch, cfg.kernel, stride=stride),
                "bn": L.RealBatchNorm(out_ch),
            })
            in_ch = out_ch
        self.head = L.RealConv2D(in_ch, 1, cfg.kernel, stride=1)

    def init_params(self, rng, dtype=np.float32):
        out = {}
        for step in self.stack:
            for k, v in step["conv"].init_params(rng, dtype).items():
                out[f"{step['name']}.{k}"] = v
            for k, v in step["bn"].init_params(rng, dtype).items():
                out[f"{step['name']}.bn.{k}"] = v
        for k, v in self.head.init_params(rng, dtype).items():
            out[f"head.{k}"] = v
        return out

    def init_state(self, dtype=np.float32):
        return {step["name"]: step["bn"].init_state(dtype) for step in self.stack}

    def apply(self, params, state, x, train=False, update_state=False):
        y = x
        for step in self.stack:
            y = step["conv"].apply(_sub(params, step["name"]), y)
            y = step["bn"].apply(_sub(params, f"{step['name']}.bn"),
                                 state[step["name"]], y, train, update_state)
            y = L.leaky_relu(y, self.cfg.slope)
        patch_map = self.head.apply(_sub(params, "head"), y)
        return ad.mean(patch_map, axis=(1, 2, 3))  # per-image mean patch score


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def build_discriminator(cfg: DiscriminatorConfig) -> Discriminator:
    return Discriminator(cfg)


def param_count(params: dict) -> int:
    """Trainable scalar count; complex entries count their two components."""
    return sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in params.values())


# ---------------------------------------------------------------------------
# checkpoint container: magic "CVCK", u16 version, length-prefixed UTF-8
# key=value config block, then named tensor records.

CVCK_MAGIC = b"CVCK"
CVCK_VERSION = 1
_DTYPE_CODES = {0: "<f4", 1: "<c8", 2: "<f8", 3: "<c16"}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.complex64): 1,
            np.dtype(np.float64): 2, np.dtype(np.complex128): 3}


def _flatten_states(states: dict) -> dict:
    return {f"{layer}.{key}": value
            for layer, sub in states.items() for key, value in sub.items()}


def _nest_states(flat: dict) -> dict:
    out: dict = {}
    for name, value in flat.items():
        layer, key = name.rsplit(".", 1)
        out.setdefault(layer, {})[key] = value
    return out


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """config: str->str pairs; tensors: name->array (any of f32/c64/f64/c128)."""
    blob = "\n".join(f"{k}={v}" for k, v in config.items()).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CVCK_MAGIC)
        f.write(struct.pack("<H", CVCK_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            code = _CODE_OF[arr.dtype]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(_DTYPE_CODES[code]).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CVCK_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {data[:4]!r}")
    version, = struct.unpack_from("<H", data, 4)
    if version != CVCK_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    blob_len, = struct.unpack_from("<I", data, 6)
    offset = 10
    config = {}
    for line in data[offset:offset + blob_len].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    offset += blob_len
    count, = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = {}
    for _ in range(count):
        name_len, = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", data, offset)
        offset += 2
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        dt = np.dtype(_DTYPE_CODES[code])
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(data, dtype=dt, count=size, offset=offset)
        offset += size * dt.itemsize
        tensors[name] = arr.reshape(dims).copy()
    return config, tensors
