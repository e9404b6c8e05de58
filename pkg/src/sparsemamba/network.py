"""Encoder-decoder segmentation network built on sparse selective scans.

The encoder interleaves residual blocks with two-branch gated mixer blocks
whose sequence path runs skip-sampled directional S6 scans; the bottleneck
applies additive position/channel attention; the decoder upsamples with
transposed convolutions and U-style skip concatenation, ending in a softmax
head over classes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .s6 import S6Params, s6_forward_grouped
from .scans import gather_seq, scatter_seq, sparse_orders, ss2d_orders
from .tensor import Tensor

CHECKPOINT_MAGIC = "SMCK0001"


class Module:
    """Minimal parameter container with automatic child registration."""

    def __setattr__(self, name, value):
        registry = self.__dict__.setdefault("_registry", {})
        if isinstance(value, (Module, S6Params, Tensor)):
            registry[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            registry[name] = list(value)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, value in self.__dict__.get("_registry", {}).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, list):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{path}.{i}.")
            else:
                yield from value.named_parameters(f"{path}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def constrain(self):
        for value in self.__dict__.get("_registry", {}).values():
            if isinstance(value, list):
                for child in value:
                    child.constrain()
            elif not isinstance(value, Tensor):
                value.constrain()


def _conv_weight(rng, c_out, c_in, kh, kw, dtype):
    std = np.sqrt(2.0 / (c_in * kh * kw))
    return rng.normal(0.0, std, (c_out, c_in, kh, kw)).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_conv_weight(rng, c_out, c_in, kernel, kernel, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=2, dtype=np.float32):
        self.stride = stride
        std = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = Tensor(rng.normal(0.0, std, (c_in, c_out, kernel, kernel)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, transposed=True)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, padding=0, dtype=np.float32):
        self.padding = padding
        std = np.sqrt(2.0 / (c_in * kernel))
        self.weight = Tensor(rng.normal(0.0, std, (c_out, c_in, kernel)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, padding=self.padding)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        std = np.sqrt(1.0 / d_in)
        self.weight = Tensor(rng.normal(0.0, std, (d_in, d_out)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        return T.add(out, T.broadcast_to(self.bias, out.shape))


class ResidualBlock(Module):
    def __init__(self, channels, rng, dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, padding=1, dtype=dtype)

    def __call__(self, x):
        y = T.silu(self.conv1(x))
        y = self.conv2(y)
        return T.silu(T.add(y, x))


class SparseMambaBlock(Module):
    """Two-branch gated mixer over flattened spatial sequences.

    Input (C, H, W) runs through two residual blocks, is flattened to
    (L, C), doubled to (L, 2C) in both branches, and merged by a Hadamard
    product: branch one is linear + SiLU gating; branch two is linear,
    sequence 1-D convolution, SiLU, then directional S6 scans over either
    skip-sampled groups (each patch scanned once) or all four dense
    traversals (scatter-add averaged by 4). The projected merge is added
    back onto the residual-block features, keeping activation scale stable
    through depth (a multiplicative merge alone decays geometrically).
    """

    def __init__(self, channels, state_size, rng, skip_step=2, use_sparse=True, dtype=np.float32):
        self.channels = channels
        self.skip_step = skip_step
        self.use_sparse = use_sparse
        inner = 2 * channels
        self.res1 = ResidualBlock(channels, rng, dtype)
        self.res2 = ResidualBlock(channels, rng, dtype)
        self.gate_proj = Linear(channels, inner, rng, dtype)
        self.seq_proj = Linear(channels, inner, rng, dtype)
        self.seq_conv = Conv1d(inner, inner, 3, rng, padding=1, dtype=dtype)
        self.ssm = S6Params.create(inner, state_size, rng, dtype=dtype)
        self.out_proj = Linear(inner, channels, rng, dtype)
        self._order_cache = {}

    def _orders(self, h, w):
        key = (h, w, self.use_sparse)
        if key not in self._order_cache:
            self._order_cache[key] = (sparse_orders(h, w, self.skip_step) if self.use_sparse
                                      else ss2d_orders(h, w))
        return self._order_cache[key]

    def _scan2d(self, seq, h, w):
        inner = seq.shape[1]
        grid = T.reshape(T.transpose(seq, (1, 0)), (inner, h, w))
        orders = self._orders(h, w)
        lengths = {len(o) for o in orders}
        if len(lengths) == 1:
            stacked = T.stack([gather_seq(grid, o) for o in orders], axis=0)
            scanned = s6_forward_grouped(stacked, self.ssm)
            parts = [T.slice_axis0(scanned, i) for i in range(len(orders))]
        else:  # unequal group sizes (odd extents): scan lanes one by one
            parts = [s6_forward_grouped(T.stack([gather_seq(grid, o)], axis=0), self.ssm)
                     for o in orders]
            parts = [T.slice_axis0(p, 0) for p in parts]
        out = None
        for order, part in zip(orders, parts):
            piece = scatter_seq(part, order, h, w)
            out = piece if out is None else T.add(out, piece)
        if not self.use_sparse:
            out = out / len(orders)
        return T.transpose(T.reshape(out, (inner, h * w)), (1, 0))

    def __call__(self, x):
        c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"block built for {self.channels} channels, got {c}")
        x = self.res2(self.res1(x))
        seq = T.transpose(T.reshape(x, (c, h * w)), (1, 0))
        gate = T.silu(self.gate_proj(seq))
        mix = self.seq_proj(seq)
        mix = T.transpose(T.conv1d(T.transpose(mix, (1, 0)), self.seq_conv.weight,
                                   self.seq_conv.bias, padding=1), (1, 0))
        mix = T.silu(mix)
        mix = self._scan2d(mix, h, w)
        merged = T.mul(gate, mix)
        out = self.out_proj(merged)
        return T.add(x, T.reshape(T.transpose(out, (1, 0)), (c, h, w)))


class DualAttention(Module):
    """Additive position and channel attention with zero-initialised gates.

    Position branch: 1x1-projected queries/keys form an (HW, HW) affinity,
    softmax-normalised per row, reweighting 1x1-projected values. Channel
    branch: the (C, C) Gram matrix of flattened features, softmax-normalised
    per row, reweights channels. Output = x + gp * pos + gc * chan; both
    gains start at zero, so the module is initially the identity.
    """

    def __init__(self, channels, rng, dtype=np.float32):
        qk = max(1, channels // 8)
        self.query = Conv2d(channels, qk, 1, rng, dtype=dtype)
        self.key = Conv2d(channels, qk, 1, rng, dtype=dtype)
        self.value = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.gain_pos = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self.gain_chan = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def attention_maps(self, x):
        """(HW, HW) and (C, C) row-stochastic affinities, for inspection."""
        c, h, w = x.shape
        q = T.reshape(self.query(x), (self.query.weight.shape[0], h * w))
        k = T.reshape(self.key(x), (self.key.weight.shape[0], h * w))
        pos_attn = T.softmax(T.matmul(T.transpose(q, (1, 0)), k), axis=1)
        flat = T.reshape(x, (c, h * w))
        chan_attn = T.softmax(T.matmul(flat, T.transpose(flat, (1, 0))), axis=1)
        return pos_attn, chan_attn

    def __call__(self, x):
        c, h, w = x.shape
        pos_attn, chan_attn = self.attention_maps(x)
        v = T.reshape(self.value(x), (c, h * w))
        pos = T.reshape(T.matmul(v, T.transpose(pos_attn, (1, 0))), (c, h, w))
        flat = T.reshape(x, (c, h * w))
        chan = T.reshape(T.matmul(chan_attn, flat), (c, h, w))
        return T.add(x, T.add(T.mul(pos, self.gain_pos), T.mul(chan, self.gain_chan)))


@dataclass
class NetworkConfig:
    """Shape and capacity settings for :class:`SparseMambaNet`."""

    num_classes: int = 2
    widths: tuple = (16, 32, 64)
    input_size: tuple = (32, 32)
    state_size: int = 8
    skip_step: int = 2
    use_sparse: bool = True
    dtype: object = field(default=np.float32)

    @property
    def downsample_factor(self):
        return 2 ** (len(self.widths) - 1)

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        h, w = self.input_size
        f = self.downsample_factor
        if h % f or w % f:
            raise ValueError(f"input size {self.input_size} not divisible by downsampling factor {f}")
        if self.skip_step < 1:
            raise ValueError("skip step must be >= 1")
        return self


class SparseMambaNet(Module):
    """Encoder-decoder with mixer blocks, attention bottleneck, softmax head."""

    def __init__(self, config, rng=None):
        config.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        widths = config.widths
        dt = config.dtype
        self.stem = Conv2d(1, widths[0], 3, rng, padding=1, dtype=dt)
        self.enc_blocks = [SparseMambaBlock(c, config.state_size, rng, config.skip_step,
                                            config.use_sparse, dt) for c in widths]
        self.down = [Conv2d(widths[i], widths[i + 1], 3, rng, stride=2, padding=1, dtype=dt)
                     for i in range(len(widths) - 1)]
        self.attention = DualAttention(widths[-1], rng, dt)
        self.up = [ConvTranspose2d(widths[i + 1], widths[i], 2, rng, stride=2, dtype=dt)
                   for i in reversed(range(len(widths) - 1))]
        self.fuse = [Conv2d(2 * widths[i], widths[i], 1, rng, dtype=dt)
                     for i in reversed(range(len(widths) - 1))]
        self.dec_blocks = [ResidualBlock(widths[i], rng, dt)
                           for i in reversed(range(len(widths) - 1))]
        self.head = Conv2d(widths[0], config.num_classes, 1, rng, dtype=dt)

    def forward_with_features(self, image):
        """Run the full network; returns (class probabilities, encoder embedding).

        ``image`` is a (1, H, W) tensor normalised to [0, 1]; the embedding is
        the attention-refined bottleneck feature map.
        """
        if image.data.ndim != 3 or image.shape[0] != 1:
            raise ValueError(f"expected a (1, H, W) image tensor, got {image.shape}")
        h, w = image.shape[1:]
        f = self.config.downsample_factor
        if h % f or w % f:
            raise ValueError(f"input {h}x{w} not divisible by downsampling factor {f}")
        x = T.silu(self.stem(image))
        skips = []
        for i, block in enumerate(self.enc_blocks):
            x = block(x)
            if i < len(self.down):
                skips.append(x)
                x = T.silu(self.down[i](x))
        embedding = self.attention(x)
        x = embedding
        for up, fuse, dec, skip in zip(self.up, self.fuse, self.dec_blocks, reversed(skips)):
            x = T.silu(up(x))
            x = T.silu(fuse(T.concat([x, skip], axis=0)))
            x = dec(x)
        probs = T.softmax(self.head(x), axis=0)
        return probs, embedding

    def __call__(self, image):
        return self.forward_with_features(image)[0]

    def predict_labels(self, image):
        """Hard argmax labels as a numpy (H, W) int array (no grad)."""
        with T.no_grad():
            probs = self(image if isinstance(image, Tensor) else Tensor(image[None]))
        return probs.data.argmax(axis=0).astype(np.uint8)


# -- checkpoint serialisation --------------------------------------------------


def save_checkpoint(path, module, meta=None):
    """Write parameters as a flat binary blob with a text manifest header."""
    entries = []
    blobs = []
    offset = 0
    for name, p in module.named_parameters():
        arr = np.ascontiguousarray(p.data)
        entries.append((name, arr.dtype.name, ",".join(map(str, arr.shape)), offset, arr.size))
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    lines = [CHECKPOINT_MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for name, dtype, shape, off, count in entries:
        lines.append(f"tensor {name} {dtype} {shape} {off} {count}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (meta dict, name -> array dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.index(b"\n")
    if raw[:newline].decode() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = newline + 1
    meta = {}
    entries = []
    while True:
        nl = raw.index(b"\n", pos)
        line = raw[pos:nl].decode()
        pos = nl + 1
        if line == "end":
            break
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "tensor":
            name, dtype, shape, off, count = rest.rsplit(" ", 4)
            shape = tuple(int(s) for s in shape.split(",")) if shape else ()
            entries.append((name, dtype, shape, int(off), int(count)))
        else:
            raise ValueError(f"{path}: unknown manifest entry {kind!r}")
    params = {}
    for name, dtype, shape, off, count in entries:
        dt = np.dtype(dtype)
        start = pos + off
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=start).reshape(shape)
        params[name] = arr.copy()
    return meta, params


def load_into_module(module, params):
    """Copy named arrays into a module's parameters (strict name/shape match)."""
    own = dict(module.named_parameters())
    missing = set(own) - set(params)
    extra = set(params) - set(own)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, arr in params.items():
        target = own[name]
        if target.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}: {target.shape} vs {arr.shape}")
        target.data[...] = arr.astype(target.dtype)


def assert_probability_map(probs, tol=1e-5):
    """Validate the per-pixel simplex property of a (K, H, W) probability map."""
    data = probs.data if isinstance(probs, Tensor) else probs
    if data.min() < -tol or data.max() > 1 + tol:
        raise AssertionError("probabilities outside [0, 1]")
    sums = data.sum(axis=0)
    if np.abs(sums - 1).max() > tol:
        raise AssertionError(f"per-pixel sums deviate from 1 by {np.abs(sums - 1).max():.2e}")
