"""The attention + dual-stream 3D-CNN classifier.

Pipeline per batch of [B, C, T] epochs: channel attention, montage grid
rearrangement to [B, 1, g, g, T], two parallel convolution streams over the
same grid (stream one: three convs with average pooling; stream two: five
convs with max pooling), concatenation of the equal-shaped stream outputs
along the spatial height axis, a fusion convolution block, then a single
dense layer producing one logit per class.

The full-size configuration reproduces a fixed 18-row chain of intermediate
shapes (see shape_chain); a reduced configuration with the same topology
exists for gradient checks and fast end-to-end tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import montage as montage_mod
from .attention import ChannelAttention
from .eegio import ModelCheckpoint
from .nncore import (AvgPool3d, BatchNorm, Conv3d, Dense, Dropout, Elu,
                     MaxPool3d, cross_entropy)
from .rng import RngStream

CLASS_COUNT = 4


@dataclass(frozen=True)
class AdsNetConfig:
    n_channels: int = 64
    n_samples: int = 1001
    grid_side: int = 8
    attn_dk: int = 64
    b1_channels: tuple = (10, 20, 30)
    b1_kernels: tuple = ((4, 4, 125), (3, 3, 16), (3, 3, 16))
    b1_pool: int = 4
    b1_dropout: float = 0.5
    b2_channels: tuple = (6, 12, 18, 24, 30)
    b2_kernels: tuple = ((3, 3, 62), (3, 3, 10), (2, 2, 10), (2, 2, 10), (2, 2, 10))
    b2_pool: int = 2
    b2_dropout: float = 0.25
    b3_channels: int = 60
    b3_kernel: tuple = (1, 2, 10)
    b3_pool: int = 2
    b3_dropout: float = 0.5
    n_classes: int = CLASS_COUNT
    batch_size: int = 40

    def __post_init__(self):
        if self.grid_side * self.grid_side != self.n_channels:
            raise ValueError("n_channels must equal grid_side**2")
        shape_chain(self)   # raises if any stage is inconsistent


def _conv_out(shape, out_ch, kernel, stage):
    f, d, h, w = shape
    kd, kh, kw = kernel
    if kd > d or kh > h or kw > w:
        raise ValueError(f"{stage}: kernel {kernel} larger than input {(d, h, w)}")
    return (out_ch, d - kd + 1, h - kh + 1, w - kw + 1)


def _pool_out(shape, k, stage):
    f, d, h, w = shape
    if k > w:
        raise ValueError(f"{stage}: pool {k} larger than axis {w}")
    return (f, d, h, (w - k) // k + 1)


def shape_chain(config: AdsNetConfig):
    """All intermediate output sizes as (stage, (F, D, H, W)), batch omitted."""
    g, t = config.grid_side, config.n_samples
    chain = [("reshape", (1, g, g, t))]
    shape = (1, g, g, t)
    for i, (ch, k) in enumerate(zip(config.b1_channels, config.b1_kernels), 1):
        shape = _conv_out(shape, ch, k, f"b1.conv{i}")
        chain.append((f"b1.conv{i}", shape))
        if i >= 2:
            shape = _pool_out(shape, config.b1_pool, f"b1.pool{i - 1}")
            chain.append((f"b1.pool{i - 1}", shape))
    s1 = shape
    shape = (1, g, g, t)
    for i, (ch, k) in enumerate(zip(config.b2_channels, config.b2_kernels), 1):
        shape = _conv_out(shape, ch, k, f"b2.conv{i}")
        chain.append((f"b2.conv{i}", shape))
        if i >= 2:
            shape = _pool_out(shape, config.b2_pool, f"b2.pool{i - 1}")
            chain.append((f"b2.pool{i - 1}", shape))
    s2 = shape
    if s1 != s2:
        raise ValueError(f"stream outputs differ: {s1} vs {s2}")
    shape = (s1[0], s1[1], s1[2] * 2, s1[3])
    chain.append(("concat", shape))
    shape = _conv_out(shape, config.b3_channels, config.b3_kernel, "b3.conv1")
    chain.append(("b3.conv1", shape))
    shape = _pool_out(shape, config.b3_pool, "b3.pool1")
    chain.append(("b3.pool1", shape))
    return chain


def flat_features(config: AdsNetConfig) -> int:
    f, d, h, w = shape_chain(config)[-1][1]
    return f * d * h * w


FULL_CONFIG = AdsNetConfig()

# Same topology at toy scale: 4x4 grid, 64-sample epochs. Small enough for
# finite-difference checks of the entire network and quick training runs.
# Dropout rates are scaled down with the capacity; the full-size rates
# cripple a ~10k-parameter net trained on 160 trials.
REDUCED_CONFIG = AdsNetConfig(
    n_channels=16, n_samples=64, grid_side=4, attn_dk=8,
    b1_channels=(4, 8, 12), b1_kernels=((2, 2, 9), (2, 2, 5), (2, 2, 4)),
    b1_dropout=0.2,
    b2_channels=(2, 4, 6, 8, 12),
    b2_kernels=((2, 2, 5), (1, 1, 3), (2, 2, 3), (1, 1, 3), (2, 2, 2)),
    b2_dropout=0.1,
    b3_channels=24, b3_kernel=(1, 2, 1), b3_dropout=0.2,
)


def param_count(config: AdsNetConfig) -> int:
    """Number of learnable scalars, straight from the configuration."""
    t = config.n_samples
    total = 2 * t * config.attn_dk + t * t
    in_ch = 1
    for ch, (kd, kh, kw) in zip(config.b1_channels, config.b1_kernels):
        total += ch * in_ch * kd * kh * kw + ch + 2 * ch
        in_ch = ch
    in_ch = 1
    for ch, (kd, kh, kw) in zip(config.b2_channels, config.b2_kernels):
        total += ch * in_ch * kd * kh * kw + ch + 2 * ch
        in_ch = ch
    kd, kh, kw = config.b3_kernel
    total += config.b3_channels * config.b2_channels[-1] * kd * kh * kw
    total += config.b3_channels + 2 * config.b3_channels
    total += flat_features(config) * config.n_classes + config.n_classes
    return total


def _uniform_init(stream: RngStream, shape, fan_in: int, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return ((stream.uniform(shape) * 2.0 - 1.0) * bound).astype(dtype)


class AdsNet:
    """Model instance: parameters, normalization state and wiring."""

    def __init__(self, config: AdsNetConfig, montage: montage_mod.MontageMap,
                 seed: int = 0, dtype=np.float64):
        if montage.n_channels != config.n_channels:
            raise ValueError("montage size does not match config channel count")
        self.config = config
        self.montage = montage
        self.dtype = dtype
        self.seed = seed
        self._build(RngStream(seed, 0xADF))

    def _build(self, init: RngStream):
        cfg = self.config
        t, dk = cfg.n_samples, cfg.attn_dk
        # The value projection starts at identity plus the usual uniform
        # noise: a purely random [T, T] mixing matrix erases channel
        # identity at init and measurably stalls training.
        self.attn = ChannelAttention(
            _uniform_init(init, (t, dk), t, self.dtype),
            _uniform_init(init, (t, dk), t, self.dtype),
            np.eye(t, dtype=self.dtype) + _uniform_init(init, (t, t), t, self.dtype),
        )

        def conv(name, in_ch, out_ch, kernel):
            kd, kh, kw = kernel
            fan_in = in_ch * kd * kh * kw
            w = _uniform_init(init, (out_ch, in_ch, kd, kh, kw), fan_in, self.dtype)
            return Conv3d(w, np.zeros(out_ch, dtype=self.dtype), name=name)

        self.b1 = []
        in_ch = 1
        for i, (ch, k) in enumerate(zip(cfg.b1_channels, cfg.b1_kernels), 1):
            steps = [conv(f"b1.conv{i}", in_ch, ch, k),
                     BatchNorm(ch, dtype=self.dtype, name=f"b1.bn{i}")]
            if i >= 2:
                steps.append(Elu(name=f"b1.elu{i}"))
                steps.append(AvgPool3d((1, 1, cfg.b1_pool), name=f"b1.pool{i - 1}"))
                steps.append(Dropout(cfg.b1_dropout, name=f"b1.drop{i - 1}"))
            self.b1.extend(steps)
            in_ch = ch
        self.b2 = []
        in_ch = 1
        for i, (ch, k) in enumerate(zip(cfg.b2_channels, cfg.b2_kernels), 1):
            steps = [conv(f"b2.conv{i}", in_ch, ch, k),
                     BatchNorm(ch, dtype=self.dtype, name=f"b2.bn{i}")]
            if i >= 2:
                steps.append(Elu(name=f"b2.elu{i}"))
                steps.append(MaxPool3d((1, 1, cfg.b2_pool), name=f"b2.pool{i - 1}"))
                steps.append(Dropout(cfg.b2_dropout, name=f"b2.drop{i - 1}"))
            self.b2.extend(steps)
            in_ch = ch
        self.b3 = [
            conv("b3.conv1", cfg.b2_channels[-1], cfg.b3_channels, cfg.b3_kernel),
            BatchNorm(cfg.b3_channels, dtype=self.dtype, name="b3.bn1"),
            Elu(name="b3.elu1"),
            AvgPool3d((1, 1, cfg.b3_pool), name="b3.pool1"),
            Dropout(cfg.b3_dropout, name="b3.drop1"),
        ]
        n_flat = flat_features(cfg)
        self.head = Dense(
            _uniform_init(init, (n_flat, cfg.n_classes), n_flat, self.dtype),
            np.zeros(cfg.n_classes, dtype=self.dtype),
            name="head",
        )
        self._layers = self.b1 + self.b2 + self.b3 + [self.head]

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> dict:
        out = {"attn.wq": self.attn.params.w_q,
               "attn.wk": self.attn.params.w_k,
               "attn.wv": self.attn.params.w_v}
        for layer in self._layers:
            for key, val in layer.params.items():
                out[f"{layer.name}.{key}"] = val
        return out

    def state_arrays(self) -> dict:
        """Parameters plus batchnorm running statistics."""
        out = self.parameters()
        for layer in self._layers:
            if isinstance(layer, BatchNorm):
                out[f"{layer.name}.rmean"] = layer.running_mean
                out[f"{layer.name}.rvar"] = layer.running_var
        return out

    def load_state(self, arrays: dict):
        state = self.state_arrays()
        missing = set(state) - set(arrays)
        if missing:
            raise KeyError(f"missing state entries: {sorted(missing)}")
        for name, target in state.items():
            src = np.asarray(arrays[name], dtype=self.dtype).reshape(target.shape)
            target[...] = src

    def to_checkpoint(self, metadata: dict | None = None) -> ModelCheckpoint:
        entries = [
            (name, arr.shape, np.ascontiguousarray(arr, dtype=np.float32).ravel())
            for name, arr in self.state_arrays().items()
        ]
        meta = {"seed": str(self.seed)}
        meta.update(metadata or {})
        return ModelCheckpoint(entries=entries, metadata=meta)

    def load_checkpoint(self, ckpt: ModelCheckpoint):
        self.load_state({name: vals.reshape(dims)
                         for name, dims, vals in ckpt.entries})

    # -- execution -------------------------------------------------------------

    def _run(self, steps, x, train, stream, trace):
        for layer in steps:
            if isinstance(layer, Dropout):
                x = layer.forward(x, train=train, stream=stream)
            else:
                x = layer.forward(x, train=train)
            if trace is not None:
                trace.append((layer.name, x.shape[1:]))
        return x

    def forward(self, batch: np.ndarray, channel_names=None, train: bool = False,
                stream: RngStream | None = None, trace: list | None = None) -> np.ndarray:
        """Batch [B, C, T] of epochs (montage channel order by default) -> logits."""
        cfg = self.config
        x = np.asarray(batch, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1] != cfg.n_channels or x.shape[2] != cfg.n_samples:
            raise ValueError(
                f"input: expected [B, {cfg.n_channels}, {cfg.n_samples}], got {x.shape}"
            )
        names = channel_names if channel_names is not None else self.montage.channel_names
        self._grid_idx = self.montage.grid_index(names)
        attended = self.attn.forward(x, cache=train)
        grid = attended[:, self._grid_idx, :]
        x = grid.reshape(x.shape[0], 1, cfg.grid_side, cfg.grid_side, cfg.n_samples)
        if trace is not None:
            trace.append(("attention", attended.shape[1:]))
            trace.append(("reshape", x.shape[1:]))
        y1 = self._run(self.b1, x, train, stream, trace)
        y2 = self._run(self.b2, x, train, stream, trace)
        fused = np.concatenate([y1, y2], axis=3)
        if trace is not None:
            trace.append(("concat", fused.shape[1:]))
        y3 = self._run(self.b3, fused, train, stream, trace)
        self._flat_shape = y3.shape
        logits = self.head.forward(y3.reshape(y3.shape[0], -1), train=train)
        if trace is not None:
            trace.append(("head", logits.shape[1:]))
        return logits

    def loss_and_grads(self, batch, labels, channel_names=None,
                       stream: RngStream | None = None):
        """Mean cross-entropy and gradients for every parameter."""
        logits = self.forward(batch, channel_names, train=True, stream=stream)
        loss, g = cross_entropy(logits, labels)
        g = self.head.backward(g).reshape(self._flat_shape)
        for layer in reversed(self.b3):
            g = layer.backward(g)
        h_half = g.shape[3] // 2
        g1, g2 = g[:, :, :, :h_half, :], g[:, :, :, h_half:, :]
        for layer in reversed(self.b1):
            g1 = layer.backward(g1)
        for layer in reversed(self.b2):
            g2 = layer.backward(g2)
        g_grid = (g1 + g2).reshape(g1.shape[0], self.config.n_channels,
                                   self.config.n_samples)
        g_att = np.empty_like(g_grid)
        g_att[:, self._grid_idx.ravel(), :] = g_grid
        self.attn.backward(g_att)
        grads = {"attn.wq": self.attn.grads["wq"],
                 "attn.wk": self.attn.grads["wk"],
                 "attn.wv": self.attn.grads["wv"]}
        for layer in self._layers:
            for key in layer.params:
                grads[f"{layer.name}.{key}"] = layer.grads[key]
        return loss, grads

    def predict(self, batch, channel_names=None) -> np.ndarray:
        """Eval-mode class indices; ties resolve to the lowest index."""
        return np.argmax(self.forward(batch, channel_names, train=False), axis=1)
