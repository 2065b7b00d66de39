"""Neural network layers over the autodiff tensor core.

Activations are channels-first float64 arrays shaped (C, N, H, W), where N
flattens (frame, batch). Layer shape declarations (LayerSpec) use the
(C, H, W, T) convention of the architecture tables and are resolvable without
running data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, check_finite, concat, stack


class LayerKind(enum.Enum):
    CONV2D = "conv2d"
    BATCH_NORM = "batch_norm"
    AVG_POOL = "avg_pool"
    CONV_LSTM = "conv_lstm"
    FULLY_CONNECTED = "fully_connected"


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer; output shapes derive from input shapes."""

    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    hidden_channels: int = 0     # ConvLSTM only
    in_features: int = 0         # FC only
    units: int = 0               # FC only

    def output_shape(self, input_shape):
        """Map a (C, H, W, T) input shape (or (D,) for FC) to the output shape."""
        if self.kind is LayerKind.FULLY_CONNECTED:
            (d,) = input_shape
            if d != self.in_features:
                raise ValueError(f"fc expects {self.in_features} inputs, got {d}")
            return (self.units,)
        c, h, w, t = input_shape
        if self.kind is LayerKind.CONV2D:
            if c != self.in_channels:
                raise ValueError(f"conv expects {self.in_channels} channels, got {c}")
            return (self.out_channels, h, w, t)
        if self.kind is LayerKind.BATCH_NORM:
            return (c, h, w, t)
        if self.kind is LayerKind.AVG_POOL:
            if h % 2 or w % 2:
                raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
            return (c, h // 2, w // 2, t)
        if self.kind is LayerKind.CONV_LSTM:
            if c != self.in_channels:
                raise ValueError(f"conv_lstm expects {self.in_channels} channels, got {c}")
            return (self.hidden_channels, h, w, t)
        raise ValueError(f"unknown layer kind {self.kind}")


@dataclass(frozen=True)
class OpCounts:
    """Additions, multiplications and parameter counts for one forward inference."""

    n_add: int = 0
    n_mult: int = 0
    n_weights: int = 0
    n_biases: int = 0

    @property
    def n_param(self) -> int:
        return self.n_weights + self.n_biases

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.n_add + other.n_add,
                        self.n_mult + other.n_mult,
                        self.n_weights + other.n_weights,
                        self.n_biases + other.n_biases)


def count_layer_ops(spec: LayerSpec, input_shape) -> OpCounts:
    """Op/parameter counts of one layer's forward inference on ``input_shape``.

    Conventions: a convolution output element costs C_in*k^2 multiplications
    and the same number of additions (C_in*k^2 - 1 accumulations plus the bias
    add); an FC unit costs dim_in of each; ConvLSTM counts its gate
    convolutions plus the Hadamard gate arithmetic (3 mult / 1 add per cell
    element per step; sigmoid/tanh evaluations are not add/mult); batch norm
    and pooling count as elementwise passes. Sigmoid/tanh-free layers follow
    the same per-element accounting.
    """
    k2 = spec.kernel_size * spec.kernel_size
    if spec.kind is LayerKind.CONV2D:
        c, h, w, t = input_shape
        out_elts = spec.out_channels * h * w * t
        per = spec.in_channels * k2
        return OpCounts(out_elts * per, out_elts * per,
                        spec.out_channels * spec.in_channels * k2,
                        spec.out_channels)
    if spec.kind is LayerKind.BATCH_NORM:
        c, h, w, t = input_shape
        elts = c * h * w * t
        return OpCounts(elts, elts, c, c)
    if spec.kind is LayerKind.AVG_POOL:
        c, h, w, t = input_shape
        out_elts = c * (h // 2) * (w // 2) * t
        return OpCounts(3 * out_elts, out_elts, 0, 0)
    if spec.kind is LayerKind.CONV_LSTM:
        c, h, w, t = input_shape
        hc = spec.hidden_channels
        gate_out = 4 * hc * h * w * t
        per = (spec.in_channels + hc) * k2
        cell = hc * h * w * t
        return OpCounts(gate_out * per + cell, gate_out * per + 3 * cell,
                        4 * hc * (spec.in_channels + hc) * k2, 4 * hc)
    if spec.kind is LayerKind.FULLY_CONNECTED:
        return OpCounts(spec.units * spec.in_features,
                        spec.units * spec.in_features,
                        spec.units * spec.in_features,
                        spec.units)
    raise ValueError(f"unknown layer kind {spec.kind}")


def count_ops(specs, input_shape) -> OpCounts:
    """Total counts over a layer stack; additive and split-invariant."""
    total = OpCounts()
    shape = tuple(input_shape)
    for spec in specs:
        total = total + count_layer_ops(spec, shape)
        shape = spec.output_shape(shape)
    return total


# ---- initialisation ---------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---- autodiff layer primitives ----------------------------------------------

def conv2d_op(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padding convolution with bias, (Ci, N, H, W) -> (Co, N, H, W)."""
    out_data = kernels.conv2d_forward(x.data, w.data)
    out_data += b.data.reshape(-1, 1, 1, 1)

    def bwd(g):
        need_gx = x.requires_grad
        gx, gw = kernels.conv2d_backward(x.data, w.data, g, need_gx=need_gx)
        if need_gx:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2, 3)))

    return Tensor._make(out_data, (x, w, b), bwd)


def avgpool2_op(x: Tensor) -> Tensor:
    out_data = kernels.avgpool2_forward(x.data)

    def bwd(g):
        x._accumulate(kernels.avgpool2_backward(g))

    return Tensor._make(out_data, (x,), bwd)


def batchnorm_op(x: Tensor, gamma: Tensor, beta: Tensor, state: "BatchNormState",
                 mode: Mode) -> Tensor:
    """Per-channel batch normalisation over the (N, H, W) axes.

    TRAIN uses batch statistics and updates the running estimates in place;
    EVAL normalises with the stored running statistics. The epsilon keeps the
    variance denominator strictly positive, so constant inputs are fine.
    """
    c = x.data.shape[0]
    red = (1, 2, 3)
    count = x.data.size // c
    if mode is Mode.TRAIN:
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mu
        unbiased = var * (count / (count - 1)) if count > 1 else var
        state.running_var *= 1.0 - m
        state.running_var += m * unbiased
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    bc = (-1, 1, 1, 1)
    out_data = (x.data - mu.reshape(bc)) * (gamma.data * inv_std).reshape(bc)
    out_data += beta.data.reshape(bc)

    def bwd(g):
        xhat = (x.data - mu.reshape(bc)) * inv_std.reshape(bc)
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=red))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=red))
        if not x.requires_grad:
            return
        if mode is Mode.TRAIN:
            gsum = g.sum(axis=red).reshape(bc)
            gx_sum = (g * xhat).sum(axis=red).reshape(bc)
            gx = (gamma.data * inv_std).reshape(bc) / count * (
                count * g - gsum - xhat * gx_sum)
        else:
            gx = g * (gamma.data * inv_std).reshape(bc)
        x._accumulate(gx)

    return Tensor._make(out_data, (x, gamma, beta), bwd)


class BatchNormState:
    """Running statistics buffers for one batch-norm layer."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum


# ---- layer modules ----------------------------------------------------------

class Conv2D:
    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int,
                 kernel_size: int = 3):
        k2 = kernel_size * kernel_size
        self.spec = LayerSpec(LayerKind.CONV2D, in_channels=in_channels,
                              out_channels=out_channels, kernel_size=kernel_size)
        self.weight = Tensor(glorot_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size),
            in_channels * k2, out_channels * k2), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d_op(x, self.weight, self.bias)
        check_finite(out, "conv2d output")
        return out

    def parameters(self):
        return [("w", self.weight), ("b", self.bias)]


class BatchNorm:
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.spec = LayerSpec(LayerKind.BATCH_NORM, in_channels=channels,
                              out_channels=channels)
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState(channels, eps=eps, momentum=momentum)

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        out = batchnorm_op(x, self.gamma, self.beta, self.state, mode)
        check_finite(out, "batch_norm output")
        return out

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.state.running_mean),
                ("running_var", self.state.running_var)]


class AvgPool2:
    def __init__(self, channels: int = 0):
        self.spec = LayerSpec(LayerKind.AVG_POOL, in_channels=channels,
                              out_channels=channels)

    def forward(self, x: Tensor) -> Tensor:
        return avgpool2_op(x)

    def parameters(self):
        return []


class ConvLSTM:
    """Convolutional LSTM returning the full hidden-state sequence.

    Gates are a single 3x3 same-padding convolution over [input, hidden]
    concatenated along channels, split into input/forget/output/candidate.
    Hidden and cell state start at zero for every sequence.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 hidden_channels: int, kernel_size: int = 3):
        self.spec = LayerSpec(LayerKind.CONV_LSTM, in_channels=in_channels,
                              hidden_channels=hidden_channels, kernel_size=kernel_size)
        cat = in_channels + hidden_channels
        k2 = kernel_size * kernel_size
        self.weight = Tensor(glorot_uniform(
            rng, (4 * hidden_channels, cat, kernel_size, kernel_size),
            cat * k2, 4 * hidden_channels * k2), requires_grad=True)
        self.bias = Tensor(np.zeros(4 * hidden_channels), requires_grad=True)
        self.hidden_channels = hidden_channels

    def forward(self, x: Tensor, t_steps: int) -> Tensor:
        """x is (Ci, T*B, H, W) with frame-major N; returns (Hc, T*B, H, W)."""
        ci, n, h, w = x.shape
        if n % t_steps:
            raise ValueError(f"N={n} not divisible by T={t_steps}")
        b = n // t_steps
        hc = self.hidden_channels
        xs = x.reshape(ci, t_steps, b, h, w)
        hidden = Tensor(np.zeros((hc, b, h, w)))
        cell = Tensor(np.zeros((hc, b, h, w)))
        outs = []
        for t in range(t_steps):
            xt = xs.index((slice(None), t))
            z = concat([xt, hidden], axis=0)
            gates = conv2d_op(z, self.weight, self.bias)
            i_g = gates.index((slice(0, hc),)).sigmoid()
            f_g = gates.index((slice(hc, 2 * hc),)).sigmoid()
            o_g = gates.index((slice(2 * hc, 3 * hc),)).sigmoid()
            c_g = gates.index((slice(3 * hc, 4 * hc),)).tanh()
            cell = f_g * cell + i_g * c_g
            hidden = o_g * cell.tanh()
            outs.append(hidden)
        out = stack(outs, axis=1).reshape(hc, t_steps * b, h, w)
        check_finite(out, "conv_lstm output")
        return out

    def parameters(self):
        return [("w", self.weight), ("b", self.bias)]


class FullyConnected:
    def __init__(self, rng: np.random.Generator, in_features: int, units: int):
        self.spec = LayerSpec(LayerKind.FULLY_CONNECTED, in_features=in_features,
                              units=units)
        self.weight = Tensor(glorot_uniform(rng, (units, in_features),
                                            in_features, units), requires_grad=True)
        self.bias = Tensor(np.zeros(units), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        """x is (B, in_features); returns (B, units)."""
        if x.shape[-1] != self.spec.in_features:
            raise ValueError(
                f"fc expects {self.spec.in_features} features, got {x.shape[-1]}")
        out = x @ self.weight.transpose((1, 0)) + self.bias
        check_finite(out, "fc output")
        return out

    def parameters(self):
        return [("w", self.weight), ("b", self.bias)]
