"""Brute-force reference executor.

Every op materialises the zero-inserted kernel or input and performs every
multiply, including those by inserted and padded zeros, so ``mac_events``
is the naive count. Accumulation is in binary64 with a fixed order:

* conv1d: one accumulator per output, input channel major, tap minor
* pointwise: input channels in order
* dilated: zero-inserted taps in order
* transposed: per input channel partial sums over the zero-inserted taps,
  then channels added in order

Adding a product with a zero operand never changes a binary64 sum that
started at +0.0, so any schedule that visits the non-zero terms in the
same order reproduces these results bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Conv1D, DepthwiseDilated, ElementwiseMask, NetworkConfig, NormAct, Pointwise,
    ShapeError, TransposedConv1D, forward,
)
from .minifloat import quantize

GLN_EPS = 1e-8


@dataclass
class ExecResult:
    output: np.ndarray
    mac_events: int


def _as_2d(x, ch, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] != ch:
        raise ShapeError(f"{what}: expected {ch} input channels, got shape {x.shape}")
    return x


def ref_conv1d(x, w, spec: Conv1D) -> ExecResult:
    x = _as_2d(x, spec.in_ch, "conv1d")
    w = np.asarray(w, dtype=np.float64).reshape(spec.weight_shape)
    xp = np.pad(x, ((0, 0), (spec.pad_left, spec.pad_right)))
    n_out = spec.out_length(x.shape[1])
    if n_out < 1:
        raise ShapeError(f"conv1d: input length {x.shape[1]} shorter than kernel {spec.kernel}")
    acc = np.zeros((spec.out_ch, n_out))
    stop = spec.stride * (n_out - 1) + 1
    for c in range(spec.in_ch):
        for k in range(spec.kernel):
            acc += w[:, c, k, None] * xp[c, k:k + stop:spec.stride]
    return ExecResult(acc, spec.out_ch * spec.in_ch * spec.kernel * n_out)


def dilate_kernel(w, dilation: int) -> np.ndarray:
    """Insert ``dilation`` zeros between adjacent taps along the last axis."""
    w = np.asarray(w, dtype=np.float64)
    k = w.shape[-1]
    out = np.zeros(w.shape[:-1] + (k + (k - 1) * dilation,))
    out[..., ::dilation + 1] = w
    return out


def ref_dilated(x, w, spec: DepthwiseDilated) -> ExecResult:
    x = _as_2d(x, spec.ch, "dilated")
    wexp = dilate_kernel(np.asarray(w).reshape(spec.weight_shape), spec.dilation)
    left, right = spec.pads
    xp = np.pad(x, ((0, 0), (left, right)))
    n_out = xp.shape[1] - spec.span + 1
    if n_out < 1:
        raise ShapeError(f"dilated: input length {x.shape[1]} shorter than dilated kernel {spec.span}")
    acc = np.zeros((spec.ch, n_out))
    for j in range(spec.span):
        acc += wexp[:, j, None] * xp[:, j:j + n_out]
    return ExecResult(acc, spec.ch * spec.span * n_out)


def zero_insert(x, stride: int) -> np.ndarray:
    """Put ``stride - 1`` zeros between adjacent samples along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[-1]
    out = np.zeros(x.shape[:-1] + ((t - 1) * stride + 1,))
    out[..., ::stride] = x
    return out


def ref_transposed(x, w, spec: TransposedConv1D) -> ExecResult:
    x = _as_2d(x, spec.in_ch, "transposed")
    if x.shape[1] == 0:
        raise ShapeError("transposed: empty input")
    w = np.asarray(w, dtype=np.float64).reshape(spec.weight_shape)
    z = zero_insert(x, spec.stride)
    z = np.pad(z, ((0, 0), (spec.pad, spec.pad)))
    n_out = z.shape[1] - spec.kernel + 1
    if n_out < 1:
        raise ShapeError(f"transposed: {x.shape[1]} inputs too few for kernel {spec.kernel}")
    out = np.zeros((spec.out_ch, n_out))
    for o in range(spec.out_ch):
        partial = np.zeros((spec.in_ch, n_out))
        for j in range(spec.kernel):
            partial += w[o, :, j, None] * z[:, j:j + n_out]
        for c in range(spec.in_ch):
            out[o] += partial[c]
    return ExecResult(out, spec.out_ch * spec.in_ch * spec.kernel * n_out)


def ref_pointwise(x, w, spec: Pointwise) -> ExecResult:
    x = _as_2d(x, spec.in_ch, "pointwise")
    w = np.asarray(w, dtype=np.float64).reshape(spec.weight_shape)
    acc = np.zeros((spec.out_ch, x.shape[1]))
    for c in range(spec.in_ch):
        acc += w[:, c, None] * x[c]
    return ExecResult(acc, spec.out_ch * spec.in_ch * x.shape[1])


def ref_mask(x, m, spec: ElementwiseMask) -> ExecResult:
    x = _as_2d(x, spec.ch, "mask")
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x.shape:
        raise ShapeError(f"mask: shape {m.shape} does not match input {x.shape}")
    return ExecResult(x * m, x.size)


def normact(x, activation: str) -> np.ndarray:
    """Normalisation/activation unit (global layer norm over channels and time)."""
    x = np.asarray(x, dtype=np.float64)
    if activation in ("gln", "gln_relu"):
        mean = x.mean()
        var = ((x - mean) ** 2).mean()
        x = (x - mean) / np.sqrt(var + GLN_EPS)
    if activation in ("relu", "gln_relu"):
        return np.maximum(x, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if activation in ("gln", "identity"):
        return x
    raise ValueError(f"unknown activation {activation!r}")


def ref_normact(x, spec: NormAct) -> ExecResult:
    x = _as_2d(x, spec.ch, "normact")
    return ExecResult(normact(x, spec.activation), 0)


def ref_layer(spec, x, w=None) -> ExecResult:
    if isinstance(spec, Conv1D):
        return ref_conv1d(x, w, spec)
    if isinstance(spec, DepthwiseDilated):
        return ref_dilated(x, w, spec)
    if isinstance(spec, TransposedConv1D):
        return ref_transposed(x, w, spec)
    if isinstance(spec, Pointwise):
        return ref_pointwise(x, w, spec)
    if isinstance(spec, ElementwiseMask):
        return ref_mask(x, w, spec)
    if isinstance(spec, NormAct):
        return ref_normact(x, spec)
    raise TypeError(f"unsupported layer spec {spec!r}")


def ref_network(cfg: NetworkConfig, weights, x, fmt=None, counts: dict | None = None):
    """Run the whole network in binary64; returns one waveform per source.

    With ``fmt`` every stored tensor (network input and every layer output
    after its normalisation/activation) is rounded through that format.
    Per-layer naive multiply counts go into ``counts`` when given.
    """

    def run(layer, inputs, w):
        res = ref_layer(layer.spec, inputs, w)
        if counts is not None:
            counts[layer.name] = res.mac_events
        return res.output

    store = None if fmt is None else (lambda t: quantize(t, fmt))
    return forward(cfg, weights, x, run, store)
