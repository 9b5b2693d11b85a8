"""Zero-free index schedules for dilated and transposed convolutions.

A schedule is the materialised list of ``(output, input, tap)`` triples
that touch a real weight and a real input sample, sorted by output and
then tap. Positions created by zero insertion or padding never appear.
Indices are 0-based; ``dump()`` prints them 1-based (``o1: a1*w1 + ...``).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import DepthwiseDilated, ShapeError, TransposedConv1D


@dataclass(frozen=True)
class _Schedule:
    kernel: int
    length: int  # input samples
    n_out: int
    out_idx: np.ndarray
    in_idx: np.ndarray
    tap_idx: np.ndarray
    naive_per_output: int  # multiplies per output before decomposition

    @property
    def offsets(self) -> np.ndarray:
        """CSR row pointers: pairs of output n are ``[offsets[n], offsets[n+1])``."""
        return np.searchsorted(self.out_idx, np.arange(self.n_out + 1))

    def pairs(self, n: int) -> list[tuple[int, int]]:
        lo, hi = self.offsets[n:n + 2]
        return list(zip(self.in_idx[lo:hi].tolist(), self.tap_idx[lo:hi].tolist()))

    def pairs_per_output(self) -> np.ndarray:
        return np.bincount(self.out_idx, minlength=self.n_out)

    @property
    def pair_count(self) -> int:
        return int(self.out_idx.size)

    @property
    def naive_count(self) -> int:
        return self.naive_per_output * self.n_out

    def mac_ratio(self) -> Fraction:
        """Decomposed / naive multiplies (per channel pair)."""
        return Fraction(self.pair_count, self.naive_count)

    def dump(self) -> str:
        lines = []
        for n in range(self.n_out):
            terms = " + ".join(f"a{i + 1}*w{j + 1}" for i, j in self.pairs(n))
            lines.append(f"o{n + 1}: {terms or '0'}")
        return "\n".join(lines)

    def _tap_slices(self):
        for j in range(self.kernel):
            sel = self.tap_idx == j
            if sel.any():
                yield j, self.out_idx[sel], self.in_idx[sel]


@dataclass(frozen=True)
class DilatedSchedule(_Schedule):
    dilation: int = 0
    pad_left: int = 0

    def evaluate(self, x, w) -> np.ndarray:
        """Depthwise evaluation: ``x`` is (C, T), ``w`` is (C, K)."""
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        acc = np.zeros((x.shape[0], self.n_out))
        for j, out, inp in self._tap_slices():
            acc[:, out] += w[:, j, None] * x[:, inp]
        return acc


@dataclass(frozen=True)
class TransposedSchedule(_Schedule):
    stride: int = 1
    pad: int = 0

    @property
    def phases(self) -> list[list[int]]:
        """Tap groups; phase ``p`` serves outputs whose window starts p past an input."""
        s = self.stride
        return [[j for j in range(self.kernel) if (j + p) % s == 0] for p in range(s)]

    def phase_of(self, n: int) -> int:
        return (n - self.pad) % self.stride

    def evaluate(self, x, w) -> np.ndarray:
        """``x`` is (C_in, T), ``w`` is (C_out, C_in, K); channels summed in order."""
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        out = np.zeros((w.shape[0], self.n_out))
        slices = list(self._tap_slices())
        for o in range(w.shape[0]):
            partial = np.zeros((x.shape[0], self.n_out))
            for j, outs, inp in slices:
                partial[:, outs] += w[o, :, j, None] * x[:, inp]
            for c in range(x.shape[0]):
                out[o] += partial[c]
        return out


def _sorted(out, inp, tap):
    order = np.lexsort((tap, out))
    return out[order], inp[order], tap[order]


def dilated_schedule(kernel: int, dilation: int, length: int, padding: str = "valid") -> DilatedSchedule:
    spec = DepthwiseDilated(1, kernel, dilation, padding)
    if padding == "valid" and length < spec.span:
        raise ShapeError(f"{length} inputs too few for a dilated kernel spanning {spec.span}")
    left, _ = spec.pads
    n_out = spec.out_length(length)
    n = np.arange(n_out)
    outs, inps, taps = [], [], []
    for j in range(kernel):
        i = n + j * (dilation + 1) - left
        ok = (i >= 0) & (i < length)
        outs.append(n[ok])
        inps.append(i[ok])
        taps.append(np.full(ok.sum(), j))
    out, inp, tap = _sorted(np.concatenate(outs), np.concatenate(inps), np.concatenate(taps))
    return DilatedSchedule(kernel, length, n_out, out, inp, tap, spec.span,
                           dilation=dilation, pad_left=left)


def transposed_schedule(kernel: int, stride: int, length: int, padding: str = "valid") -> TransposedSchedule:
    if stride < 1 or stride > kernel:
        raise ValueError(f"stride must be in 1..kernel ({kernel}), got {stride}")
    spec = TransposedConv1D(1, 1, kernel, stride, padding)
    n_out = spec.out_length(length)
    if n_out < 1:
        raise ShapeError(f"{length} inputs too few for a transposed kernel of {kernel}")
    pad = spec.pad
    n = np.arange(n_out)
    outs, inps, taps = [], [], []
    for j in range(kernel):
        pos = n + j - pad  # position in the zero-inserted sequence
        ok = (pos >= 0) & (pos % stride == 0) & (pos // stride < length)
        outs.append(n[ok])
        inps.append(pos[ok] // stride)
        taps.append(np.full(ok.sum(), j))
    out, inp, tap = _sorted(np.concatenate(outs), np.concatenate(inps), np.concatenate(taps))
    return TransposedSchedule(kernel, length, n_out, out, inp, tap, kernel,
                              stride=stride, pad=pad)


def schedule_for(spec, length: int):
    if isinstance(spec, DepthwiseDilated):
        return dilated_schedule(spec.kernel, spec.dilation, length, spec.padding)
    if isinstance(spec, TransposedConv1D):
        return transposed_schedule(spec.kernel, spec.stride, length, spec.padding)
    raise TypeError(f"no decomposition for {type(spec).__name__}")
