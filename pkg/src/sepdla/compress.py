"""Weight-space compression: structured shrink, magnitude pruning, quantisation.

No retraining happens here. The accuracy-constrained loop of iterative
pruning is exposed as ``prune_schedule`` with a caller-supplied evaluation
hook.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .minifloat import FloatFormat, quantize
from .model import (
    ConfigError, NetworkConfig, WeightBank, count_macs, weight_shapes,
)


class ShrinkError(ValueError):
    """Target configuration cannot be cut out of the source."""


# --------------------------------------------------------------------------
# structured shrink
# --------------------------------------------------------------------------


def _branch_map(src: NetworkConfig, dst: NetworkConfig) -> list[int]:
    """Source branch index for every target encoder branch (matched by filter)."""
    used, out = set(), []
    for f in dst.encoder_filters:
        match = next((i for i, g in enumerate(src.encoder_filters) if g == f and i not in used), None)
        if match is None:
            raise ShrinkError(f"encoder filter {f} not present in source config")
        used.add(match)
        out.append(match)
    return out


def encoder_channel_index(src: NetworkConfig, dst: NetworkConfig) -> np.ndarray:
    """Concatenated encoder channels of ``src`` that survive in ``dst``."""
    return np.concatenate([b * src.N + np.arange(dst.N) for b in _branch_map(src, dst)])


def check_shrink(src: NetworkConfig, dst: NetworkConfig):
    for key in ("N", "X", "R", "H", "B"):
        if getattr(dst, key) > getattr(src, key):
            raise ShrinkError(f"target {key}={getattr(dst, key)} exceeds source {getattr(src, key)}")
    if dst.kernel != src.kernel or dst.num_sources != src.num_sources:
        raise ShrinkError("kernel size and number of sources must match")
    if tuple(dst.dilation_schedule) != tuple(src.dilation_schedule[: dst.X]):
        raise ShrinkError("target dilation schedule must be a prefix of the source schedule")
    _branch_map(src, dst)


def structured_shrink(bank: WeightBank, src: NetworkConfig, dst: NetworkConfig) -> WeightBank:
    """Slice every tensor down to ``dst``, keeping the lowest channel indexes.

    Dropped encoder branches and blocks disappear together with their
    decoder branches and their slices of the separator input and mask head.
    """
    check_shrink(src, dst)
    enc = encoder_channel_index(src, dst)
    branches = _branch_map(src, dst)
    mask_rows = np.concatenate([s * src.encoder_channels + enc for s in range(dst.num_sources)])
    n, b, h = dst.N, dst.B, dst.H

    def take(name, w):
        if name.startswith("enc.b"):
            return w[:n]
        if name.startswith("dec."):
            return w[:, :n]
        if name == "sep.in":
            return w[:b][:, enc]
        if name == "sep.mask":
            return w[mask_rows][:, :b]
        if name.endswith(".pw1"):
            return w[:h, :b]
        if name.endswith(".dw"):
            return w[:h]
        if name.endswith(".pw2"):
            return w[:b, :h]
        raise ShrinkError(f"no slicing rule for {name}")

    def source_name(name):
        # target branch i lives at source branch branches[i]
        if name.startswith("enc.b"):
            return f"enc.b{branches[int(name[5:])]}"
        if name.startswith("dec."):
            s, bi = name.split(".")[1:3]
            return f"dec.{s}.b{branches[int(bi[1:])]}"
        return name

    weights, masks = {}, {}
    for name, shape in weight_shapes(dst).items():
        src_name = source_name(name)
        w = take(name, bank.weights[src_name]).copy()
        if w.shape != tuple(shape):
            raise ShrinkError(f"{name}: sliced to {w.shape}, expected {tuple(shape)}")
        weights[name] = w
        if src_name in bank.masks:
            masks[name] = take(name, bank.masks[src_name]).copy()
    return WeightBank(weights, masks, bank.fmt)


def drop_branch(cfg: NetworkConfig, which: str = "long") -> NetworkConfig:
    """Single-branch variant without the longest (``*``) or shortest (``**``) filter."""
    if cfg.L < 2:
        raise ConfigError("need at least two encoder branches to drop one")
    kernels = [f.kernel for f in cfg.encoder_filters]
    if which == "long":
        gone = kernels.index(max(kernels))
    elif which == "short":
        gone = kernels.index(min(kernels))
    else:
        raise ValueError(f"which must be 'long' or 'short', got {which!r}")
    keep = tuple(f for i, f in enumerate(cfg.encoder_filters) if i != gone)
    return cfg.with_dims(L=cfg.L - 1, encoder_filters=keep, name=f"{cfg.name}-{which}")


# --------------------------------------------------------------------------
# unstructured pruning
# --------------------------------------------------------------------------


def unstructured_prune(bank: WeightBank, threshold: float) -> WeightBank:
    """Zero and mask every weight with ``|w| < threshold``.

    Existing masks are kept; the result's ``sparsity()`` is the pruned fraction.
    """
    if not threshold >= 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    weights, masks = {}, {}
    for name, w in bank.weights.items():
        keep = np.abs(w) >= threshold
        if name in bank.masks:
            keep &= bank.masks[name]
        weights[name] = np.where(keep, w, 0.0)
        masks[name] = keep
    return WeightBank(weights, masks, bank.fmt)


def geometric_thresholds(start: float, ratio: float = 1.5, steps: int = 8) -> list[float]:
    if start <= 0 or ratio <= 1 or steps < 1:
        raise ValueError("need start > 0, ratio > 1, steps >= 1")
    return [start * ratio ** i for i in range(steps)]


@dataclass
class PruneSpec:
    target_config: NetworkConfig | None = None
    threshold: float | None = None
    thresholds: list[float] = field(default_factory=list)
    target_bytes: int | None = None

    def __post_init__(self):
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        ts = list(self.thresholds)
        if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("threshold schedule must be non-negative and strictly increasing")


@dataclass
class PruneStep:
    threshold: float
    sparsity: float
    score: float | None
    accepted: bool


def prune_schedule(bank: WeightBank, thresholds: Sequence[float],
                   evaluate: Callable[[WeightBank], float] | None = None,
                   min_score: float | None = None, target_bytes: int | None = None,
                   bits_per_weight: int = 32):
    """Raise the threshold step by step until the hook rejects the result.

    ``evaluate`` stands in for the accuracy check (retraining is out of
    scope). A step is rejected when its score falls below ``min_score``; the
    last accepted bank is returned with the step log. Iteration also stops
    once ``target_bytes`` is reached.
    """
    PruneSpec(thresholds=list(thresholds))
    best, steps = bank, []
    for t in thresholds:
        cand = unstructured_prune(bank, t)
        score = evaluate(cand) if evaluate is not None else None
        ok = min_score is None or score is None or score >= min_score
        steps.append(PruneStep(t, cand.sparsity(), score, ok))
        if not ok:
            break
        best = cand
        if target_bytes is not None and cand.storage_bytes(bits_per_weight) <= target_bytes:
            break
    return best, steps


# --------------------------------------------------------------------------
# quantisation
# --------------------------------------------------------------------------


def quantize_bank(bank: WeightBank, fmt: FloatFormat | None) -> WeightBank:
    """Round every weight through ``fmt``; pruned zeros stay exact zeros."""
    weights = {k: quantize(w, fmt) for k, w in bank.weights.items()}
    return WeightBank(weights, {k: m.copy() for k, m in bank.masks.items()}, fmt)


def max_quant_error(values, fmt: FloatFormat | None) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.max(np.abs(v - quantize(v, fmt)))) if v.size else 0.0


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class Stage:
    name: str
    weight_bytes: float | None = None
    macs: float | None = None  # per second, any unit as long as stages agree


def _reduction(before, after):
    if before is None or after is None or before == 0:
        return None
    return 1.0 - after / before


@dataclass
class CompressionReport:
    stages: list[Stage]
    layer_sparsity: dict[str, float] = field(default_factory=dict)

    def _chain(self, attr):
        rows, prev = [], None
        for st in self.stages:
            v = getattr(st, attr)
            if v is None:
                continue
            if prev is not None:
                rows.append((st.name, _reduction(prev, v)))
            prev = v
        return rows

    @property
    def weight_reductions(self) -> list[tuple[str, float]]:
        return self._chain("weight_bytes")

    @property
    def mac_reductions(self) -> list[tuple[str, float]]:
        return self._chain("macs")

    def _overall(self, attr):
        vals = [getattr(s, attr) for s in self.stages if getattr(s, attr) is not None]
        if not vals:
            return None
        return _reduction(vals[0], vals[-1])

    @property
    def overall_weight_reduction(self):
        return self._overall("weight_bytes")

    @property
    def overall_mac_reduction(self):
        return self._overall("macs")

    def to_dict(self) -> dict:
        return {
            "stages": [vars(s) for s in self.stages],
            "weight_reductions": dict(self.weight_reductions),
            "mac_reductions": dict(self.mac_reductions),
            "overall_weight_reduction": self.overall_weight_reduction,
            "overall_mac_reduction": self.overall_mac_reduction,
            "layer_sparsity": self.layer_sparsity,
        }

    def table(self) -> str:
        lines = [f"{'stage':<14}{'weight MB':>12}{'GMACs/s':>10}{'dW %':>8}{'dMAC %':>8}"]
        prev_w = prev_m = None
        for s in self.stages:
            dw = _reduction(prev_w, s.weight_bytes)
            dm = _reduction(prev_m, s.macs)
            fmt = lambda v, scale, w: f"{v / scale:>{w}.3f}" if v is not None else " " * (w - 1) + "-"
            pct = lambda r: f"{100 * r:>8.2f}" if r is not None else f"{'':>8}"
            lines.append(f"{s.name:<14}{fmt(s.weight_bytes, 1e6, 12)}{fmt(s.macs, 1e9, 10)}{pct(dw)}{pct(dm)}")
            prev_w = s.weight_bytes if s.weight_bytes is not None else prev_w
            prev_m = s.macs if s.macs is not None else prev_m
        ow, om = self.overall_weight_reduction, self.overall_mac_reduction
        lines.append(f"overall: weights -{100 * (ow or 0):.2f}%, MACs -{100 * (om or 0):.2f}%")
        return "\n".join(lines)


def report(stages: Sequence, layer_sparsity: dict | None = None) -> CompressionReport:
    """Chain stages given as ``Stage`` objects or ``(name, bytes, macs)`` tuples."""
    if not stages:
        raise ValueError("need at least one stage")
    stages = [s if isinstance(s, Stage) else Stage(*s) for s in stages]
    return CompressionReport(stages, dict(layer_sparsity or {}))


def layer_sparsity(bank: WeightBank) -> dict[str, float]:
    out = {}
    for name, w in bank.weights.items():
        m = bank.masks.get(name)
        kept = int(m.sum()) if m is not None else w.size
        out[name] = 1.0 - kept / w.size if w.size else 0.0
    return out


def compress_pipeline(src: NetworkConfig, bank: WeightBank, dst: NetworkConfig | None = None,
                      threshold: float | None = None, fmt: FloatFormat | None = None):
    """Shrink, prune and quantise; returns the final bank and the stage report."""
    bits = lambda f: 32 if f is None else f.total_bits
    stages = [Stage("baseline", bank.storage_bytes(32), count_macs(src))]
    cfg = src
    if dst is not None:
        bank = structured_shrink(bank, src, dst)
        cfg = dst
        stages.append(Stage("structured", bank.storage_bytes(32), count_macs(dst)))
    if threshold is not None:
        bank = unstructured_prune(bank, threshold)
        stages.append(Stage("unstructured", bank.storage_bytes(32), None))
    if fmt is not None:
        bank = quantize_bank(bank, fmt)
        stages.append(Stage("quantized", bank.storage_bytes(bits(fmt)), None))
    stages.append(Stage("decomposed", None, count_macs(cfg, decomposed=True)))
    return bank, report(stages, layer_sparsity(bank))
