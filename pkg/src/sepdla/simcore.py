"""Cycle-level model of the 8-PE zero-skipping accelerator.

Four dataflows share one PE array:

* broadcast (1-D conv, 1x1 pointwise): eight activations are fetched per
  64-bit word, the zero detector keeps the non-zero (offset, value) pairs
  and shifts one pair out per cycle; the value is broadcast to every PE and
  each PE accumulates its own output channel (output-stationary).
* lockstep (depthwise dilated, transposed, mask): one channel per PE, the
  decomposition schedule drives the address controller, and a PE whose
  activation is zero is clock-gated. Gated cycles still elapse.

Numerics are binary64 accumulation over the same term order as the
reference executor, so results match it bit for bit when quantisation is
off. Cycle counts come from the fast vectorised path; ``detailed=True``
steps every cycle explicitly and is meant for small layers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .decompose import dilated_schedule, transposed_schedule
from .minifloat import FP8_SHIFTED, decode, encode, fp8_mul, quantize
from .model import (
    Conv1D, DepthwiseDilated, ElementwiseMask, NetworkConfig, NormAct, Pointwise,
    ShapeError, TransposedConv1D, forward,
)
from .refexec import normact


class BufferOverflowError(RuntimeError):
    """A tile's working set does not fit its on-chip buffer."""


class SimulationError(RuntimeError):
    def __init__(self, index: int, name: str, cause: Exception):
        self.index, self.name, self.cause = index, name, cause
        super().__init__(f"layer {index} ({name}): {cause}")


@dataclass(frozen=True)
class PeArrayConfig:
    num_pes: int = 8
    group_width: int = 8
    buffer_words: int = 256  # per buffer; every buffer is 256 x 64 bit
    word_bits: int = 64
    clock_hz: float = 150e6

    def __post_init__(self):
        if min(self.num_pes, self.group_width, self.buffer_words, self.word_bits) < 1 or self.clock_hz <= 0:
            raise ValueError("PE array sizes and clock must be positive")

    @classmethod
    def from_dict(cls, data: dict | None) -> "PeArrayConfig":
        return cls(**(data or {}))


@dataclass(frozen=True)
class Calibration:
    """Timing constants the hardware description leaves open; bump ``version`` on any change."""

    version: int = 1
    broadcast_depth: int = 6  # pipeline fill per layer, six-stage flow
    dilated_depth: int = 4
    transposed_depth: int = 5
    mask_depth: int = 4
    empty_group_cycles: int = 1  # an all-zero group still occupies the detector
    norm_pass_latency: int = 1  # per 8-channel pass through the norm/act unit
    psum_reload_cycles: int = 1  # per output when a tile's weights need several passes
    weight_words_per_cycle: int = 1

    @classmethod
    def from_dict(cls, data: dict | None) -> "Calibration":
        return cls(**(data or {}))


# --------------------------------------------------------------------------
# zero-skipping front end
# --------------------------------------------------------------------------


@dataclass
class NonzeroGroup:
    offsets: list[int]  # 1-based positions inside the group
    values: list

    def pairs(self) -> list[tuple[int, object]]:
        return list(zip(self.offsets, self.values))

    def __len__(self):
        return len(self.offsets)


def detect_nonzeros(group, group_width: int = 8, fmt=None) -> NonzeroGroup:
    """Zero comparators plus selection mux for one fetched word.

    Short groups (end of a tensor) are padded with zeros. With ``fmt`` the
    entries are codes of that format and any code with a zero exponent
    field (both signed zeros) counts as zero.
    """
    group = list(group)
    if len(group) > group_width:
        raise ValueError(f"group of {len(group)} exceeds width {group_width}")
    group += [0] * (group_width - len(group))
    if fmt is None:
        flags = [v != 0 for v in group]
    else:
        flags = [decode(int(c), fmt) != 0 for c in group]
    offsets = [i + 1 for i, f in enumerate(flags) if f]
    return NonzeroGroup(offsets, [group[i - 1] for i in offsets])


class ZeroSkipUnit:
    """Offset-index and value registers, shifted out one pair per cycle."""

    def __init__(self, group_width: int = 8):
        self.group_width = group_width
        self._pending: list[tuple[int, object]] = []

    def load(self, group) -> int:
        self._pending = detect_nonzeros(group, self.group_width).pairs()
        return len(self._pending)

    @property
    def empty(self) -> bool:
        return not self._pending

    def shift(self):
        return self._pending.pop(0)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------


@dataclass
class LayerTrace:
    name: str
    kind: str
    mac_stage_cycles: int = 0  # cycles the MAC stage is busy (incl. gated lockstep cycles)
    dense_cycles: int = 0  # MAC-stage cycles with zero skipping off
    detector_cycles: int = 0  # groups fetched by the zero detector
    overhead_cycles: int = 0
    dense_mac_events: int = 0  # structural multiplies after decomposition
    mac_events: int = 0  # multiplies actually performed (non-gated)
    gated_pe_cycles: int = 0
    skipped_zero_count: int = 0
    act_words_read: int = 0
    weight_words_read: int = 0
    out_words_written: int = 0
    weight_load_words: int = 0

    @property
    def total_cycles(self) -> int:
        return self.mac_stage_cycles + self.overhead_cycles

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_cycles"] = self.total_cycles
        return d


_COUNTERS = [f.name for f in fields(LayerTrace) if f.type in ("int", int)]


@dataclass
class ScheduleTrace:
    layers: list[LayerTrace] = field(default_factory=list)

    def totals(self) -> dict:
        out = {k: sum(getattr(l, k) for l in self.layers) for k in _COUNTERS}
        out["total_cycles"] = sum(l.total_cycles for l in self.layers)
        return out

    @property
    def total_cycles(self) -> int:
        return sum(l.total_cycles for l in self.layers)

    def by_kind(self) -> dict[str, dict]:
        groups: dict[str, ScheduleTrace] = {}
        for l in self.layers:
            groups.setdefault(l.kind, ScheduleTrace()).layers.append(l)
        return {k: v.totals() for k, v in groups.items()}


@dataclass
class CycleEvent:
    """One MAC-stage cycle of the detailed engine."""

    cycle: int
    output: int  # output position
    active_pes: int
    offset: int | None = None  # broadcast flows: 1-based offset in the group
    value: float | None = None
    terms: list | None = None  # lockstep flows: per-PE (input, tap) or None when gated


class ProcessingElement:
    """8-bit multiplier plus wide accumulator."""

    def __init__(self, fmt=None):
        self.fmt = fmt
        self.acc = 0.0
        self.macs = 0

    def mac(self, a: float, w: float):
        if self.fmt is not None:
            p = fp8_mul(encode(a, self.fmt), encode(w, self.fmt), self.fmt)
        else:
            p = a * w
        self.acc += p
        self.macs += 1

    def drain(self) -> float:
        v, self.acc = self.acc, 0.0
        return v


# --------------------------------------------------------------------------
# broadcast flows
# --------------------------------------------------------------------------


def _tiles(n: int, width: int) -> list[int]:
    """Active PE count of every tile."""
    return [min(width, n - i) for i in range(0, n, width)]


def _exposed_load(loads: list[int], computes: list[int]) -> int:
    """Ping-pong weight buffers: only the first load and any shortfall are exposed."""
    if not loads:
        return 0
    exposed = loads[0]
    for nxt, busy in zip(loads[1:], computes[:-1]):
        exposed += max(0, nxt - busy)
    return exposed


def _broadcast_stream(spec, x):
    """Activation stream (outputs x elements) and weight matrix (out_ch x elements)."""
    if isinstance(spec, Pointwise):
        return x.T, None
    xp = np.pad(x, ((0, 0), (spec.pad_left, spec.pad_right)))
    n_out = spec.out_length(x.shape[1])
    if n_out < 1:
        raise ShapeError(f"conv1d: input length {x.shape[1]} shorter than kernel {spec.kernel}")
    idx = np.arange(n_out)[:, None] * spec.stride + np.arange(spec.kernel)[None, :]
    windows = xp[:, idx]  # (in_ch, n_out, K)
    return windows.transpose(1, 0, 2).reshape(n_out, -1), None


def _check_input(x, ch, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] != ch:
        raise ShapeError(f"{what}: expected {ch} input channels, got shape {x.shape}")
    return x


def run_broadcast_flow(spec, x, w, *, pe: PeArrayConfig | None = None, cal: Calibration | None = None,
                       zero_skip: bool = True, detailed: bool = False, fmt=None, name: str = "",
                       events: list | None = None):
    """Shared engine of the 1-D conv and 1x1 pointwise flows."""
    pe = pe or PeArrayConfig()
    cal = cal or Calibration()
    x = _check_input(x, spec.in_ch, spec.kind)
    stream, _ = _broadcast_stream(spec, x)
    n_out, length = stream.shape
    wm = np.asarray(w, dtype=np.float64).reshape(spec.out_ch, length)

    gw = pe.group_width
    chunk = (pe.buffer_words // gw) * gw
    if chunk < gw:
        raise BufferOverflowError(
            f"{name or spec.kind}: a {gw}-element group needs {gw} weight words, buffer holds {pe.buffer_words}")
    chunks = [(lo, min(lo + chunk, length)) for lo in range(0, length, chunk)]
    tiles = _tiles(spec.out_ch, pe.num_pes)

    nonzero = stream != 0
    starts = np.arange(0, length, gw)
    group_len = np.diff(np.append(starts, length))
    nnz = np.add.reduceat(nonzero, starts, axis=1) if length else np.zeros((n_out, 0), int)
    per_group = nnz if zero_skip else np.broadcast_to(group_len, nnz.shape)
    empty = int((nnz == 0).sum()) if zero_skip else 0

    tr = LayerTrace(name, spec.kind)
    n_tiles = len(tiles)
    tr.mac_stage_cycles = n_tiles * int(per_group.sum())
    tr.dense_cycles = n_tiles * n_out * length
    tr.detector_cycles = n_tiles * nnz.size
    tr.dense_mac_events = spec.out_ch * n_out * length
    tr.mac_events = sum(tiles) * int(per_group.sum())
    tr.skipped_zero_count = n_tiles * (n_out * length - int(per_group.sum()))
    tr.act_words_read = n_tiles * nnz.size
    tr.weight_words_read = tr.mac_stage_cycles
    tr.out_words_written = n_tiles * n_out
    tr.weight_load_words = n_tiles * length

    loads, computes = [], []
    for _ in tiles:
        for lo, hi in chunks:
            g0, g1 = lo // gw, -(-hi // gw)
            loads.append(math.ceil((hi - lo) / cal.weight_words_per_cycle))
            computes.append(int(per_group[:, g0:g1].sum()) + cal.empty_group_cycles * int((nnz[:, g0:g1] == 0).sum()) * zero_skip)
    tr.overhead_cycles = (cal.broadcast_depth + _exposed_load(loads, computes)
                          + cal.empty_group_cycles * empty * n_tiles
                          + cal.psum_reload_cycles * n_tiles * n_out * (len(chunks) - 1))

    if detailed:
        out = _broadcast_detailed(stream, wm, tiles, chunks, pe, zero_skip, fmt, events)
    else:
        out = np.zeros((spec.out_ch, n_out))
        for l in range(length):
            col = stream[:, l]
            if zero_skip:
                nz = nonzero[:, l]
                out[:, nz] += wm[:, l, None] * col[nz]
            else:
                out += wm[:, l, None] * col
    return out, tr


def _broadcast_detailed(stream, wm, tiles, chunks, pe, zero_skip, fmt, events):
    n_out, length = stream.shape
    out = np.zeros((wm.shape[0], n_out))
    unit = ZeroSkipUnit(pe.group_width)
    cycle = 0
    for ti, active in enumerate(tiles):
        rows = range(ti * pe.num_pes, ti * pe.num_pes + active)
        pes = [ProcessingElement(fmt) for _ in rows]
        partial = np.zeros((active, n_out))
        for lo, hi in chunks:
            for t in range(n_out):
                for p, e in enumerate(pes):
                    e.acc = partial[p, t]  # psum reload between chunks
                for base in range(lo, hi, pe.group_width):
                    group = stream[t, base:min(base + pe.group_width, hi)]
                    if zero_skip:
                        unit.load(group)
                        pairs = []
                        while not unit.empty:
                            pairs.append(unit.shift())
                    else:
                        pairs = [(i + 1, v) for i, v in enumerate(group)]
                    for offset, value in pairs:
                        addr = base + offset - 1  # weight address = base + offset
                        for p, e in enumerate(pes):
                            e.mac(value, wm[rows[p], addr])
                        if events is not None:
                            events.append(CycleEvent(cycle, t, len(pes), offset, float(value)))
                        cycle += 1
                for p, e in enumerate(pes):
                    partial[p, t] = e.drain()
        out[list(rows)] = partial
    return out


def run_conv1d_flow(spec: Conv1D, x, w, **kw):
    return run_broadcast_flow(spec, x, w, **kw)


def run_pointwise_flow(spec: Pointwise, x, w, **kw):
    return run_broadcast_flow(spec, x, w, **kw)


# --------------------------------------------------------------------------
# lockstep flows
# --------------------------------------------------------------------------


def _lockstep_trace(name, kind, sched, x, ch_tiles, pe, zero_skip, repeats=1):
    """Counters shared by the dilated and transposed flows."""
    tr = LayerTrace(name, kind)
    n_tiles = len(ch_tiles)
    pairs = sched.pair_count
    live = (x[:, sched.in_idx] != 0).sum() if zero_skip else x.shape[0] * pairs
    tr.mac_stage_cycles = repeats * n_tiles * pairs
    tr.dense_cycles = tr.mac_stage_cycles
    tr.dense_mac_events = repeats * x.shape[0] * pairs
    tr.mac_events = repeats * int(live)
    tr.gated_pe_cycles = tr.mac_stage_cycles * pe.num_pes - tr.mac_events
    tr.skipped_zero_count = tr.dense_mac_events - tr.mac_events
    tr.act_words_read = tr.mac_stage_cycles
    return tr


def _lockstep_detailed(sched, x, w_of, ch_tiles, pe, zero_skip, fmt, events, start_cycle=0):
    """Step every cycle; returns per-channel partial sums (C, n_out)."""
    partial = np.zeros((x.shape[0], sched.n_out))
    offs = sched.offsets
    cycle = start_cycle
    for ti, active in enumerate(ch_tiles):
        chans = range(ti * pe.num_pes, ti * pe.num_pes + active)
        pes = [ProcessingElement(fmt) for _ in chans]
        for n in range(sched.n_out):
            for k in range(offs[n], offs[n + 1]):
                i, j = int(sched.in_idx[k]), int(sched.tap_idx[k])
                terms = []
                for e, c in zip(pes, chans):
                    a = x[c, i]
                    if zero_skip and a == 0:
                        terms.append(None)  # clock-gated
                        continue
                    e.mac(a, w_of(c, j))
                    terms.append((i, j))
                if events is not None:
                    events.append(CycleEvent(cycle, n, sum(t is not None for t in terms), terms=terms))
                cycle += 1
            for e, c in zip(pes, chans):
                partial[c, n] = e.drain()
    return partial, cycle


def run_dilated_flow(spec: DepthwiseDilated, x, w, *, pe=None, cal=None, zero_skip=True,
                     detailed=False, fmt=None, name="", events=None):
    pe = pe or PeArrayConfig()
    cal = cal or Calibration()
    x = _check_input(x, spec.ch, "dilated")
    w = np.asarray(w, dtype=np.float64).reshape(spec.weight_shape)
    if spec.kernel > pe.buffer_words:
        raise BufferOverflowError(f"{name or 'dilated'}: {spec.kernel} taps exceed {pe.buffer_words} weight words")
    sched = dilated_schedule(spec.kernel, spec.dilation, x.shape[1], spec.padding)
    tiles = _tiles(spec.ch, pe.num_pes)
    tr = _lockstep_trace(name, spec.kind, sched, x, tiles, pe, zero_skip)
    tr.weight_load_words = len(tiles) * spec.kernel
    tr.weight_words_read = tr.mac_stage_cycles
    tr.out_words_written = len(tiles) * sched.n_out
    tr.overhead_cycles = cal.dilated_depth + _exposed_load(
        [spec.kernel] * len(tiles), [sched.pair_count] * len(tiles))
    if detailed:
        out, _ = _lockstep_detailed(sched, x, lambda c, j: w[c, j], tiles, pe, zero_skip, fmt, events)
    else:
        out = sched.evaluate(x, w)
    return out, tr


def run_transposed_flow(spec: TransposedConv1D, x, w, *, pe=None, cal=None, zero_skip=True,
                        detailed=False, fmt=None, name="", events=None):
    pe = pe or PeArrayConfig()
    cal = cal or Calibration()
    x = _check_input(x, spec.in_ch, "transposed")
    if x.shape[1] == 0:
        raise ShapeError("transposed: empty input")
    w = np.asarray(w, dtype=np.float64).reshape(spec.weight_shape)
    if spec.kernel > pe.buffer_words:
        raise BufferOverflowError(f"{name or 'transposed'}: {spec.kernel} taps exceed {pe.buffer_words} weight words")
    sched = transposed_schedule(spec.kernel, spec.stride, x.shape[1], spec.padding)
    tiles = _tiles(spec.in_ch, pe.num_pes)
    tr = _lockstep_trace(name, spec.kind, sched, x, tiles, pe, zero_skip, repeats=spec.out_ch)
    passes = spec.out_ch * len(tiles)
    tr.weight_load_words = passes * spec.kernel
    tr.weight_words_read = tr.mac_stage_cycles
    tr.out_words_written = spec.out_ch * math.ceil(sched.n_out / pe.num_pes)
    tr.overhead_cycles = cal.transposed_depth + _exposed_load(
        [spec.kernel] * passes, [sched.pair_count] * passes)
    if detailed:
        out = np.zeros((spec.out_ch, sched.n_out))
        cycle = 0
        for o in range(spec.out_ch):
            partial, cycle = _lockstep_detailed(sched, x, lambda c, j: w[o, c, j], tiles, pe,
                                                zero_skip, fmt, events, cycle)
            for c in range(spec.in_ch):  # adder tree feeding the output accumulator, PE order
                out[o] += partial[c]
    else:
        out = sched.evaluate(x, w)
    return out, tr


def run_mask_flow(spec: ElementwiseMask, x, m, *, pe=None, cal=None, zero_skip=True, name="", **_):
    pe = pe or PeArrayConfig()
    cal = cal or Calibration()
    x = _check_input(x, spec.ch, "mask")
    m = np.asarray(m, dtype=np.float64)
    if m.shape != x.shape:
        raise ShapeError(f"mask: shape {m.shape} does not match input {x.shape}")
    tiles = _tiles(spec.ch, pe.num_pes)
    t = x.shape[1]
    tr = LayerTrace(name, spec.kind)
    tr.mac_stage_cycles = tr.dense_cycles = len(tiles) * t
    tr.dense_mac_events = x.size
    tr.mac_events = int(((x != 0) & (m != 0)).sum()) if zero_skip else x.size
    tr.gated_pe_cycles = tr.mac_stage_cycles * pe.num_pes - tr.mac_events
    tr.skipped_zero_count = tr.dense_mac_events - tr.mac_events
    tr.act_words_read = 2 * tr.mac_stage_cycles
    tr.out_words_written = tr.mac_stage_cycles
    tr.overhead_cycles = cal.mask_depth
    return x * m, tr


def run_normact(spec: NormAct, x, *, pe=None, cal=None, name="", **_):
    pe = pe or PeArrayConfig()
    cal = cal or Calibration()
    tr = LayerTrace(name, spec.kind)
    tr.overhead_cycles = cal.norm_pass_latency * math.ceil(spec.ch / pe.num_pes)
    return normact(x, spec.activation), tr


FLOWS = {
    "conv1d": run_conv1d_flow,
    "pointwise": run_pointwise_flow,
    "dilated": run_dilated_flow,
    "transposed": run_transposed_flow,
    "mask": run_mask_flow,
}


def run_flow(spec, x, w=None, **kw):
    if isinstance(spec, NormAct):
        return run_normact(spec, x, **kw)
    return FLOWS[spec.kind](spec, x, w, **kw)


# --------------------------------------------------------------------------
# whole network
# --------------------------------------------------------------------------


@dataclass
class SimResult:
    outputs: list[np.ndarray]
    trace: ScheduleTrace
    clock_hz: float
    frame_seconds: float

    @property
    def total_cycles(self) -> int:
        return self.trace.total_cycles

    @property
    def seconds(self) -> float:
        return self.total_cycles / self.clock_hz

    @property
    def realtime(self) -> bool:
        return self.seconds <= self.frame_seconds


def simulate_network(cfg: NetworkConfig, weights, x, quantize_values: bool = True,
                     zero_skip: bool = True, fmt=FP8_SHIFTED, pe: PeArrayConfig | None = None,
                     cal: Calibration | None = None) -> SimResult:
    """Run every layer through its dataflow and collect the cycle trace.

    With ``quantize_values`` the weights and every stored tensor are rounded
    through ``fmt``; accumulation stays wide.
    """
    pe = pe or PeArrayConfig.from_dict(cfg.pe_array)
    cal = cal or Calibration.from_dict(cfg.calibration)
    fmt = fmt if quantize_values else None
    if fmt is not None:
        weights = {name: quantize(weights[name], fmt) for name in weights}
    trace = ScheduleTrace()
    index = {}

    def run(layer, inputs, w):
        i = index.setdefault(layer.name, len(index))
        try:
            y, tr = run_flow(layer.spec, inputs, w, pe=pe, cal=cal, zero_skip=zero_skip, name=layer.name)
        except (ShapeError, BufferOverflowError, ValueError) as err:
            raise SimulationError(i, layer.name, err) from err
        trace.layers.append(tr)
        return y

    store = None if fmt is None else (lambda t: quantize(t, fmt))
    outputs = forward(cfg, weights, x, run, store)
    return SimResult(outputs, trace, pe.clock_hz, cfg.frame_samples / cfg.sample_rate)
