"""Network description, layer list and analytic complexity accounting.

Tensors are plain ``numpy`` arrays of shape ``(channels, length)``.

The separation network is a multiresolution encoder (one strided 1-D conv
per filter length, outputs concatenated), a separator (a 1x1 bottleneck,
``R`` repeats of ``X`` blocks of 1x1 -> depthwise dilated -> 1x1, then a 1x1
mask head) and a decoder (one transposed conv per filter length and source,
branch outputs summed).

Dilation ``d`` counts the zeros inserted between adjacent kernel taps, so a
framework dilation factor equals ``d + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Union

import numpy as np
import yaml

SAMPLE_RATE = 16000
CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    """Invalid network configuration; ``line`` points into the source file."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ShapeError(ValueError):
    """Tensor shape inconsistent with a layer."""


# --------------------------------------------------------------------------
# layer specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv1D:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    pad_left: int = 0
    pad_right: int = 0

    kind = "conv1d"

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch, self.kernel)

    def out_length(self, t: int) -> int:
        span = t + self.pad_left + self.pad_right
        if span < self.kernel:
            return 0
        return (span - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class DepthwiseDilated:
    ch: int
    kernel: int
    dilation: int
    padding: str = "valid"  # or "same"

    kind = "dilated"

    @property
    def span(self) -> int:
        """Length of the zero-inserted kernel."""
        return self.kernel + (self.kernel - 1) * self.dilation

    @property
    def pads(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        left = (self.span - 1) // 2
        return left, self.span - 1 - left

    @property
    def weight_shape(self):
        return (self.ch, self.kernel)

    def out_length(self, t: int) -> int:
        if self.padding == "same":
            return t
        return max(t - self.span + 1, 0)


@dataclass(frozen=True)
class Pointwise:
    in_ch: int
    out_ch: int

    kind = "pointwise"

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch)

    def out_length(self, t: int) -> int:
        return t


@dataclass(frozen=True)
class TransposedConv1D:
    """Zero-insert ``stride - 1`` zeros between inputs, then correlate.

    ``valid`` keeps only windows fully inside the zero-inserted sequence;
    ``full`` pads ``kernel - 1`` zeros on both sides, giving the usual
    transposed-conv length ``(T - 1) * stride + kernel``.
    """

    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: str = "valid"  # or "full"

    kind = "transposed"

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch, self.kernel)

    @property
    def pad(self) -> int:
        return self.kernel - 1 if self.padding == "full" else 0

    def out_length(self, t: int) -> int:
        if t <= 0:
            return 0
        z = (t - 1) * self.stride + 1 + 2 * self.pad
        return max(z - self.kernel + 1, 0)


@dataclass(frozen=True)
class ElementwiseMask:
    ch: int

    kind = "mask"
    weight_shape = None

    def out_length(self, t: int) -> int:
        return t


@dataclass(frozen=True)
class NormAct:
    ch: int
    activation: str = "relu"  # relu | gln | gln_relu | sigmoid | identity

    kind = "normact"
    weight_shape = None

    def out_length(self, t: int) -> int:
        return t


LayerSpec = Union[Conv1D, DepthwiseDilated, Pointwise, TransposedConv1D, ElementwiseMask, NormAct]


@dataclass(frozen=True)
class Layer:
    name: str
    spec: LayerSpec
    section: str  # encoder | separator | decoder


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderFilter:
    kernel: int
    stride: int


@dataclass(frozen=True)
class NetworkConfig:
    L: int
    N: int
    X: int
    R: int
    H: int
    encoder_filters: tuple[EncoderFilter, ...]
    dilation_schedule: tuple[int, ...]
    num_sources: int = 2
    bottleneck: int | None = None
    kernel: int = 3
    sample_rate: int = SAMPLE_RATE
    frame_samples: int = 512
    separator_padding: str = "same"
    decoder_padding: str = "full"
    mask_activation: str = "relu"
    name: str = ""
    notes: str = ""
    calibration: dict = field(default_factory=dict, compare=False, hash=False)
    pe_array: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        self.validate()

    @property
    def B(self) -> int:
        """Width of the stream between separator blocks."""
        return self.bottleneck if self.bottleneck is not None else self.N

    @property
    def encoder_channels(self) -> int:
        return self.L * self.N

    @property
    def stride(self) -> int:
        return self.encoder_filters[0].stride

    @property
    def label(self) -> str:
        return f"({self.L}, {self.N}, {self.X}, {self.R}, {self.H})"

    def validate(self):
        for key in ("L", "N", "X", "R", "H", "num_sources", "kernel", "B", "sample_rate", "frame_samples"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if len(self.encoder_filters) != self.L:
            raise ConfigError(
                f"L={self.L} but {len(self.encoder_filters)} encoder filters given")
        if len({f.stride for f in self.encoder_filters}) != 1:
            raise ConfigError("encoder branches must share one stride so their outputs align")
        for f in self.encoder_filters:
            if f.kernel < 1 or not 1 <= f.stride <= f.kernel:
                raise ConfigError(f"bad encoder filter {f}")
        if len(self.dilation_schedule) != self.X:
            raise ConfigError(
                f"dilation_schedule has {len(self.dilation_schedule)} entries, X={self.X}")
        if any(d < 0 for d in self.dilation_schedule):
            raise ConfigError("dilations must be >= 0")
        if self.separator_padding not in ("valid", "same"):
            raise ConfigError(f"separator_padding must be valid|same, got {self.separator_padding!r}")
        if self.decoder_padding not in ("valid", "full"):
            raise ConfigError(f"decoder_padding must be valid|full, got {self.decoder_padding!r}")
        if self.mask_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown mask_activation {self.mask_activation!r}")

    def with_dims(self, **dims) -> "NetworkConfig":
        """Copy with some of L, N, X, R, H (and friends) replaced."""
        if "X" in dims and "dilation_schedule" not in dims:
            dims["dilation_schedule"] = doubling_schedule(dims["X"])
        if "L" in dims and "encoder_filters" not in dims:
            dims["encoder_filters"] = self.encoder_filters[: dims["L"]]
        return replace(self, **dims)


ACTIVATIONS = ("relu", "gln", "gln_relu", "sigmoid", "identity")


def doubling_schedule(x: int) -> tuple[int, ...]:
    """Zeros between taps for framework dilations 1, 2, 4, ... 2^(x-1)."""
    return tuple((1 << i) - 1 for i in range(x))


_CONFIG_KEYS = {
    "name", "notes", "L", "N", "X", "R", "H", "encoder_filters", "dilation_schedule",
    "num_sources", "bottleneck", "kernel", "sample_rate", "frame_samples",
    "separator_padding", "decoder_padding", "mask_activation", "calibration", "pe_array",
}


def _key_lines(node) -> dict[str, int]:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            lines[k.value] = k.start_mark.line + 1
    return lines


def config_from_dict(data: dict[str, Any], lines: dict[str, int] | None = None,
                     path: str | None = None) -> NetworkConfig:
    lines = lines or {}

    def fail(msg, key=None):
        raise ConfigError(msg, lines.get(key), path)

    if not isinstance(data, dict):
        fail("top level must be a mapping")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        key = sorted(unknown)[0]
        fail(f"unknown key {key!r}", key)
    for key in ("L", "N", "X", "R", "H", "encoder_filters"):
        if key not in data:
            fail(f"missing required key {key!r}")

    kwargs = dict(data)
    try:
        filters = tuple(EncoderFilter(int(f["kernel"]), int(f["stride"])) for f in data["encoder_filters"])
    except (TypeError, KeyError, ValueError):
        fail("encoder_filters must be a list of {kernel, stride} mappings", "encoder_filters")
    kwargs["encoder_filters"] = filters
    if "dilation_schedule" in data:
        try:
            kwargs["dilation_schedule"] = tuple(int(d) for d in data["dilation_schedule"])
        except (TypeError, ValueError):
            fail("dilation_schedule must be a list of integers", "dilation_schedule")
    else:
        kwargs["dilation_schedule"] = doubling_schedule(int(data["X"]))
    for key in ("calibration", "pe_array"):
        if key in kwargs and not isinstance(kwargs[key], dict):
            fail(f"{key} must be a mapping", key)
    for key in ("L", "N", "X", "R", "H", "num_sources", "bottleneck", "kernel",
                "sample_rate", "frame_samples"):
        if key in kwargs and kwargs[key] is not None and not isinstance(kwargs[key], int):
            fail(f"{key} must be an integer", key)
    try:
        return NetworkConfig(**kwargs)
    except ConfigError as err:
        key = next((k for k in lines if k in str(err)), None)
        raise ConfigError(str(err), lines.get(key), path) from None


def load_config(path) -> NetworkConfig:
    """Read a YAML network description (see configs/ for the schema)."""
    path = Path(path)
    text = path.read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML parse error: {getattr(err, 'problem', err)}", line, str(path)) from None
    return config_from_dict(data, _key_lines(node), str(path))


def builtin_config(name: str) -> NetworkConfig:
    """``baseline``, ``pruned`` or ``tiny`` from the bundled fixtures."""
    return load_config(CONFIG_DIR / f"{name}.yaml")


def resolve_config(name_or_path) -> NetworkConfig:
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_config(p)
    return builtin_config(str(name_or_path))


def dump_config(cfg: NetworkConfig) -> str:
    data = {
        "name": cfg.name, "L": cfg.L, "N": cfg.N, "X": cfg.X, "R": cfg.R, "H": cfg.H,
        "bottleneck": cfg.bottleneck, "kernel": cfg.kernel,
        "encoder_filters": [{"kernel": f.kernel, "stride": f.stride} for f in cfg.encoder_filters],
        "dilation_schedule": list(cfg.dilation_schedule), "num_sources": cfg.num_sources,
        "sample_rate": cfg.sample_rate, "frame_samples": cfg.frame_samples,
        "separator_padding": cfg.separator_padding, "decoder_padding": cfg.decoder_padding,
        "mask_activation": cfg.mask_activation,
    }
    if cfg.notes:
        data["notes"] = cfg.notes
    for key in ("calibration", "pe_array"):
        if getattr(cfg, key):
            data[key] = dict(getattr(cfg, key))
    return yaml.safe_dump(data, sort_keys=False)


# --------------------------------------------------------------------------
# layer list
# --------------------------------------------------------------------------


def block_prefix(r: int, x: int) -> str:
    return f"sep.r{r}.x{x}"


def build_layers(cfg: NetworkConfig) -> list[Layer]:
    """Deterministic layer order shared by every executor."""
    layers = []
    n, c, b, h = cfg.N, cfg.encoder_channels, cfg.B, cfg.H

    for i, f in enumerate(cfg.encoder_filters):
        # tail padding of kernel - stride keeps every branch at floor(T / stride) frames
        conv = Conv1D(1, n, f.kernel, f.stride, 0, f.kernel - f.stride)
        layers.append(Layer(f"enc.b{i}", conv, "encoder"))
        layers.append(Layer(f"enc.b{i}.act", NormAct(n, "relu"), "encoder"))

    layers.append(Layer("sep.in", Pointwise(c, b), "separator"))
    layers.append(Layer("sep.in.act", NormAct(b, "gln_relu"), "separator"))
    for r in range(cfg.R):
        for x, d in enumerate(cfg.dilation_schedule):
            p = block_prefix(r, x)
            layers += [
                Layer(f"{p}.pw1", Pointwise(b, h), "separator"),
                Layer(f"{p}.pw1.act", NormAct(h, "gln_relu"), "separator"),
                Layer(f"{p}.dw", DepthwiseDilated(h, cfg.kernel, d, cfg.separator_padding), "separator"),
                Layer(f"{p}.dw.act", NormAct(h, "gln_relu"), "separator"),
                Layer(f"{p}.pw2", Pointwise(h, b), "separator"),
                Layer(f"{p}.pw2.act", NormAct(b, "gln_relu"), "separator"),
            ]
    layers.append(Layer("sep.mask", Pointwise(b, cfg.num_sources * c), "separator"))
    layers.append(Layer("sep.mask.act", NormAct(cfg.num_sources * c, cfg.mask_activation), "separator"))
    for s in range(cfg.num_sources):
        layers.append(Layer(f"mask.s{s}", ElementwiseMask(c), "separator"))

    for s in range(cfg.num_sources):
        for i, f in enumerate(cfg.encoder_filters):
            spec = TransposedConv1D(n, 1, f.kernel, f.stride, cfg.decoder_padding)
            layers.append(Layer(f"dec.s{s}.b{i}", spec, "decoder"))
    _check_chain(layers, cfg)
    return layers


def _check_chain(layers, cfg):
    widths = {}
    for layer in layers:
        spec = layer.spec
        if isinstance(spec, NormAct):
            prev = widths[layer.name.rsplit(".", 1)[0]]
            if spec.ch != prev:
                raise ConfigError(f"{layer.name}: {spec.ch} channels after a {prev}-channel layer")
        out = getattr(spec, "out_ch", None) or getattr(spec, "ch", None)
        widths[layer.name] = out
    b, h = cfg.B, cfg.H
    for r in range(cfg.R):
        for x in range(cfg.X):
            p = block_prefix(r, x)
            if widths[f"{p}.pw1"] != h or widths[f"{p}.pw2"] != b:
                raise ConfigError(f"{p}: inconsistent block channel chain")


def weighted_layers(layers: list[Layer]) -> list[Layer]:
    return [l for l in layers if l.spec.weight_shape is not None]


def weight_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    return {l.name: l.spec.weight_shape for l in weighted_layers(build_layers(cfg))}


# --------------------------------------------------------------------------
# network walker shared by the reference executor and the simulator
# --------------------------------------------------------------------------


def forward(cfg: NetworkConfig, weights, x, run_layer: Callable, store: Callable | None = None):
    """Run the network on a 1-D frame ``x``; returns one waveform per source.

    ``run_layer(layer, inputs, weight)`` executes a single layer. ``store``
    is applied to every tensor written back to a buffer (after a conv and
    its normalisation/activation), e.g. for 8-bit quantisation.
    """
    store = store or (lambda t: t)
    layers = {l.name: l for l in build_layers(cfg)}
    x = store(np.asarray(x, dtype=np.float64).reshape(1, -1))
    frame_len = x.shape[1]

    def stage(name, inputs, weight=None):
        y = run_layer(layers[name], inputs, weight if weight is not None else weights.get(name))
        act = layers.get(name + ".act")
        if act is not None:
            y = run_layer(act, y, None)
        return store(y)

    branches = [stage(f"enc.b{i}", x) for i in range(cfg.L)]
    frames = min(b.shape[1] for b in branches)
    enc = np.concatenate([b[:, :frames] for b in branches], axis=0)

    y = stage("sep.in", enc)
    for r in range(cfg.R):
        for i in range(cfg.X):
            p = block_prefix(r, i)
            y = stage(f"{p}.pw1", y)
            y = stage(f"{p}.dw", y)
            y = stage(f"{p}.pw2", y)
    masks = stage("sep.mask", y)

    c = cfg.encoder_channels
    outputs = []
    for s in range(cfg.num_sources):
        masked = stage(f"mask.s{s}", enc, masks[s * c:(s + 1) * c])
        parts = [stage(f"dec.s{s}.b{i}", masked[i * cfg.N:(i + 1) * cfg.N])[0] for i in range(cfg.L)]
        wave = np.zeros(max(p.size for p in parts))
        for part in parts:
            wave[:part.size] += part
        out = np.zeros(frame_len)
        n = min(frame_len, wave.size)
        out[:n] = wave[:n]
        outputs.append(store(out.reshape(1, -1))[0])
    return outputs


def layer_lengths(cfg: NetworkConfig, samples: int) -> dict[str, int]:
    """Input length seen by every layer for a ``samples``-long frame."""
    layers = build_layers(cfg)
    lengths = {}
    frames = min(l.spec.out_length(samples) for l in layers if l.name.startswith("enc.b") and l.spec.kind == "conv1d")
    if frames < 1:
        raise ShapeError(f"{samples} samples are too short for the encoder")
    for layer in layers:
        if layer.section == "encoder":
            lengths[layer.name] = samples if layer.spec.kind == "conv1d" else frames
        else:
            lengths[layer.name] = frames
    return lengths


# --------------------------------------------------------------------------
# complexity accounting
# --------------------------------------------------------------------------


def dilated_valid_taps(spec: DepthwiseDilated, t: int) -> int:
    """Non-padding (output, tap) pairs of a depthwise dilated conv over all outputs."""
    left, _ = spec.pads
    n_out = spec.out_length(t)
    total = 0
    for j in range(spec.kernel):
        off = j * (spec.dilation + 1) - left  # input index = output index + off
        lo, hi = max(0, -off), min(n_out, t - off)
        total += max(0, hi - lo)
    return total


def transposed_valid_pairs(spec: TransposedConv1D, t: int) -> int:
    """(output, tap) pairs that land on a real input sample."""
    n_out = spec.out_length(t)
    total = 0
    for j in range(spec.kernel):
        # z-position n + j - pad must be a multiple of stride inside [0, (t-1)*stride]
        lo_pos = j - spec.pad
        first = max(0, lo_pos)
        last = min(n_out - 1 + lo_pos, (t - 1) * spec.stride)
        if last < first:
            continue
        first = -(-first // spec.stride) * spec.stride
        if last >= first:
            total += (last - first) // spec.stride + 1
    return total


def layer_macs(spec: LayerSpec, t: int, decomposed: bool = False) -> int:
    """Multiply-accumulates of one layer on a length-``t`` input.

    Naive counts include every multiply by an inserted or padded zero;
    decomposed counts keep only pairs touching real weights and inputs.
    """
    if isinstance(spec, Conv1D):
        return spec.out_ch * spec.in_ch * spec.kernel * spec.out_length(t)
    if isinstance(spec, Pointwise):
        return spec.out_ch * spec.in_ch * t
    if isinstance(spec, DepthwiseDilated):
        if decomposed:
            return spec.ch * dilated_valid_taps(spec, t)
        return spec.ch * spec.span * spec.out_length(t)
    if isinstance(spec, TransposedConv1D):
        if decomposed:
            return spec.out_ch * spec.in_ch * transposed_valid_pairs(spec, t)
        return spec.out_ch * spec.in_ch * spec.kernel * spec.out_length(t)
    if isinstance(spec, ElementwiseMask):
        return spec.ch * t
    return 0


def macs_by_layer(cfg: NetworkConfig, samples: int, decomposed: bool = False) -> dict[str, int]:
    lengths = layer_lengths(cfg, samples)
    return {l.name: layer_macs(l.spec, lengths[l.name], decomposed) for l in build_layers(cfg)}


def count_macs(cfg: NetworkConfig, seconds: float = 1.0, decomposed: bool = False) -> int:
    samples = int(round(seconds * cfg.sample_rate))
    return sum(macs_by_layer(cfg, samples, decomposed).values())


def macs_by_section(cfg: NetworkConfig, seconds: float = 1.0, decomposed: bool = False) -> dict[str, int]:
    samples = int(round(seconds * cfg.sample_rate))
    per_layer = macs_by_layer(cfg, samples, decomposed)
    out = {"encoder": 0, "separator": 0, "decoder": 0}
    for layer in build_layers(cfg):
        out[layer.section] += per_layer[layer.name]
    return out


def weight_count(cfg: NetworkConfig) -> int:
    return sum(math.prod(s) for s in weight_shapes(cfg).values())


def weight_count_by_section(cfg: NetworkConfig) -> dict[str, int]:
    out = {"encoder": 0, "separator": 0, "decoder": 0}
    for layer in weighted_layers(build_layers(cfg)):
        out[layer.section] += math.prod(layer.spec.weight_shape)
    return out


def weight_bytes(cfg: NetworkConfig, bits_per_weight: int = 32, sparsity: float = 0.0) -> int:
    """Weight storage; ``sparsity`` is the masked (pruned) fraction."""
    return int(round(weight_count(cfg) * (1.0 - sparsity) * bits_per_weight / 8))


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------


@dataclass
class WeightBank:
    """Per-layer weights plus optional keep-masks from unstructured pruning.

    ``masks[name]`` is boolean with ``True`` for kept elements. ``fmt`` is
    the minifloat format the values are representable in (``None`` for
    full precision).
    """

    weights: dict[str, np.ndarray]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    fmt: Any = None

    def __post_init__(self):
        for name, m in self.masks.items():
            if m.shape != self.weights[name].shape:
                raise ShapeError(f"{name}: mask shape {m.shape} != weight shape {self.weights[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        w = self.weights[name]
        m = self.masks.get(name)
        return w if m is None else np.where(m, w, 0.0)

    def get(self, name, default=None):
        return self[name] if name in self.weights else default

    def __contains__(self, name):
        return name in self.weights

    def __iter__(self) -> Iterator[str]:
        return iter(self.weights)

    def __len__(self):
        return len(self.weights)

    def copy(self) -> "WeightBank":
        return WeightBank({k: v.copy() for k, v in self.weights.items()},
                          {k: v.copy() for k, v in self.masks.items()}, self.fmt)

    def num_elements(self) -> int:
        return sum(w.size for w in self.weights.values())

    def kept_elements(self) -> int:
        return sum(int(self.masks[k].sum()) if k in self.masks else w.size
                   for k, w in self.weights.items())

    def sparsity(self) -> float:
        n = self.num_elements()
        return 1.0 - self.kept_elements() / n if n else 0.0

    def storage_bytes(self, bits_per_weight: int = 32) -> int:
        return int(round(self.kept_elements() * bits_per_weight / 8))

    def check(self, cfg: NetworkConfig):
        shapes = weight_shapes(cfg)
        missing = set(shapes) - set(self.weights)
        if missing:
            raise ShapeError(f"weights missing for {sorted(missing)[:3]}")
        for name, shape in shapes.items():
            if self.weights[name].shape != tuple(shape):
                raise ShapeError(f"{name}: weight shape {self.weights[name].shape}, expected {tuple(shape)}")


def random_bank(cfg: NetworkConfig, seed: int = 0, gain: float = 1.0) -> WeightBank:
    """Synthetic He-style weights, rounded to float32 so files round-trip."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        fan_in = math.prod(shape[1:]) if len(shape) > 1 else 1
        if len(shape) == 2 and name.endswith(".dw"):
            fan_in = shape[1]
        w = rng.standard_normal(shape) * gain * math.sqrt(2.0 / fan_in)
        weights[name] = w.astype(np.float32).astype(np.float64)
    return WeightBank(weights)
