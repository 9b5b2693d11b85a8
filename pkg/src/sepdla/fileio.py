"""Weight files (SSW1), PCM input and synthetic test signals.

SSW1 layout, little-endian throughout::

    magic  b"SSW1"
    u16    version (1)
    u32    record count
    record:
      u16  name length, then UTF-8 name
      u8   kind tag (0 conv1d, 1 dilated, 2 pointwise, 3 transposed)
      u8   ndim, then ndim x u32 dims
      u8   format tag (0 float32, 1 minifloat)
      minifloat only: u8 exponent bits, u8 mantissa bits, i16 bias, u8 subnormals
      u8   has_mask
      payload: prod(dims) x (float32 | u8 code | u16 code)
      mask:    ceil(prod(dims) / 8) bytes, LSB-first, 1 = kept
"""

from __future__ import annotations

import io
import math
import struct
from pathlib import Path

import numpy as np

from .minifloat import FloatFormat, decode_array, encode_array
from .model import WeightBank

MAGIC = b"SSW1"
VERSION = 1
KIND_TAGS = {"conv1d": 0, "dilated": 1, "pointwise": 2, "transposed": 3}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class MalformedFileError(ValueError):
    pass


def layer_kind(name: str) -> str:
    if name.startswith("enc."):
        return "conv1d"
    if name.startswith("dec."):
        return "transposed"
    if name.endswith(".dw"):
        return "dilated"
    return "pointwise"


def _payload_dtype(fmt: FloatFormat | None):
    if fmt is None:
        return np.dtype("<f4")
    return np.dtype("u1") if fmt.total_bits <= 8 else np.dtype("<u2")


def dump_weights(bank: WeightBank) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HI", VERSION, len(bank.weights)))
    fmt = bank.fmt
    for name, w in bank.weights.items():
        raw = name.encode()
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<BB", KIND_TAGS[layer_kind(name)], w.ndim))
        out.write(struct.pack(f"<{w.ndim}I", *w.shape))
        if fmt is None:
            out.write(struct.pack("<B", 0))
            payload = np.asarray(w, dtype="<f4")
        else:
            out.write(struct.pack("<BBBhB", 1, fmt.exponent_bits, fmt.mantissa_bits, fmt.bias,
                                  int(fmt.subnormals)))
            payload = encode_array(w, fmt).astype(_payload_dtype(fmt))
        mask = bank.masks.get(name)
        out.write(struct.pack("<B", mask is not None))
        out.write(payload.tobytes(order="C"))
        if mask is not None:
            out.write(np.packbits(mask.ravel().astype(np.uint8), bitorder="little").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFileError(f"truncated file while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_weights(data: bytes) -> WeightBank:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise MalformedFileError("bad magic; not an SSW1 weight file")
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise MalformedFileError(f"unsupported version {version}")
    weights, masks, fmt_seen = {}, {}, None
    for i in range(count):
        (n,) = r.unpack("<H", "name length")
        try:
            name = r.take(n, "name").decode()
        except UnicodeDecodeError:
            raise MalformedFileError(f"record {i}: name is not UTF-8") from None
        tag, ndim = r.unpack("<BB", f"{name} header")
        if tag not in TAG_KINDS:
            raise MalformedFileError(f"{name}: unknown kind tag {tag}")
        shape = r.unpack(f"<{ndim}I", f"{name} dims")
        (ftag,) = r.unpack("<B", f"{name} format")
        if ftag == 0:
            fmt = None
        elif ftag == 1:
            e, m, bias, sub = r.unpack("<BBhB", f"{name} format")
            try:
                fmt = FloatFormat(e, m, bias, bool(sub))
            except ValueError as err:
                raise MalformedFileError(f"{name}: {err}") from None
        else:
            raise MalformedFileError(f"{name}: unknown format tag {ftag}")
        if i and fmt != fmt_seen:
            raise MalformedFileError(f"{name}: mixed weight formats in one file")
        fmt_seen = fmt
        (has_mask,) = r.unpack("<B", f"{name} mask flag")
        size = math.prod(shape)
        dt = _payload_dtype(fmt)
        payload = np.frombuffer(r.take(size * dt.itemsize, f"{name} payload"), dtype=dt).reshape(shape)
        if fmt is None:
            weights[name] = payload.astype(np.float64)
        else:
            weights[name] = decode_array(payload, fmt).reshape(shape)
        if has_mask:
            bits = np.frombuffer(r.take(-(-size // 8), f"{name} mask"), dtype=np.uint8)
            masks[name] = np.unpackbits(bits, count=size, bitorder="little").astype(bool).reshape(shape)
    if r.pos != len(data):
        raise MalformedFileError(f"{len(data) - r.pos} trailing bytes after last record")
    return WeightBank(weights, masks, fmt_seen)


def save_weights(bank: WeightBank, path):
    Path(path).write_bytes(dump_weights(bank))


def load_weights(path) -> WeightBank:
    return parse_weights(Path(path).read_bytes())


# --------------------------------------------------------------------------
# audio
# --------------------------------------------------------------------------


def read_pcm16(path) -> np.ndarray:
    """Raw mono 16-bit little-endian PCM scaled to [-1, 1)."""
    data = Path(path).read_bytes()
    if len(data) % 2:
        raise MalformedFileError("PCM16 file has an odd number of bytes")
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0


def write_pcm16(path, x):
    x = np.clip(np.rint(np.asarray(x) * 32768.0), -32768, 32767).astype("<i2")
    Path(path).write_bytes(x.tobytes())


SIGNALS = ("sine", "noise", "sparse", "speech", "zeros")


def synthetic_signal(kind: str, n: int = 512, seed: int = 0, sample_rate: int = 16000) -> np.ndarray:
    """Deterministic test frames.

    ``speech`` is a two-tone mixture with light noise, ``sparse`` has half of
    its samples set to exactly zero.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate
    if kind == "sine":
        return 0.5 * np.sin(2 * np.pi * 440 * t)
    if kind == "noise":
        return 0.1 * rng.standard_normal(n)
    if kind == "speech":
        return 0.3 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1250 * t + 1.0) \
            + 0.05 * rng.standard_normal(n)
    if kind == "sparse":
        x = 0.2 * rng.standard_normal(n)
        x[rng.permutation(n)[: n // 2]] = 0.0
        return x
    if kind == "zeros":
        return np.zeros(n)
    raise ValueError(f"unknown signal {kind!r}; choose from {SIGNALS}")
