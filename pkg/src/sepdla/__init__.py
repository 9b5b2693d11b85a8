"""Desk-scale model of a sparse 8-PE accelerator for time-domain speech separation."""

from .minifloat import FP8_SHIFTED, FP8_STANDARD, FloatFormat, decode, encode, fp8_mul, quantize
from .model import (
    ConfigError, NetworkConfig, ShapeError, WeightBank, build_layers, builtin_config,
    count_macs, load_config, random_bank, weight_bytes,
)
from .refexec import ref_network
from .simcore import BufferOverflowError, PeArrayConfig, simulate_network

__version__ = "0.1.0"
