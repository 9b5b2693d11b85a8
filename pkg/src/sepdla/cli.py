"""Command-line entry point.

Exit codes:
    0  success
    2  bad command line (argparse)
    3  invalid config
    4  malformed or unreadable weight/input file
    5  shape mismatch or impossible shrink target
    6  buffer overflow in the simulator
    7  verification mismatch
    8  not real-time (only with --require-realtime)
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import fileio
from .compress import (
    ShrinkError, compress_pipeline, max_quant_error, quantize_bank, report as chain_report,
)
from .minifloat import FORMATS, format_from_name, format_name
from .model import (
    ConfigError, ShapeError, build_layers, count_macs, macs_by_layer, macs_by_section,
    random_bank, resolve_config, weight_bytes, weight_count_by_section,
)
from .simcore import BufferOverflowError, SimulationError, simulate_network
from .verify import run_verify

EXIT_OK, EXIT_CONFIG, EXIT_FILE, EXIT_SHAPE, EXIT_OVERFLOW, EXIT_VERIFY, EXIT_REALTIME = 0, 3, 4, 5, 6, 7, 8


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def emit(data: dict, as_json: bool, text: str, out=None):
    out = out or sys.stdout
    if as_json:
        out.write(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
    else:
        out.write(text.rstrip() + "\n")


def _bits(fmt):
    return 32 if fmt is None else fmt.total_bits


def _load_bank(args, cfg):
    if args.weights:
        bank = fileio.load_weights(args.weights)
        bank.check(cfg)
        return bank
    return random_bank(cfg, args.seed)


def _load_input(args, cfg):
    if getattr(args, "input", None):
        x = fileio.read_pcm16(args.input)
    else:
        x = fileio.synthetic_signal(args.synthetic, cfg.frame_samples, args.seed, cfg.sample_rate)
    n = cfg.frame_samples
    return np.pad(x[:n], (0, max(0, n - x.size)))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    cfg = resolve_config(args.config)
    fmt = format_from_name(args.format)
    naive = count_macs(cfg)
    dec = count_macs(cfg, decomposed=True)
    sections = macs_by_section(cfg)
    total = sum(sections.values())
    wsec = weight_count_by_section(cfg)
    data = {
        "config": cfg.name or args.config,
        "dims": cfg.label,
        "weights": sum(wsec.values()),
        "weight_bytes_fp32": weight_bytes(cfg, 32),
        "weight_bytes_format": weight_bytes(cfg, _bits(fmt)),
        "format": args.format,
        "gmacs_per_s_naive": naive / 1e9,
        "gmacs_per_s_decomposed": dec / 1e9,
        "decomposition_saving": 1 - dec / naive,
        "mac_share": {k: v / total for k, v in sections.items()},
        "weights_by_section": wsec,
    }
    if args.layers:
        t = cfg.frame_samples
        data["layers"] = {"naive": macs_by_layer(cfg, t), "decomposed": macs_by_layer(cfg, t, True)}
    lines = [
        f"config {data['config']} {cfg.label}",
        f"weights          {data['weights']:,} ({data['weight_bytes_fp32'] / 1e6:.3f} MB fp32, "
        f"{data['weight_bytes_format'] / 1e6:.3f} MB {args.format})",
        f"GMACs/s naive    {naive / 1e9:.3f}",
        f"GMACs/s decomp.  {dec / 1e9:.3f} (-{100 * data['decomposition_saving']:.2f}%)",
    ]
    for k, v in data["mac_share"].items():
        lines.append(f"  {k:<10} {100 * v:6.2f}% of MACs, {wsec[k]:,} weights")
    if args.layers:
        lines.append(f"per layer, one {cfg.frame_samples}-sample frame (naive / decomposed):")
        for name, m in data["layers"]["naive"].items():
            lines.append(f"  {name:<18} {m:>12,} {data['layers']['decomposed'][name]:>12,}")
    emit(data, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config)
    fmt = format_from_name(args.format)
    bank = _load_bank(args, cfg)
    x = _load_input(args, cfg)
    quant = not args.no_quantize and fmt is not None
    res = simulate_network(cfg, bank, x, quantize_values=quant, zero_skip=not args.no_zero_skip,
                           fmt=fmt)
    tot = res.trace.totals()
    broadcast = [l for l in res.trace.layers if l.kind in ("conv1d", "pointwise")]
    b_dense = sum(l.dense_cycles for l in broadcast)
    b_mac = sum(l.mac_stage_cycles for l in broadcast)
    data = {
        "config": cfg.name or args.config,
        "dims": cfg.label,
        "format": args.format if quant else "fp32",
        "zero_skip": not args.no_zero_skip,
        "layers": [l.to_dict() for l in res.trace.layers],
        "totals": tot,
        "by_kind": res.trace.by_kind(),
        "clock_hz": res.clock_hz,
        "total_cycles": res.total_cycles,
        "milliseconds": res.seconds * 1e3,
        "frame_milliseconds": res.frame_seconds * 1e3,
        "realtime": res.realtime,
        "realized_activation_sparsity": 1 - b_mac / b_dense if b_dense else 0.0,
        "inactive_pe_cycles": tot["gated_pe_cycles"],
        "weight_sparsity": bank.sparsity(),
        "compression": chain_report([
            ("fp32", weight_bytes(cfg, 32), count_macs(cfg)),
            ("stored", bank.storage_bytes(_bits(bank.fmt)), None),
            ("decomposed", None, count_macs(cfg, decomposed=True)),
        ]).to_dict(),
    }
    lines = [f"{'layer':<18}{'kind':<11}{'cycles':>10}{'mac':>10}{'dense':>10}{'MACs':>11}{'gated':>10}"]
    if args.layers:
        for l in res.trace.layers:
            lines.append(f"{l.name:<18}{l.kind:<11}{l.total_cycles:>10}{l.mac_stage_cycles:>10}"
                         f"{l.dense_cycles:>10}{l.mac_events:>11}{l.gated_pe_cycles:>10}")
    for kind, t in data["by_kind"].items():
        lines.append(f"{'[' + kind + ']':<18}{'':<11}{t['total_cycles']:>10}{t['mac_stage_cycles']:>10}"
                     f"{t['dense_cycles']:>10}{t['mac_events']:>11}{t['gated_pe_cycles']:>10}")
    lines += [
        f"total cycles {res.total_cycles:,} (MAC stage {tot['mac_stage_cycles']:,}, overhead {tot['overhead_cycles']:,})",
        f"time {data['milliseconds']:.3f} ms at {res.clock_hz / 1e6:g} MHz for a "
        f"{data['frame_milliseconds']:.1f} ms frame: {'real-time' if res.realtime else 'NOT real-time'}",
        f"activation zeros skipped in broadcast flows: {100 * data['realized_activation_sparsity']:.1f}%",
    ]
    emit(data, args.json, "\n".join(lines))
    if args.output:
        for s, y in enumerate(res.outputs):
            fileio.write_pcm16(f"{args.output}.s{s}.pcm", y)
    if args.require_realtime and not res.realtime:
        return EXIT_REALTIME
    return EXIT_OK


def cmd_compress(args) -> int:
    src = resolve_config(args.config)
    dst = resolve_config(args.target) if args.target else None
    fmt = format_from_name(args.format)
    bank = _load_bank(args, src)
    bank, rep = compress_pipeline(src, bank, dst, args.threshold, fmt)
    if args.output:
        fileio.save_weights(bank, args.output)
    data = rep.to_dict()
    data["output"] = args.output
    data["weight_sparsity"] = bank.sparsity()
    emit(data, args.json, rep.table() + (f"\nwrote {args.output}" if args.output else ""))
    return EXIT_OK


def cmd_quantize(args) -> int:
    cfg = resolve_config(args.config) if args.config else None
    if args.weights:
        bank = fileio.load_weights(args.weights)
    elif cfg is not None:
        bank = random_bank(cfg, args.seed)
    else:
        raise ConfigError("quantize needs --weights or --config")
    values = np.concatenate([bank[k].ravel() for k in bank])
    sweep = {name: max_quant_error(values, f) for name, f in FORMATS.items()}
    fmt = format_from_name(args.format)
    q = quantize_bank(bank, fmt)
    if args.output:
        fileio.save_weights(q, args.output)
    data = {"format": format_name(fmt), "max_abs_error": sweep, "bytes": q.storage_bytes(_bits(fmt)),
            "output": args.output}
    lines = [f"{name:<8} max |w - q(w)| = {err:.3g}" for name, err in sweep.items()]
    lines.append(f"{args.format}: {data['bytes']:,} bytes" + (f", wrote {args.output}" if args.output else ""))
    emit(data, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_verify(args) -> int:
    rep = run_verify(args.seed, args.cases, inject_fault=args.inject_fault)
    data = {"seed": rep.seed, "cases": rep.cases, "checks": rep.checks, "passed": rep.passed,
            "failures": [vars(f) for f in rep.failures[:10]]}
    emit(data, args.json, rep.summary())
    return EXIT_OK if rep.passed else EXIT_VERIFY


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepdla", description=__doc__.split("\n")[0] or None)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="YAML file or bundled name (baseline, pruned, tiny)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    fmt_choices = sorted(FORMATS)

    a = sub.add_parser("analyze", help="weight size and MAC counts")
    common(a)
    a.add_argument("--format", choices=fmt_choices, default="fp8b15")
    a.add_argument("--layers", action="store_true", help="per-layer MAC table")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run one frame through the cycle model")
    common(s)
    s.add_argument("--weights", help="SSW1 weight file (default: random weights from --seed)")
    s.add_argument("--input", help="raw 16-bit little-endian mono PCM")
    s.add_argument("--synthetic", choices=fileio.SIGNALS, default="speech",
                   help="generated input when --input is absent")
    s.add_argument("--format", choices=fmt_choices, default="fp8b15")
    s.add_argument("--no-zero-skip", action="store_true")
    s.add_argument("--no-quantize", action="store_true")
    s.add_argument("--require-realtime", action="store_true")
    s.add_argument("--layers", action="store_true", help="per-layer trace rows in the table")
    s.add_argument("--output", help="write separated sources as <prefix>.s<k>.pcm")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compress", help="shrink, prune and quantize weights")
    common(c)
    c.add_argument("--weights")
    c.add_argument("--target", help="config to shrink to")
    c.add_argument("--threshold", type=float, help="magnitude pruning threshold")
    c.add_argument("--format", choices=fmt_choices, default="fp8b15")
    c.add_argument("--output", help="SSW1 file to write")
    c.set_defaults(func=cmd_compress)

    q = sub.add_parser("quantize", help="quantization error sweep and conversion")
    common(q, config_required=False)
    q.add_argument("--weights")
    q.add_argument("--format", choices=fmt_choices, default="fp8b15")
    q.add_argument("--output")
    q.set_defaults(func=cmd_quantize)

    v = sub.add_parser("verify", help="cross-check schedules and flows against brute force")
    v.add_argument("--config", help="accepted for symmetry; random instances are used")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--cases", type=int, default=100)
    v.add_argument("--json", action="store_true")
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (fileio.MalformedFileError, OSError) as err:
        print(f"file error: {err}", file=sys.stderr)
        return EXIT_FILE
    except SimulationError as err:
        print(f"simulation error: {err}", file=sys.stderr)
        return EXIT_OVERFLOW if isinstance(err.cause, BufferOverflowError) else EXIT_SHAPE
    except BufferOverflowError as err:
        print(f"buffer overflow: {err}", file=sys.stderr)
        return EXIT_OVERFLOW
    except (ShapeError, ShrinkError) as err:
        print(f"shape error: {err}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
