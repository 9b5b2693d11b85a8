"""Acceptance criteria 1-8. Each test records a PASS/FAIL line in the summary."""

import time
from fractions import Fraction

import numpy as np

from oracles import fp8_table, nearest_code
from sepdla.compress import report
from sepdla.decompose import dilated_schedule, transposed_schedule
from sepdla.fileio import synthetic_signal
from sepdla.minifloat import FP8_SHIFTED, FP8_STANDARD, decode, decode_table, encode, fp8_mul, quantize
from sepdla.model import (
    DepthwiseDilated, Pointwise, TransposedConv1D, WeightBank, builtin_config, count_macs,
    random_bank, weight_bytes,
)
from sepdla.refexec import ref_dilated, ref_network, ref_transposed
from sepdla.simcore import detect_nonzeros, run_flow, simulate_network
from sepdla.verify import random_tiny_config


def test_criterion_1_decomposition_equivalence(record):
    rng = np.random.default_rng(1)
    start, bad, done = time.perf_counter(), [], 0
    while done < 200:
        k, d = int(rng.integers(1, 10)), int(rng.integers(0, 8))
        s = int(rng.integers(1, min(3, k) + 1))
        ch, t = int(rng.integers(1, 5)), int(rng.integers(1, 65))
        span = k + (k - 1) * d
        if span <= t:
            x, w = rng.standard_normal((ch, t)), rng.standard_normal((ch, k))
            got = dilated_schedule(k, d, t).evaluate(x, w)
            if not np.array_equal(got, ref_dilated(x, w, DepthwiseDilated(ch, k, d)).output):
                bad.append(("dilated", k, d, t))
        spec = TransposedConv1D(ch, 1, k, s, "valid")
        if spec.out_length(t) < 1:
            continue
        x, w = rng.standard_normal((ch, t)), rng.standard_normal(spec.weight_shape)
        got = transposed_schedule(k, s, t).evaluate(x, w)
        if not np.array_equal(got, ref_transposed(x, w, spec).output):
            bad.append(("transposed", k, s, t))
        done += 1
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 10
    record(1, ok, f"200 instances, {len(bad)} mismatches, {elapsed:.2f} s")
    assert ok, bad[:5]


def test_criterion_2_reduction_ratios(record):
    dil = 1 - dilated_schedule(3, 2, 64).mac_ratio()
    # valid outputs only; the edge outputs of full mode see fewer taps
    tr = 1 - transposed_schedule(9, 3, 64).mac_ratio()
    ok = dil == Fraction(4, 7) and tr == Fraction(2, 3)
    record(2, ok, f"dilated {dil} ({float(dil):.1%}), transposed {tr} ({float(tr):.1%})")
    assert ok


def test_criterion_3_minifloat_exhaustive(record):
    start = time.perf_counter()
    table = fp8_table(15)
    codes = np.arange(256)
    vals = np.array([decode(c) for c in codes])
    ok_decode = np.array_equal(vals, table) and np.array_equal(decode_table(FP8_SHIFTED), table)
    ok_round = all(encode(v) == nearest_code(v, 15) for v in vals)
    ok_round &= all(decode(encode(v)) == v for v in vals)
    # every product pair against the double-precision product of decoded values
    prod = np.outer(table, table)
    fast = np.array([[fp8_mul(a, b) for b in range(256)] for a in range(256)])
    ok_mul = np.array_equal(fast, prod)
    normal = [c for c in range(256) if (c >> 3) & 0xF]
    ok_shift = all(decode(c, FP8_SHIFTED) == decode(c, FP8_STANDARD) * 2.0 ** -8 for c in normal)
    elapsed = time.perf_counter() - start
    ok = ok_decode and ok_round and ok_mul and ok_shift and elapsed < 1
    record(3, ok, f"decode {ok_decode}, round-trip {ok_round}, 65536 mul {ok_mul}, "
                  f"bias shift {ok_shift}, {elapsed:.2f} s")
    assert ok


def test_criterion_4_zero_skipping(record):
    g = detect_nonzeros([18, -2, 23, 4, 0, -3, 2, 0])
    ok_example = g.pairs() == [(1, 18), (2, -2), (3, 23), (4, 4), (6, -3), (7, 2)]
    rng = np.random.default_rng(4)
    spec = Pointwise(8, 1)
    ok_groups = True
    for _ in range(1000):
        x = rng.standard_normal((8, 1)) * (rng.random((8, 1)) < rng.random())
        _, tr = run_flow(spec, x, rng.standard_normal((1, 8)))
        ok_groups &= tr.mac_stage_cycles == np.count_nonzero(x)
    cfg = builtin_config("tiny")
    bank = random_bank(cfg, 2)
    ok_inv = True
    for kind in ("speech", "sparse", "zeros"):
        x = synthetic_signal(kind, cfg.frame_samples, seed=1)
        on = simulate_network(cfg, bank, x, zero_skip=True)
        off = simulate_network(cfg, bank, x, zero_skip=False)
        ok_inv &= all(np.array_equal(a, b) for a, b in zip(on.outputs, off.outputs))
        ok_inv &= on.total_cycles <= off.total_cycles
    ok = ok_example and ok_groups and ok_inv
    record(4, ok, f"example pairs {ok_example}, 1000 groups {ok_groups}, on/off invariant {ok_inv}")
    assert ok


def test_criterion_5_simulator_vs_reference(record):
    rng = np.random.default_rng(5)
    exact = 0
    for _ in range(50):
        cfg = random_tiny_config(rng)
        bank = random_bank(cfg, int(rng.integers(1 << 31)))
        x = rng.standard_normal(cfg.frame_samples)
        sim = simulate_network(cfg, bank, x, quantize_values=False).outputs
        exact += all(np.array_equal(a, b) for a, b in zip(sim, ref_network(cfg, bank, x)))
    quant = 0
    for _ in range(10):
        cfg = random_tiny_config(rng)
        bank = random_bank(cfg, int(rng.integers(1 << 31)), gain=0.3)
        x = 0.5 * rng.standard_normal(cfg.frame_samples)
        sim = simulate_network(cfg, bank, x, quantize_values=True).outputs
        qbank = WeightBank({k: quantize(v) for k, v in bank.weights.items()})
        ref = ref_network(cfg, qbank, x, fmt=FP8_SHIFTED)
        quant += all(np.array_equal(a, b) for a, b in zip(sim, ref))
    ok = exact == 50 and quant == 10
    record(5, ok, f"{exact}/50 unquantized exact, {quant}/10 quantized exact")
    assert ok


def test_criterion_6_compression_arithmetic(record):
    w = report([("baseline", 15.6e6, None), ("structured", 3.56e6, None),
                ("unstructured", 2.848e6, None), ("8-bit", 2.848e6 / 4, None)])
    m = report([("baseline", None, 17.99e9), ("structured", None, 6.1e9),
                ("decomposed", None, 1.78e9)])
    wr, mr = dict(w.weight_reductions), dict(m.mac_reductions)
    got = {
        "77.18": round(100 * wr["structured"], 2),
        "20": round(100 * wr["unstructured"], 2),
        "95.44": round(100 * w.overall_weight_reduction, 2),
        "65.71": round(100 * mr["structured"], 2),
        "70.8": round(100 * mr["decomposed"], 1),
    }
    misses = {k: v for k, v in got.items() if float(k) != v}
    ok = not misses
    record(6, ok, "all stage reductions match" if ok else f"mismatches (printed: got) {misses}")
    assert ok, misses


def test_criterion_7_baseline_complexity(record):
    cfg = builtin_config("baseline")
    mb = weight_bytes(cfg) / 1e6
    gmacs = count_macs(cfg) / 1e9
    ok = abs(mb / 15.6 - 1) <= 0.10 and abs(gmacs / 17.99 - 1) <= 0.10
    record(7, ok, f"{mb:.2f} MB (15.6), {gmacs:.2f} GMACs/s (17.99)")
    assert ok


def test_criterion_8_cycle_budget(record):
    cfg = builtin_config("pruned")
    assert cfg.calibration.get("version") == 1
    x = synthetic_signal("speech", cfg.frame_samples, seed=0)
    res = simulate_network(cfg, random_bank(cfg, 0), x)
    cycles, ms = res.total_cycles, 1e3 * res.seconds
    ok = abs(cycles / 4.391311e6 - 1) <= 0.15 and abs(ms / 29.275 - 1) <= 0.15
    record(8, ok, f"{cycles / 1e6:.3f} M cycles (4.391311), {ms:.3f} ms (29.275), "
                  f"real-time {res.realtime}")
    assert ok
