import math

import numpy as np
import pytest

from sepdla.compress import (
    PruneSpec, ShrinkError, compress_pipeline, drop_branch, geometric_thresholds, max_quant_error,
    prune_schedule, quantize_bank, report, structured_shrink, unstructured_prune,
)
from sepdla.minifloat import FP4, FP8_SHIFTED, FP8_STANDARD, FP16
from sepdla.model import (
    EncoderFilter, NetworkConfig, WeightBank, builtin_config, count_macs, doubling_schedule,
    random_bank, weight_bytes, weight_shapes,
)


def test_baseline_to_pruned_size():
    base, pruned = builtin_config("baseline"), builtin_config("pruned")
    bank = structured_shrink(random_bank(base), base, pruned)
    assert bank.storage_bytes(32) == weight_bytes(pruned)
    assert weight_bytes(base) / 1e6 == pytest.approx(15.6, rel=0.10)
    assert bank.storage_bytes(32) / 1e6 == pytest.approx(3.56, rel=0.10)


def test_identity_shrink():
    cfg = builtin_config("tiny")
    bank = random_bank(cfg)
    out = structured_shrink(bank, cfg, cfg)
    assert all(np.array_equal(out[k], bank[k]) for k in bank)


def _cfg(n, b, h, x=2, r=2, filters=((4, 2), (8, 2))):
    return NetworkConfig(L=len(filters), N=n, X=x, R=r, H=h, bottleneck=b, kernel=3,
                         encoder_filters=tuple(EncoderFilter(*f) for f in filters),
                         dilation_schedule=doubling_schedule(x))


def test_tiny_channel_slice_by_hand():
    src, dst = _cfg(4, 4, 6), _cfg(2, 2, 3, x=1, r=1)
    bank = WeightBank({k: np.arange(np.prod(s), dtype=float).reshape(s) for k, s in weight_shapes(src).items()})
    out = structured_shrink(bank, src, dst)
    assert out["enc.b1"].shape == (2, 1, 8)
    # separator input keeps channels 0,1 of branch 0 and 0,1 of branch 1 (source columns 0,1,4,5)
    assert np.array_equal(out["sep.in"], bank["sep.in"][:2][:, [0, 1, 4, 5]])
    # mask head rows: source s, branch b, channel c -> s*8 + b*4 + c
    assert np.array_equal(out["sep.mask"][:, 0], bank["sep.mask"][[0, 1, 4, 5, 8, 9, 12, 13], 0])
    assert "sep.r1.x0.pw1" not in out and "sep.r0.x1.dw" not in out
    assert out.num_elements() == sum(np.prod(s) for s in weight_shapes(dst).values())


def test_branch_variants():
    src = _cfg(4, 4, 6)
    bank = random_bank(src)
    for which, kept in (("long", 4), ("short", 8)):
        dst = drop_branch(src, which)
        out = structured_shrink(bank, src, dst)
        assert dst.L == 1 and dst.encoder_filters[0].kernel == kept
        assert np.array_equal(out["enc.b0"], bank["enc.b0" if kept == 4 else "enc.b1"])


def test_incompatible_target():
    with pytest.raises(ShrinkError):
        structured_shrink(random_bank(_cfg(2, 2, 3)), _cfg(2, 2, 3), _cfg(4, 2, 3))
    with pytest.raises(ShrinkError):
        structured_shrink(random_bank(_cfg(2, 2, 3)), _cfg(2, 2, 3), _cfg(2, 2, 3, filters=((6, 2),)))


def test_shrink_then_count_equals_direct():
    src, dst = builtin_config("baseline"), builtin_config("pruned")
    bank = structured_shrink(random_bank(src), src, dst)
    bank.check(dst)
    assert count_macs(dst) < count_macs(src)


def test_prune_threshold_examples():
    bank = WeightBank({"a": np.array([0.1, -0.5, 0.02])})
    assert unstructured_prune(bank, 0.0).sparsity() == 0.0
    assert unstructured_prune(bank, math.inf).sparsity() == 1.0
    out = unstructured_prune(bank, 0.05)
    assert out.masks["a"].tolist() == [True, True, False]
    assert out.sparsity() == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        unstructured_prune(bank, -1)


def test_sparsity_monotone_in_threshold():
    bank = random_bank(builtin_config("tiny"))
    s = [unstructured_prune(bank, t).sparsity() for t in np.linspace(0, 2, 15)]
    assert all(a <= b for a, b in zip(s, s[1:]))


def test_prune_schedule_hook_stops():
    bank = random_bank(builtin_config("tiny"))
    ts = geometric_thresholds(0.05, 2.0, 6)
    best, steps = prune_schedule(bank, ts, evaluate=lambda b: 1 - b.sparsity(), min_score=0.5)
    assert not steps[-1].accepted
    assert best.sparsity() <= 0.5
    assert all(s.accepted for s in steps[:-1])
    with pytest.raises(ValueError):
        PruneSpec(thresholds=[0.2, 0.1])


def test_quantize_bank_lossless_and_masks():
    vals = np.array([0.5, -0.25, 0.0, 1.875])
    bank = WeightBank({"a": vals}, {"a": np.array([True, True, False, True])})
    q = quantize_bank(bank, FP8_SHIFTED)
    assert np.array_equal(q["a"], [0.5, -0.25, 0.0, 1.875])
    assert q.fmt == FP8_SHIFTED


def test_quantize_sweep_error_ordering(rng):
    w = rng.uniform(-1, 1, 5000)
    errs = [max_quant_error(w, f) for f in (FP4, FP8_SHIFTED, FP16)]
    assert errs[0] >= errs[1] >= errs[2]


def test_shifted_bias_helps_small_weights(rng):
    w = rng.uniform(-1, 1, 5000) * rng.choice([1, 0.1, 0.01], 5000)
    assert max_quant_error(w, FP8_SHIFTED) <= max_quant_error(w, FP8_STANDARD)


def test_quantize_respects_saturation(rng):
    q = quantize_bank(WeightBank({"a": rng.standard_normal(100) * 10}), FP8_SHIFTED)
    assert np.max(np.abs(q["a"])) <= FP8_SHIFTED.max_value


def test_report_weight_chain():
    rep = report([("baseline", 15.6e6, None), ("structured", 3.56e6, None), ("unstructured", 2.848e6, None)])
    r = dict(rep.weight_reductions)
    assert round(100 * r["structured"], 2) == 77.18
    assert round(100 * r["unstructured"], 2) == 20.0
    assert round(100 * rep.overall_weight_reduction, 1) == 81.7
    q = report([("baseline", 15.6e6, None), ("pruned", 2.848e6, None), ("8-bit", 2.848e6 / 4, None)])
    assert round(100 * q.overall_weight_reduction, 2) == 95.44


def test_report_mac_chain_target_baseline():
    rep = report([("baseline", None, 17.99e9), ("structured", None, 6.1e9), ("decomposed", None, 1.78e9)])
    r = dict(rep.mac_reductions)
    assert round(100 * r["decomposed"], 1) == 70.8
    assert round(100 * r["structured"], 2) == 65.71


def test_report_mac_chain_consistent_baseline():
    # 17.79 is the baseline value that reproduces both 65.71% and 93.88%
    rep = report([("baseline", None, 17.79e9), ("structured", None, 6.1e9), ("decomposed", None, 1.78e9),
                  ("zero-skip", None, 1.78e9 * (1 - 0.3882))])
    r = dict(rep.mac_reductions)
    assert round(100 * r["structured"], 2) == 65.71
    assert round(100 * rep.overall_mac_reduction, 2) == 93.88


def test_report_single_and_chain_product():
    assert report([("only", 1.0, 2.0)]).overall_weight_reduction == 0.0
    same = report([("a", 5.0, None), ("b", 5.0, None)])
    assert same.overall_weight_reduction == 0.0
    rep = report([("a", 10.0, None), ("b", 7.0, None), ("c", 3.5, None), ("d", 1.2, None)])
    prod = np.prod([1 - r for _, r in rep.weight_reductions])
    assert abs(prod - 1.2 / 10.0) < 1e-12
    with pytest.raises(ValueError):
        report([])


def test_pipeline_report():
    src, dst = builtin_config("baseline"), builtin_config("pruned")
    bank, rep = compress_pipeline(src, random_bank(src), dst, 0.02, FP8_SHIFTED)
    names = [s.name for s in rep.stages]
    assert names == ["baseline", "structured", "unstructured", "quantized", "decomposed"]
    assert rep.stages[3].weight_bytes == bank.kept_elements()
    assert "structured" in rep.table()
