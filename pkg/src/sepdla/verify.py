"""Cross-oracle suite: decomposed schedules and simulator flows vs brute force."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import refexec
from .decompose import dilated_schedule, transposed_schedule
from .model import (
    Conv1D, DepthwiseDilated, EncoderFilter, NetworkConfig, Pointwise, TransposedConv1D,
    doubling_schedule, random_bank,
)
from .simcore import run_flow, simulate_network


@dataclass
class Mismatch:
    check: str
    case: int
    params: dict
    max_abs_diff: float


@dataclass
class VerifyReport:
    seed: int
    cases: int
    checks: int = 0
    failures: list[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        if self.passed:
            return f"verify: {self.checks} checks over {self.cases} cases, seed {self.seed}: all equal"
        f = self.failures[0]
        return (f"verify: {len(self.failures)} of {self.checks} checks failed; first: {f.check} "
                f"case {f.case} (seed {self.seed}) {f.params} max diff {f.max_abs_diff:g}")


def _corrupt(sched):
    """Shift one schedule entry so the decomposed result is wrong."""
    if sched.pair_count == 0:
        return sched
    if sched.length > 1:
        idx = sched.in_idx.copy()
        idx[0] = (idx[0] + 1) % sched.length
        return replace(sched, in_idx=idx)
    taps = sched.tap_idx.copy()
    taps[0] = (taps[0] + 1) % sched.kernel
    return replace(sched, tap_idx=taps)


def random_tiny_config(rng) -> NetworkConfig:
    stride = int(rng.integers(1, 4))
    kernels = sorted({int(rng.integers(stride, stride + 6)) for _ in range(int(rng.integers(1, 3)))})
    x = int(rng.integers(1, 4))
    return NetworkConfig(
        L=len(kernels), N=int(rng.integers(1, 6)), X=x, R=int(rng.integers(1, 3)),
        H=int(rng.integers(1, 10)), bottleneck=int(rng.integers(1, 6)),
        encoder_filters=tuple(EncoderFilter(k, stride) for k in kernels),
        dilation_schedule=doubling_schedule(x), kernel=int(rng.integers(1, 4)),
        num_sources=int(rng.integers(1, 3)), frame_samples=int(rng.integers(16, 48)),
        decoder_padding=str(rng.choice(["valid", "full"])), name="random")


def run_verify(seed: int = 0, cases: int = 100, inject_fault: bool = False,
               networks: int = 3) -> VerifyReport:
    rep = VerifyReport(seed, cases)
    streams = np.random.SeedSequence(seed).spawn(cases + networks)

    def check(name, case, params, got, want):
        rep.checks += 1
        got, want = np.asarray(got), np.asarray(want)
        if got.shape != want.shape or not np.array_equal(got, want):
            diff = float(np.max(np.abs(got - want))) if got.shape == want.shape else float("inf")
            rep.failures.append(Mismatch(name, case, params, diff))

    for case in range(cases):
        rng = np.random.default_rng(streams[case])
        k = int(rng.integers(1, 10))
        d = int(rng.integers(0, 8))
        s = int(rng.integers(1, min(3, k) + 1))
        ch = int(rng.integers(1, 11))
        padding = str(rng.choice(["valid", "same"]))
        span = k + (k - 1) * d
        t = int(rng.integers(span if padding == "valid" else 1, 65)) if span <= 64 or padding == "same" else None
        params = dict(K=k, d=d, s=s, C=ch, padding=padding)
        if t is not None:
            params["T"] = t
            dil = DepthwiseDilated(ch, k, d, padding)
            x = rng.standard_normal((ch, t)) * (rng.random((ch, t)) < 0.7)
            w = rng.standard_normal((ch, k))
            sched = dilated_schedule(k, d, t, padding)
            if inject_fault:
                sched = _corrupt(sched)
            want = refexec.ref_dilated(x, w, dil).output
            check("dilated.schedule", case, params, sched.evaluate(x, w), want)
            check("dilated.flow", case, params, run_flow(dil, x, w)[0], want)

        tt = int(rng.integers(1, 65))
        mode = str(rng.choice(["valid", "full"]))
        spec = TransposedConv1D(ch, int(rng.integers(1, 3)), k, s, mode)
        if spec.out_length(tt) >= 1:
            tp = dict(params, T=tt, padding=mode)
            x = rng.standard_normal((ch, tt)) * (rng.random((ch, tt)) < 0.7)
            w = rng.standard_normal(spec.weight_shape)
            sched = transposed_schedule(k, s, tt, mode)
            if inject_fault:
                sched = _corrupt(sched)
            want = refexec.ref_transposed(x, w, spec).output
            check("transposed.schedule", case, tp, sched.evaluate(x, w), want)
            check("transposed.flow", case, tp, run_flow(spec, x, w)[0], want)

        pw = Pointwise(ch, int(rng.integers(1, 20)))
        x = rng.standard_normal((ch, tt)) * (rng.random((ch, tt)) < 0.5)
        w = rng.standard_normal(pw.weight_shape)
        check("pointwise.flow", case, dict(C=ch, T=tt), run_flow(pw, x, w)[0],
              refexec.ref_pointwise(x, w, pw).output)

        stride = int(rng.integers(1, k + 1))
        cv = Conv1D(int(rng.integers(1, 4)), int(rng.integers(1, 12)), k, stride, 0, k - stride)
        x = rng.standard_normal((cv.in_ch, tt)) * (rng.random((cv.in_ch, tt)) < 0.6)
        w = rng.standard_normal(cv.weight_shape)
        if cv.out_length(tt) >= 1:
            check("conv1d.flow", case, dict(K=k, S=stride, T=tt), run_flow(cv, x, w)[0],
                  refexec.ref_conv1d(x, w, cv).output)

    for i in range(networks):
        rng = np.random.default_rng(streams[cases + i])
        cfg = random_tiny_config(rng)
        bank = random_bank(cfg, int(rng.integers(1 << 31)))
        x = rng.standard_normal(cfg.frame_samples)
        want = refexec.ref_network(cfg, bank, x)
        got = simulate_network(cfg, bank, x, quantize_values=False).outputs
        for s, (g, w) in enumerate(zip(got, want)):
            check("network", cases + i, dict(config=cfg.label, source=s), g, w)
    return rep
