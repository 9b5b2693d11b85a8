from sepdla.verify import random_tiny_config, run_verify

import numpy as np


def test_seed_zero_passes():
    rep = run_verify(seed=0, cases=40, networks=2)
    assert rep.passed, rep.summary()
    assert "all equal" in rep.summary()


def test_other_seeds_pass():
    for seed in (1, 2):
        rep = run_verify(seed=seed, cases=15, networks=1)
        assert rep.passed, rep.summary()


def test_fault_injection_is_caught():
    rep = run_verify(seed=0, cases=20, inject_fault=True, networks=0)
    assert not rep.passed
    assert {f.check for f in rep.failures} <= {"dilated.schedule", "transposed.schedule"}
    assert "failed; first:" in rep.summary()
    assert "seed 0" in rep.summary()


def test_deterministic():
    a = run_verify(seed=5, cases=10, networks=1)
    b = run_verify(seed=5, cases=10, networks=1)
    assert (a.checks, a.failures) == (b.checks, b.failures)


def test_random_tiny_configs_valid():
    rng = np.random.default_rng(0)
    for _ in range(30):
        cfg = random_tiny_config(rng)
        assert cfg.R >= 1 and cfg.X >= 1
        assert all(f.kernel >= f.stride for f in cfg.encoder_filters)
