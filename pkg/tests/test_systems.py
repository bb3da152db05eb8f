import numpy as np
import pytest

from imooe.datasets import (SYSTEMS, Environment, ParamRange, SystemSpec,
                            get_system, sample_environments,
                            validate_environment)


def test_dr_train_ranges():
    envs = sample_environments("dr", "train_id", 16, seed=11)
    for e in envs:
        assert 1e-3 <= e.p["D_u"] <= 2e-3
        assert 5e-3 <= e.p["D_v"] <= 1e-2
        assert 5e-3 <= e.p["k"] <= 1e-2


def test_ns_ood_union_and_fixed_w():
    envs = sample_environments("ns", "test_ood", 16, seed=4)
    for e in envs:
        nu = e.p["nu"]
        assert (5e-6 <= nu <= 8e-6) or (1.2e-3 <= nu <= 2e-3)
        assert e.f_desc["w"] == 2.0


def test_ood_union_hits_both_intervals():
    envs = sample_environments("ns", "test_ood", 64, seed=0)
    lows = sum(1 for e in envs if e.p["nu"] < 1e-3)
    assert 0 < lows < 64


def test_sampling_deterministic():
    a = sample_environments("hc", "train_id", 8, seed=99)
    b = sample_environments("hc", "train_id", 8, seed=99)
    assert [e.p for e in a] == [e.p for e in b]
    assert [e.f_desc for e in a] == [e.f_desc for e in b]
    assert [e.seed for e in a] == [e.seed for e in b]


def test_splits_use_disjoint_ranges():
    for system in SYSTEMS.values():
        for name in system.param_names:
            id_r = system.id_ranges[name]
            for lo, hi in system.ood_ranges[name].intervals:
                assert hi <= id_r.lo or lo >= id_r.hi


def test_overlapping_ranges_rejected():
    with pytest.raises(ValueError, match="overlaps"):
        SystemSpec(system_id="dr", channels=2, domain=(2.0, 2.0), t_end=20.0,
                   n_t=21, param_names=("D_u",), forcing_names=(),
                   id_ranges={"D_u": ParamRange(((1e-3, 2e-3),))},
                   ood_ranges={"D_u": ParamRange(((1.5e-3, 3e-3),))})


def test_horizons_match_configuration():
    expected = {"dr": (21, 20.0), "ns": (31, 50.0), "bg": (21, 1.0),
                "sw": (21, 1.0), "hc": (21, 5.0)}
    for sid, (n_t, t_end) in expected.items():
        system = get_system(sid)
        assert (system.n_t, system.t_end) == (n_t, t_end)


def test_unknown_system_and_split():
    with pytest.raises(ValueError):
        get_system("xx")
    with pytest.raises(ValueError):
        sample_environments("dr", "validation", 2, seed=0)
    with pytest.raises(ValueError):
        sample_environments("dr", "train_id", 0, seed=0)


def test_validate_environment_flags_bad_params():
    env = sample_environments("dr", "train_id", 1, seed=0)[0]
    validate_environment(env)
    bad = Environment(env_id=0, system_id="dr",
                      p={**env.p, "D_u": 5e-3}, f_desc={}, split="train_id",
                      seed=env.seed)
    with pytest.raises(ValueError, match="outside"):
        validate_environment(bad)


def test_param_range_sampling_stays_inside():
    r = ParamRange(((0.0, 1.0), (10.0, 11.0)))
    rng = np.random.default_rng(0)
    draws = [r.sample(rng) for _ in range(200)]
    assert all(r.contains(d) for d in draws)
    assert any(d < 2 for d in draws) and any(d > 9 for d in draws)
