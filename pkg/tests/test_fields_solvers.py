import numpy as np
import pytest

from imooe.datasets import (Environment, SolverBlowupError, get_system,
                            hc_coefficient_field, initial_condition,
                            sample_environments, simulate, sw_dam_profile)
from imooe.datasets.fields import DR_SQUARE_SIZE


def env_of(system_id, seed=0, split="train_id"):
    return sample_environments(system_id, split, 1, seed=seed)[0]


def test_dr_ic_zero_outside_squares():
    u0 = initial_condition(env_of("dr"), 0, resolution=64)
    covered = (u0 != 0).mean()
    # six 0.2x0.2 squares on [0,2]^2 cover at most 6% of the area
    assert 0 < covered <= 6 * (DR_SQUARE_SIZE / 2.0) ** 2 + 0.01
    assert np.abs(u0).max() <= 1.0


def test_dr_ic_deterministic():
    env = env_of("dr", seed=3)
    a = initial_condition(env, 5, resolution=32)
    b = initial_condition(env, 5, resolution=32)
    assert np.array_equal(a, b)
    c = initial_condition(env, 6, resolution=32)
    assert not np.array_equal(a, c)


def test_sw_profile_center_and_corner():
    # closed-form radial profile evaluated directly
    res, lx = 64, 5.0
    dx = lx / res
    env = Environment(0, "sw", {"radius": 0.3}, {}, "train_id", 1)
    h0 = initial_condition(env, 0, resolution=res)[0]
    center = res // 2
    assert abs(h0[center, center] - 2.0) <= 1e-6
    assert abs(h0[0, 0] - 1.0) <= 1e-6
    r = np.hypot(dx * (np.arange(res)[None, :] - center),
                 dx * (np.arange(res)[:, None] - center))
    assert np.allclose(h0, sw_dam_profile(r, 0.3, dx))


def test_bg_ic_is_band_limited_superposition():
    u0 = initial_condition(env_of("bg", seed=2), 0, resolution=64)
    spec = np.fft.fft2(u0[0])
    k = np.abs(np.fft.fftfreq(64) * 64)
    high = (k[None, :] > 3) | (k[:, None] > 3)
    assert np.abs(spec[high]).max() < 1e-9 * np.abs(spec).max()


def test_hc_ic_zero_state_positive_coefficient():
    env = env_of("hc", seed=5)
    u0 = initial_condition(env, 0, resolution=32)
    assert np.all(u0 == 0)
    a = hc_coefficient_field(env, 0, resolution=32)
    assert (a > 0).all()
    assert np.array_equal(a, hc_coefficient_field(env, 0, resolution=32))


def test_ns_ic_unit_std_zero_mean():
    u0 = initial_condition(env_of("ns", seed=1), 0, resolution=64)
    assert abs(u0.std() - 1.0) < 1e-12
    assert abs(u0.mean()) < 1e-12


def test_bg_zero_ic_stays_zero():
    env = env_of("bg", seed=7)
    tr = simulate(env, 0, resolution=16, u0=np.zeros((2, 16, 16)), precision="f64")
    assert np.all(tr.u == 0.0)


def test_trajectory_shapes_and_metadata():
    for sid in ("dr", "sw", "hc"):
        system = get_system(sid)
        tr = simulate(env_of(sid, seed=1), 0, resolution=16)
        assert tr.u.shape == (system.n_t, system.channels, 16, 16)
        assert tr.u.dtype == np.float32
        assert np.isfinite(tr.u).all()
        assert tr.dt_saved == pytest.approx(system.t_end / (system.n_t - 1))
        assert tr.dx == pytest.approx(system.domain[0] / 16)


def test_simulation_deterministic():
    env = env_of("dr", seed=9)
    a = simulate(env, 3, resolution=16)
    b = simulate(env, 3, resolution=16)
    assert np.array_equal(a.u, b.u)


def test_sw_mass_conserved():
    env = Environment(0, "sw", {"radius": 0.4}, {}, "train_id", 2)
    tr = simulate(env, 0, resolution=32, precision="f64")
    mass = tr.u[:, 0].sum(axis=(1, 2))
    assert np.abs(mass - mass[0]).max() / mass[0] <= 1e-6


def test_ns_incompressibility():
    # velocity recovered from the streamfunction is divergence-free in spectral space
    from imooe.datasets.solvers import _ns_velocity, _wavenumbers
    rng = np.random.default_rng(0)
    res = 32
    w = rng.standard_normal((res, res))
    kx, ky, ksq, kxd, kyd = _wavenumbers(res, 1.0)
    u, v = _ns_velocity(np.fft.fft2(w), kxd, kyd, ksq)
    div_hat = 1j * kxd * np.fft.fft2(u) + 1j * kyd * np.fft.fft2(v)
    scale = np.linalg.norm(np.fft.fft2(w))
    assert np.linalg.norm(div_hat) / scale <= 1e-10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_location():
    # a cubic reaction on a huge state overflows inside the first substep
    env = env_of("dr", seed=2)
    with pytest.raises(SolverBlowupError) as err:
        simulate(env, 0, resolution=16, u0=np.full((2, 16, 16), 1e200))
    assert err.value.saved_step >= 1
    assert err.value.substep >= 0
    assert "env 0" in str(err.value)
    assert "D_u" in str(err.value)


def test_float32_overflow_flagged():
    # bounded at f64 but outside the float32 range: still rejected
    env = Environment(0, "hc", {"a_sigma": 0.0, "a_scale": 1.0},
                      {"m1": 1.0, "m2": 6.0, "m3": 1.0, "A": 1e300},
                      "train_id", 3)
    with pytest.raises(SolverBlowupError):
        simulate(env, 0, resolution=16)
