"""Initial-condition and random-field generators for the five systems.

All draws come from a generator seeded by (env.seed, traj_seed), so the same
pair always reproduces the same field bit for bit.
"""
from __future__ import annotations

import numpy as np

from .systems import Environment, get_system, trajectory_rng

# Defaults for the heat-conduction coefficient field a(x) = scale * exp(sigma * GRF).
# Overridable through env.p ("a_sigma", "a_scale") for controlled experiments.
HC_A_SIGMA = 0.3
HC_A_SCALE = 1.0
DR_SQUARE_SIZE = 0.2
DR_N_SQUARES = 6


def power_law_grf(h: int, w: int, rng: np.random.Generator, *,
                  alpha: float = 2.5, tau: float = 7.0) -> np.ndarray:
    """Periodic Gaussian random field with power spectrum ~ (4pi^2|k|^2 + tau^2)^(-alpha).

    White noise shaped in Fourier space; the DC mode is removed and the result
    is normalized to unit standard deviation.
    """
    noise = rng.standard_normal((h, w))
    spec = np.fft.fft2(noise)
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    ksq = kx[None, :] ** 2 + ky[:, None] ** 2
    spec *= (4.0 * np.pi**2 * ksq + tau**2) ** (-alpha / 2.0)
    spec[0, 0] = 0.0
    field = np.real(np.fft.ifft2(spec))
    return field / field.std()


def _grid_coords(res: int, lx: float, ly: float):
    x = np.arange(res) * (lx / res)
    y = np.arange(res) * (ly / res)
    return np.meshgrid(x, y)  # X[i,j] = x_j, Y[i,j] = y_i


def _ic_dr(rng, res, lx):
    """Two species set to uniform values inside six randomly placed squares."""
    u = np.zeros((2, res, res))
    X, Y = _grid_coords(res, lx, lx)
    for _ in range(DR_N_SQUARES):
        x0 = rng.uniform(0.0, lx - DR_SQUARE_SIZE)
        y0 = rng.uniform(0.0, lx - DR_SQUARE_SIZE)
        vals = rng.uniform(-1.0, 1.0, size=2)
        mask = (X >= x0) & (X < x0 + DR_SQUARE_SIZE) & (Y >= y0) & (Y < y0 + DR_SQUARE_SIZE)
        u[0][mask] = vals[0]
        u[1][mask] = vals[1]
    return u


def _ic_ns(rng, res):
    return power_law_grf(res, res, rng, alpha=2.5, tau=7.0)[None]


def _ic_bg(rng, res, lx):
    """Superposition of four random sine modes per velocity component."""
    X, Y = _grid_coords(res, lx, lx)
    uv = np.zeros((2, res, res))
    for c in range(2):
        for _ in range(4):
            amp = rng.uniform(-0.5, 0.5)
            kx, ky = rng.integers(1, 4, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            uv[c] += amp * np.sin(2.0 * np.pi * (kx * X + ky * Y) / lx + phase)
    return uv


def sw_dam_profile(r: np.ndarray, radius: float, dx: float) -> np.ndarray:
    """Radial dam-break depth: 2 inside the disk, 1 outside, tanh rim of width dx/2."""
    return 1.0 + 0.5 * (1.0 - np.tanh((r - radius) / (dx / 2.0)))


def _ic_sw(env, res, lx):
    dx = lx / res
    X, Y = _grid_coords(res, lx, lx)
    r = np.sqrt((X - lx / 2.0) ** 2 + (Y - lx / 2.0) ** 2)
    return sw_dam_profile(r, env.p["radius"], dx)[None]


def hc_coefficient_field(env: Environment, traj_seed: int, resolution: int = 64,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """Heat-conduction coefficient a(x) = scale * exp(sigma * GRF), strictly positive."""
    if rng is None:
        rng = trajectory_rng(env, traj_seed)
    sigma = float(env.p.get("a_sigma", HC_A_SIGMA))
    scale = float(env.p.get("a_scale", HC_A_SCALE))
    if sigma == 0.0:
        return np.full((resolution, resolution), scale)
    g = power_law_grf(resolution, resolution, rng, alpha=4.0, tau=3.0)
    return scale * np.exp(sigma * g)


def initial_condition(env: Environment, traj_seed: int,
                      resolution: int = 64) -> np.ndarray:
    """Initial state [C, H, W] for one trajectory of `env`.

    For HC the per-trajectory randomness lives in the coefficient field a(x),
    which is drawn first from the same stream; the state itself starts at zero.
    """
    system = get_system(env.system_id)
    rng = trajectory_rng(env, traj_seed)
    lx = system.domain[0]
    if env.system_id == "dr":
        return _ic_dr(rng, resolution, lx)
    if env.system_id == "ns":
        return _ic_ns(rng, resolution)
    if env.system_id == "bg":
        return _ic_bg(rng, resolution, lx)
    if env.system_id == "sw":
        return _ic_sw(env, resolution, lx)
    if env.system_id == "hc":
        hc_coefficient_field(env, traj_seed, resolution, rng=rng)
        return np.zeros((1, resolution, resolution))
    raise ValueError(f"unknown system id {env.system_id!r}")
