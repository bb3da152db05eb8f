"""Numerical integrators producing trajectories for the five PDE systems.

Schemes (all periodic, uniform grid):
  DR  second-order central FD Laplacian + RK4, substeps limited by diffusion CFL
  NS  vorticity/streamfunction pseudo-spectral, 2/3-rule dealias,
      Crank-Nicolson viscosity + explicit Heun advection
  BG  pseudo-spectral with 2/3 dealias + RK4
  SW  finite-volume Rusanov flux + RK2 (Heun), flat bathymetry, g_r = 1
  HC  conservative-form central FD for div(a grad u) + RK4

Integration runs in float64; saved frames are float32 unless asked otherwise.
`substep_factor` uniformly refines the internal time step (for convergence
studies); it never changes the saved sampling times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import hc_coefficient_field, initial_condition
from .systems import Environment, get_system, trajectory_rng

SW_GRAVITY = 1.0
RK4_REAL_LIMIT = 2.785   # RK4 stability interval on the negative real axis
SAFETY = 0.5


class SolverBlowupError(RuntimeError):
    """Non-finite state during integration; carries where it happened."""

    def __init__(self, env: Environment, saved_step: int, substep: int):
        self.env = env
        self.saved_step = saved_step
        self.substep = substep
        super().__init__(
            f"non-finite state in {env.system_id} env {env.env_id} "
            f"(params {env.all_params}) at saved step {saved_step}, substep {substep}"
        )


@dataclass
class Trajectory:
    """A simulated field sequence [N_t, C, H, W] plus its grid/time metadata."""

    u: np.ndarray
    dt_saved: float
    dx: float
    dy: float
    env_id: int


def _check_finite(state: np.ndarray, env, saved_step, substep):
    if not np.isfinite(state).all():
        raise SolverBlowupError(env, saved_step, substep)


def _laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    return (
        np.roll(f, 1, axis=-1) + np.roll(f, -1, axis=-1)
        + np.roll(f, 1, axis=-2) + np.roll(f, -1, axis=-2) - 4.0 * f
    ) / dx**2


def _rk4(state, rhs, t, dt):
    k1 = rhs(state, t)
    k2 = rhs(state + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(state + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(state + dt * k3, t + dt)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _save_loop(env, u0, n_t, dt_saved, n_sub, step_fn, *, guard_every=1):
    """March `n_sub` substeps per saved interval, guarding against blow-up."""
    frames = [u0.copy()]
    state = u0.copy()
    dt = dt_saved / n_sub
    for m in range(1, n_t):
        t0 = (m - 1) * dt_saved
        for s in range(n_sub):
            state = step_fn(state, t0 + s * dt, dt)
            if s % guard_every == 0:
                _check_finite(state, env, m, s)
        _check_finite(state, env, m, n_sub - 1)
        frames.append(state.copy())
    return np.stack(frames)


# ---------------------------------------------------------------- DR

def _run_dr(env, u0, res, factor):
    system = get_system("dr")
    lx = system.domain[0]
    dx = lx / res
    d_u, d_v, k = env.p["D_u"], env.p["D_v"], env.p["k"]
    # extra 1/4 beyond the stability margin keeps the base step inside the
    # clean fourth-order regime (the reaction term is mildly stiff)
    dt_lim = min(0.25 * SAFETY * RK4_REAL_LIMIT * dx**2 / (8.0 * max(d_u, d_v)), 0.1)
    n_sub = math.ceil(system.dt_saved / dt_lim) * factor

    def rhs(state, t):
        u, v = state
        ru = d_u * _laplacian(u, dx) + u - u**3 - k - v
        rv = d_v * _laplacian(v, dx) + u - v
        return np.stack([ru, rv])

    def step(state, t, dt):
        return _rk4(state, rhs, t, dt)

    return _save_loop(env, u0, system.n_t, system.dt_saved, n_sub, step), dx


# ---------------------------------------------------------------- spectral helpers

def _wavenumbers(res, length):
    """(kx, ky, |k|^2) plus first-derivative variants with the Nyquist zeroed
    (the unpaired Nyquist mode must not contribute to odd derivatives)."""
    k_int = np.fft.fftfreq(res) * res
    k = (2.0 * np.pi / length) * k_int
    kd = k.copy()
    if res % 2 == 0:
        kd[res // 2] = 0.0
    kx, ky = k[None, :], k[:, None]
    return kx, ky, kx**2 + ky**2, kd[None, :], kd[:, None]


def _dealias_mask(res):
    k_int = np.abs(np.fft.fftfreq(res) * res)
    keep = k_int <= res // 3
    return keep[None, :] & keep[:, None]


# ---------------------------------------------------------------- NS

def _ns_velocity(w_hat, kxd, kyd, ksq):
    ksq_safe = ksq.copy()
    ksq_safe[0, 0] = 1.0
    psi_hat = w_hat / ksq_safe
    psi_hat[0, 0] = 0.0
    u = np.real(np.fft.ifft2(1j * kyd * psi_hat))
    v = np.real(np.fft.ifft2(-1j * kxd * psi_hat))
    return u, v


def _run_ns(env, w0, res, factor):
    system = get_system("ns")
    lx = system.domain[0]
    dx = lx / res
    nu = env.p["nu"]
    w_freq = env.f_desc["w"]
    kx, ky, ksq, kxd, kyd = _wavenumbers(res, lx)
    mask = _dealias_mask(res)

    x = np.arange(res) * dx
    X, Y = np.meshgrid(x, x)
    forcing = 0.1 * (np.sin(w_freq * np.pi * (X + Y)) + np.cos(w_freq * np.pi * (X + Y)))
    f_hat = np.fft.fft2(forcing) * mask

    def nonlinear(w_hat):
        u, v = _ns_velocity(w_hat, kxd, kyd, ksq)
        wx = np.real(np.fft.ifft2(1j * kxd * w_hat))
        wy = np.real(np.fft.ifft2(1j * kyd * w_hat))
        return np.fft.fft2(-(u * wx + v * wy)) * mask

    w_hat = np.fft.fft2(w0[0]) * mask
    frames = [np.real(np.fft.ifft2(w_hat))[None].copy()]
    n_t, dt_saved = system.n_t, system.dt_saved

    for m in range(1, n_t):
        u, v = _ns_velocity(w_hat, kxd, kyd, ksq)
        umax = max(np.abs(u).max(), np.abs(v).max(), 1e-8)
        dt_lim = 0.4 * dx / umax
        n_sub = math.ceil(dt_saved / dt_lim) * factor
        dt = dt_saved / n_sub
        visc = 0.5 * dt * nu * ksq
        for s in range(n_sub):
            # Heun on advection + forcing, Crank-Nicolson on viscosity
            n1 = nonlinear(w_hat) + f_hat
            base = (1.0 - visc) * w_hat
            w_star = (base + dt * n1) / (1.0 + visc)
            n2 = nonlinear(w_star) + f_hat
            w_hat = (base + 0.5 * dt * (n1 + n2)) / (1.0 + visc)
        frame = np.real(np.fft.ifft2(w_hat))
        _check_finite(frame, env, m, n_sub - 1)
        frames.append(frame[None].copy())
    return np.stack(frames), dx


# ---------------------------------------------------------------- BG

def _run_bg(env, uv0, res, factor):
    system = get_system("bg")
    lx = system.domain[0]
    dx = lx / res
    nu = env.p["nu"]
    kx, ky, ksq, kxd, kyd = _wavenumbers(res, lx)
    mask = _dealias_mask(res)

    def rhs_hat(state_hat, t):
        u = np.real(np.fft.ifft2(state_hat[0]))
        v = np.real(np.fft.ifft2(state_hat[1]))
        out = np.empty_like(state_hat)
        for c in range(2):
            fx = np.real(np.fft.ifft2(1j * kxd * state_hat[c]))
            fy = np.real(np.fft.ifft2(1j * kyd * state_hat[c]))
            adv_hat = np.fft.fft2(-(u * fx + v * fy)) * mask
            out[c] = adv_hat - nu * ksq * state_hat[c]
        return out

    umax = max(np.abs(uv0).max(), 1e-8)
    kmax = (2.0 * np.pi / lx) * (res // 3)
    dt_adv = SAFETY * 2.8 / (2.0 * kmax * umax)
    dt_dif = SAFETY * RK4_REAL_LIMIT / max(nu * 2.0 * kmax**2, 1e-12)
    n_sub = math.ceil(system.dt_saved / min(dt_adv, dt_dif, system.dt_saved)) * factor

    state_hat = np.stack([np.fft.fft2(uv0[c]) * mask for c in range(2)])

    def step(s_hat, t, dt):
        return _rk4(s_hat, rhs_hat, t, dt)

    frames = [np.stack([np.real(np.fft.ifft2(state_hat[c])) for c in range(2)])]
    for m in range(1, system.n_t):
        for s in range(n_sub):
            state_hat = step(state_hat, 0.0, system.dt_saved / n_sub)
        frame = np.stack([np.real(np.fft.ifft2(state_hat[c])) for c in range(2)])
        _check_finite(frame, env, m, n_sub - 1)
        frames.append(frame)
    return np.stack(frames), dx


# ---------------------------------------------------------------- SW

def _sw_rhs(q, dx, g):
    h, hu, hv = q
    u = hu / h
    v = hv / h
    c = np.sqrt(g * h)
    pres = 0.5 * g * h**2

    fx = np.stack([hu, hu * u + pres, hv * u])
    fy = np.stack([hv, hu * v, hv * v + pres])
    ax = np.abs(u) + c
    ay = np.abs(v) + c

    # Rusanov flux at i+1/2 faces (neighbor = roll -1), then divergence
    def face_flux(f, a, axis):
        fn = np.roll(f, -1, axis=axis)
        qn = np.roll(q, -1, axis=axis)
        amax = np.maximum(a, np.roll(a, -1, axis=axis))
        return 0.5 * (f + fn) - 0.5 * amax * (qn - q)

    flux_x = face_flux(fx, ax, axis=-1)
    flux_y = face_flux(fy, ay, axis=-2)
    div = (flux_x - np.roll(flux_x, 1, axis=-1)) / dx
    div += (flux_y - np.roll(flux_y, 1, axis=-2)) / dx
    return -div, float(np.maximum(ax, ay).max())


def _run_sw(env, h0, res, factor):
    system = get_system("sw")
    lx = system.domain[0]
    dx = lx / res
    g = SW_GRAVITY
    q = np.stack([h0[0], np.zeros_like(h0[0]), np.zeros_like(h0[0])])
    frames = [q[:1].copy()]

    for m in range(1, system.n_t):
        _, speed = _sw_rhs(q, dx, g)
        dt_lim = 0.4 * dx / speed
        n_sub = math.ceil(system.dt_saved / dt_lim) * factor
        dt = system.dt_saved / n_sub
        for s in range(n_sub):
            r1, _ = _sw_rhs(q, dx, g)
            q1 = q + dt * r1
            r2, _ = _sw_rhs(q1, dx, g)
            q = 0.5 * (q + q1 + dt * r2)
            _check_finite(q, env, m, s)
        frames.append(q[:1].copy())
    return np.stack(frames), dx


# ---------------------------------------------------------------- HC

def hc_div_a_grad(u, a, dx):
    """Conservative flux form: interface coefficients are arithmetic means."""
    ax = 0.5 * (a + np.roll(a, -1, axis=-1))
    ay = 0.5 * (a + np.roll(a, -1, axis=-2))
    fx = ax * (np.roll(u, -1, axis=-1) - u)
    fy = ay * (np.roll(u, -1, axis=-2) - u)
    return ((fx - np.roll(fx, 1, axis=-1)) + (fy - np.roll(fy, 1, axis=-2))) / dx**2


def _run_hc(env, u0, res, factor, a):
    system = get_system("hc")
    lx = system.domain[0]
    dx = lx / res
    f = env.f_desc
    amp, m1, m2, m3 = f.get("A", 200.0), f["m1"], f["m2"], f["m3"]

    x = np.arange(res) * dx
    X, Y = np.meshgrid(x, x)
    forcing_xy = amp * np.sin(m1 * np.pi * X) * np.sin(m2 * np.pi * Y)

    # interface coefficients are constant per trajectory
    ax = 0.5 * (a + np.roll(a, -1, axis=-1))
    ay = 0.5 * (a + np.roll(a, -1, axis=-2))

    dt_lim = min(SAFETY * RK4_REAL_LIMIT * dx**2 / (8.0 * a.max()), system.dt_saved)
    n_sub = math.ceil(system.dt_saved / dt_lim) * factor

    def rhs(state, t):
        u = state[0]
        fx = ax * (np.roll(u, -1, axis=-1) - u)
        fy = ay * (np.roll(u, -1, axis=-2) - u)
        diff = ((fx - np.roll(fx, 1, axis=-1)) + (fy - np.roll(fy, 1, axis=-2))) / dx**2
        return (diff + forcing_xy * np.sin(m3 * np.pi * t))[None]

    def step(state, t, dt):
        return _rk4(state, rhs, t, dt)

    return _save_loop(env, u0, system.n_t, system.dt_saved, n_sub, step,
                      guard_every=20), dx


# ---------------------------------------------------------------- entry point

def simulate(env: Environment, traj_seed: int, resolution: int = 64,
             substep_factor: int = 1, precision: str = "f32",
             u0: np.ndarray | None = None) -> Trajectory:
    """Integrate one trajectory of `env`, saving `n_t` frames at `dt_saved`.

    Deterministic given (env.seed, traj_seed, resolution, substep_factor).
    NS/BG states are kept inside the 2/3 dealias band, including frame 0.
    `u0` overrides the sampled initial state (validation studies only).
    """
    system = get_system(env.system_id)
    if u0 is None:
        u0 = initial_condition(env, traj_seed, resolution)
    u0 = np.asarray(u0, dtype=np.float64)

    if env.system_id == "dr":
        frames, dx = _run_dr(env, u0, resolution, substep_factor)
    elif env.system_id == "ns":
        frames, dx = _run_ns(env, u0, resolution, substep_factor)
    elif env.system_id == "bg":
        frames, dx = _run_bg(env, u0, resolution, substep_factor)
    elif env.system_id == "sw":
        frames, dx = _run_sw(env, u0, resolution, substep_factor)
    elif env.system_id == "hc":
        a = hc_coefficient_field(env, traj_seed, resolution)
        frames, dx = _run_hc(env, u0, resolution, substep_factor, a)
    else:
        raise ValueError(f"unknown system id {env.system_id!r}")

    dtype = np.float32 if precision == "f32" else np.float64
    with np.errstate(over="ignore"):
        out = frames.astype(dtype)
    if not np.isfinite(out).all():
        # finite at f64 but outside float32 range still violates the contract
        raise SolverBlowupError(env, saved_step=int(system.n_t - 1), substep=-1)
    return Trajectory(u=out, dt_saved=system.dt_saved,
                      dx=dx, dy=dx, env_id=env.env_id)
