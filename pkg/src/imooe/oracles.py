"""Brute-force reference implementations for tests.

Everything here is deliberately slow and simple: direct double-loop DFTs,
explicit finite-difference gradient probes, and refined-substep solver runs.
These paths share no code with the production spectral or model modules and
must never be imported by them.
"""
from __future__ import annotations

import numpy as np
import torch

from .datasets.solvers import Trajectory, simulate

MAX_NAIVE_SIZE = 16


def naive_dft2(field: np.ndarray) -> np.ndarray:
    """Direct 2D DFT of [H, W] (or [C, H, W]) real data, scaled by 1/(H*W)."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim == 3:
        return np.stack([naive_dft2(c) for c in f])
    h, w = f.shape
    if h > MAX_NAIVE_SIZE or w > MAX_NAIVE_SIZE:
        raise ValueError(f"naive DFT limited to {MAX_NAIVE_SIZE}x{MAX_NAIVE_SIZE}")
    out = np.zeros((h, w), dtype=np.complex128)
    for k in range(h):
        for l in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += f[m, n] * np.exp(-2j * np.pi * (k * m / h + l * n / w))
            out[k, l] = acc / (h * w)
    return out


def _signed_freqs(n: int) -> np.ndarray:
    return np.fft.fftfreq(n) * n


def naive_freq_weighted_sq_error(u: np.ndarray, v: np.ndarray) -> float:
    """Full-spectrum sum of |k|^2 |F(u)-F(v)|^2 over channels, integer wavenumbers."""
    du = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    if du.ndim == 2:
        du = du[None]
    total = 0.0
    for chan in du:
        spec = naive_dft2(chan)
        h, w = chan.shape
        ky = _signed_freqs(h)[:, None]
        kx = _signed_freqs(w)[None, :]
        total += float(np.sum((kx**2 + ky**2) * np.abs(spec) ** 2))
    return total


def naive_radial_band_rmse(u_seq, v_seq, bands) -> list[float]:
    """Full-spectrum radial binning by round(|k|); same formula, no shared code."""
    du = np.asarray(u_seq, dtype=np.float64) - np.asarray(v_seq, dtype=np.float64)
    if du.ndim == 3:
        du = du[None]
    t, c, h, w = du.shape
    ky = _signed_freqs(h)[:, None]
    kx = _signed_freqs(w)[None, :]
    shell = np.round(np.sqrt(kx**2 + ky**2)).astype(int)
    out = []
    for lo, hi in bands:
        mask = (shell >= lo) & (shell <= hi)
        vals = []
        for i in range(t):
            for j in range(c):
                spec = naive_dft2(du[i, j])
                vals.append(np.sqrt(np.sum(np.abs(spec[mask]) ** 2)) / (hi - lo + 1))
        out.append(float(np.mean(vals)))
    return out


def fd_gradient_check(loss_fn, params, eps: float | None = None,
                      probes_per_tensor: int | None = None, seed: int = 0) -> float:
    """Central finite differences vs reverse-mode gradients; returns the worst
    relative error.

    Relative error uses max(|fd|, |grad|, rms of the whole gradient) as the
    denominator so near-zero components are judged against the gradient's
    natural scale. `probes_per_tensor` caps how many entries of each tensor
    are probed (deterministically sampled); None probes all of them.
    """
    params = list(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    g_all = torch.cat([g.reshape(-1) for g in grads])
    g_scale = float(g_all.double().pow(2).mean().sqrt())
    if g_scale == 0.0:
        g_scale = 1.0
    rng = np.random.default_rng(seed)

    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.data.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.numel()
        if probes_per_tensor is None or n <= probes_per_tensor:
            idxs = range(n)
        else:
            idxs = sorted(rng.choice(n, size=probes_per_tensor, replace=False).tolist())
        base_h = eps
        if base_h is None:
            base_h = 1e-6 if p.dtype == torch.float64 else 5e-3
        for i in idxs:
            orig = flat_p[i].item()
            h = base_h * max(1.0, abs(orig))
            with torch.no_grad():
                flat_p[i] = orig + h
                lp = float(loss_fn())
                flat_p[i] = orig - h
                lm = float(loss_fn())
                flat_p[i] = orig
            fd = (lp - lm) / (2 * h)
            ad = flat_g[i].item()
            denom = max(abs(fd), abs(ad), g_scale)
            worst = max(worst, abs(fd - ad) / denom)
    return worst


def fine_reference_solve(env, refinement: int, traj_seed: int = 0,
                         resolution: int = 32, u0=None) -> Trajectory:
    """Same scheme, substeps refined by 2 or 4; the convergence reference."""
    if refinement not in (2, 4):
        raise ValueError("refinement must be 2 or 4")
    if resolution > 64:
        raise ValueError("reference solves are for small grids only")
    return simulate(env, traj_seed, resolution=resolution,
                    substep_factor=refinement, precision="f64", u0=u0)


def observed_order(env, traj_seed: int = 0, resolution: int = 32, u0=None) -> float:
    """log2 error ratio of base vs halved substeps against the 4x reference."""
    base = simulate(env, traj_seed, resolution=resolution, substep_factor=1,
                    precision="f64", u0=u0).u
    half = simulate(env, traj_seed, resolution=resolution, substep_factor=2,
                    precision="f64", u0=u0).u
    ref = fine_reference_solve(env, 4, traj_seed, resolution, u0=u0).u
    e1 = np.sqrt(np.mean((base - ref) ** 2))
    e2 = np.sqrt(np.mean((half - ref) ** 2))
    if e2 == 0:
        raise ValueError("refined error vanished; case too easy to measure order")
    return float(np.log2(e1 / e2))
