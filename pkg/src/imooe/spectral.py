"""FFT utilities: periodic spectral derivatives, the wavenumber-weighted squared
error used by the frequency-enrichment loss, and radial-band spectral RMSE.

Conventions (part of the package contract):
  * Forward transform = unnormalized DFT divided by H*W, so spectral error
    values are resolution-comparable.
  * Loss weights and radial shells use integer wavenumbers; spectral
    derivatives use the physical scaling 2*pi/L.
  * Real-input transforms keep the half spectrum; non-self-conjugate bins
    carry weight 2 so sums equal the full-spectrum value. The Nyquist column
    is counted once.
  * Radial shell index is round(|xi|).

The derivative-stack channel ordering below is versioned; checkpoints refuse
to load under a different ordering.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import torch

DERIV_KINDS = ("dx", "dy", "dxx", "dyy", "dxy")
DERIV_ORDERING_VERSION = "dx,dy,dxx,dyy,dxy/v1"
N_DERIVS = len(DERIV_KINDS)


class SpectralGrid:
    """Wavenumber bookkeeping for an H x W periodic grid with extents (ly, lx)."""

    def __init__(self, h: int, w: int, ly: float = 1.0, lx: float = 1.0):
        if h < 4 or w < 4:
            raise ValueError("grid must be at least 4x4")
        self.h, self.w = h, w
        self.ly, self.lx = float(ly), float(lx)
        self.scale_x = 2.0 * np.pi / self.lx
        self.scale_y = 2.0 * np.pi / self.ly

        self.kx = torch.fft.rfftfreq(w, d=1.0 / w).double()          # [w//2+1]
        self.ky = torch.fft.fftfreq(h, d=1.0 / h).double()           # [h]
        self.ksq = self.kx[None, :] ** 2 + self.ky[:, None] ** 2     # integer |xi|^2

        # conjugate-symmetry multiplicity of each rfft bin
        mult = torch.full((w // 2 + 1,), 2.0, dtype=torch.float64)
        mult[0] = 1.0
        if w % 2 == 0:
            mult[-1] = 1.0
        self.bin_weight = mult[None, :].expand(h, -1).clone()

        self.shell = torch.round(torch.sqrt(self.ksq)).long()        # radial bin index

        # odd-order derivatives must drop the (unpaired) Nyquist mode
        self.kx_odd = self.kx.clone()
        if w % 2 == 0:
            self.kx_odd[-1] = 0.0
        self.ky_odd = self.ky.clone()
        if h % 2 == 0:
            self.ky_odd[h // 2] = 0.0


@lru_cache(maxsize=32)
def _grid(h: int, w: int, ly: float, lx: float) -> SpectralGrid:
    return SpectralGrid(h, w, ly, lx)


def _as_tensor(field) -> torch.Tensor:
    if isinstance(field, torch.Tensor):
        return field
    return torch.as_tensor(np.asarray(field))


def spectral_derivative(field, axis: str, order: int, grid: SpectralGrid | None = None):
    """order-th spectral derivative along 'x' (last axis) or 'y' of a [..., H, W] field."""
    f = _as_tensor(field)
    h, w = f.shape[-2], f.shape[-1]
    if grid is None:
        grid = _grid(h, w, 1.0, 1.0)
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    spec = torch.fft.rfft2(f)
    if axis == "x":
        k = grid.kx if order == 2 else grid.kx_odd
        factor = (1j * grid.scale_x * k.to(f.device))[None, :] ** order
    else:
        k = grid.ky if order == 2 else grid.ky_odd
        factor = (1j * grid.scale_y * k.to(f.device))[:, None] ** order
    return torch.fft.irfft2(spec * factor.to(spec.dtype), s=(h, w))


def derivative_stack(field, grid: SpectralGrid | None = None) -> torch.Tensor:
    """Stack [dx, dy, dxx, dyy, dxy] of every state channel, kind-major.

    Input [C, H, W] -> output [5*C, H, W] ordered
    [dx u_1..u_C, dy u_1..u_C, dxx ..., dyy ..., dxy ...]; expert masks and
    checkpoints index into this ordering (see DERIV_ORDERING_VERSION).
    """
    f = _as_tensor(field)
    h, w = f.shape[-2], f.shape[-1]
    if grid is None:
        grid = _grid(h, w, 1.0, 1.0)
    spec = torch.fft.rfft2(f)
    dev = f.device
    ikx = (1j * grid.scale_x * grid.kx_odd.to(dev))[None, :].to(spec.dtype)
    iky = (1j * grid.scale_y * grid.ky_odd.to(dev))[:, None].to(spec.dtype)
    kx2 = (-(grid.scale_x * grid.kx.to(dev)) ** 2)[None, :].to(spec.dtype)
    ky2 = (-(grid.scale_y * grid.ky.to(dev)) ** 2)[:, None].to(spec.dtype)
    parts = [
        torch.fft.irfft2(spec * ikx, s=(h, w)),
        torch.fft.irfft2(spec * iky, s=(h, w)),
        torch.fft.irfft2(spec * kx2, s=(h, w)),
        torch.fft.irfft2(spec * ky2, s=(h, w)),
        torch.fft.irfft2(spec * ikx * iky, s=(h, w)),
    ]
    return torch.cat(parts, dim=-3)


def freq_weighted_sq_error(u, v) -> torch.Tensor:
    """Sum over modes of |xi|^2 * |F(u) - F(v)|^2, summed over channels.

    |xi| is the integer wavenumber, F the DFT scaled by 1/(H*W); the DC error
    carries zero weight by construction.
    """
    ut, vt = _as_tensor(u), _as_tensor(v)
    if ut.shape != vt.shape:
        raise ValueError(f"shape mismatch {tuple(ut.shape)} vs {tuple(vt.shape)}")
    h, w = ut.shape[-2], ut.shape[-1]
    grid = _grid(h, w, 1.0, 1.0)
    spec = torch.fft.rfft2(ut - vt) / (h * w)
    weight = (grid.ksq * grid.bin_weight).to(device=spec.device, dtype=spec.real.dtype)
    return (weight * (spec.real**2 + spec.imag**2)).sum()


def freq_weighted_sq_error_per_sample(diff: torch.Tensor) -> torch.Tensor:
    """Batched kernel of the frequency loss: [..., C, H, W] -> [...] sums."""
    h, w = diff.shape[-2], diff.shape[-1]
    grid = _grid(h, w, 1.0, 1.0)
    spec = torch.fft.rfft2(diff) / (h * w)
    weight = (grid.ksq * grid.bin_weight).to(device=spec.device, dtype=spec.real.dtype)
    return (weight * (spec.real**2 + spec.imag**2)).sum(dim=(-3, -2, -1))


def default_bands(h: int) -> list[tuple[int, int]]:
    """Low/mid/high wavenumber bands: [0,4], [5,12], [13, H//2]."""
    return [(0, 4), (5, 12), (13, h // 2)]


def radial_band_rmse(u_seq, v_seq, bands: list[tuple[int, int]]) -> list[float]:
    """Per-band spectral RMSE between two [T, C, H, W] sequences.

    For each time step and channel: sqrt(sum of |F(u)-F(v)|^2 over shells in
    [lo, hi]) / (hi - lo + 1); the returned value is the mean over steps and
    channels. Bands must be sorted, non-overlapping, and non-empty on the grid.
    """
    ut, vt = _as_tensor(u_seq).double(), _as_tensor(v_seq).double()
    if ut.shape != vt.shape:
        raise ValueError(f"shape mismatch {tuple(ut.shape)} vs {tuple(vt.shape)}")
    if ut.dim() == 3:
        ut, vt = ut[None], vt[None]
    h, w = ut.shape[-2], ut.shape[-1]
    grid = _grid(h, w, 1.0, 1.0)
    prev_hi = -1
    for lo, hi in bands:
        if lo > hi:
            raise ValueError(f"empty band [{lo}, {hi}]")
        if lo <= prev_hi:
            raise ValueError("bands must be sorted and non-overlapping")
        prev_hi = hi
    spec = torch.fft.rfft2(ut - vt) / (h * w)
    energy = (grid.bin_weight.to(spec.real.dtype) * (spec.real**2 + spec.imag**2))
    out = []
    for lo, hi in bands:
        mask = (grid.shell >= lo) & (grid.shell <= hi)
        if not bool(mask.any()):
            raise ValueError(f"band [{lo}, {hi}] has no shells on a {h}x{w} grid")
        band_energy = (energy * mask.to(energy.dtype)).sum(dim=(-2, -1))
        out.append(float((band_energy.sqrt() / (hi - lo + 1)).mean()))
    return out
