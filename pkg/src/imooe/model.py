"""Mixture-of-operator-experts forecaster.

Each expert is an FNO-style backbone fed with normalized coordinates, the
sliding window of past frames, and a masked stack of precomputed spatial
derivatives of the latest frame. Per-expert conditioning heads mix in the
physical parameter vector; the fusion stage is either a plain sum or a
pointwise MLP. Time marching is Euler-forward with step 1 in normalized time:
the network's fused output is the per-step increment.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .spectral import DERIV_ORDERING_VERSION, N_DERIVS, SpectralGrid, derivative_stack


@dataclass
class ExpertConfig:
    k: int = 2
    backbone: str = "fno"
    layers: int = 4
    width: int = 64
    modes: int = 16
    window: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one expert")
        if self.backbone != "fno":
            raise ValueError(f"unknown backbone {self.backbone!r}")


@dataclass
class FusionConfig:
    mode: str = "additive"          # "additive" | "nonlinear"
    head_width: int = 64
    fusion_width: int = 128
    fusion_depth: int = 2
    cond_dim: int = 1

    def __post_init__(self):
        if self.mode not in ("additive", "nonlinear"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.cond_dim < 1:
            raise ValueError("cond_dim must be >= 1")


class RolloutBlowupError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite prediction at rollout step {step}")


class SpectralConv2d(nn.Module):
    """Multiply the retained low Fourier modes by learned complex weights."""

    def __init__(self, in_channels, out_channels, modes):
        super().__init__()
        self.modes = modes
        scale = 1.0 / (in_channels * out_channels)
        # stored as [..., 2] real tensors so f32/f64 switching stays uniform
        self.w_pos = nn.Parameter(
            scale * torch.randn(in_channels, out_channels, modes, modes, 2))
        self.w_neg = nn.Parameter(
            scale * torch.randn(in_channels, out_channels, modes, modes, 2))

    def forward(self, x):
        b, _, h, w = x.shape
        if self.modes > h // 2:
            raise ValueError(f"modes {self.modes} exceed H/2 for grid {h}x{w}")
        spec = torch.fft.rfft2(x)
        out = torch.zeros(b, self.w_pos.shape[1], h, w // 2 + 1,
                          dtype=spec.dtype, device=x.device)
        m = self.modes
        wp = torch.view_as_complex(self.w_pos)
        wn = torch.view_as_complex(self.w_neg)
        out[:, :, :m, :m] = torch.einsum("bixy,ioxy->boxy", spec[:, :, :m, :m], wp)
        out[:, :, -m:, :m] = torch.einsum("bixy,ioxy->boxy", spec[:, :, -m:, :m], wn)
        return torch.fft.irfft2(out, s=(h, w))


class FnoExpert(nn.Module):
    """Lift -> layers x (spectral conv + pointwise bypass + GeLU) -> project."""

    def __init__(self, in_channels, out_channels, width, modes, layers=4):
        super().__init__()
        self.lift = nn.Conv2d(in_channels, width, 1)
        self.convs = nn.ModuleList(
            [SpectralConv2d(width, width, modes) for _ in range(layers)])
        self.bypass = nn.ModuleList(
            [nn.Conv2d(width, width, 1) for _ in range(layers)])
        self.proj1 = nn.Conv2d(width, 128, 1)
        self.proj2 = nn.Conv2d(128, out_channels, 1)
        self.act = nn.GELU()

    def forward(self, x):
        x = self.lift(x)
        for conv, skip in zip(self.convs, self.bypass):
            x = self.act(conv(x) + skip(x))
        return self.proj2(self.act(self.proj1(x)))


class MaskBank(nn.Module):
    """Per-expert derivative gates: sigmoid(logits / temperature).

    Trained soft; `hard()` thresholds at 0.5 for reporting. Modes:
    "soft" (default), "straight_through" (hard forward, soft backward), and
    "ones" (selection disabled; every derivative passes untouched).
    """

    def __init__(self, k, n_channels, temperature=1.0, mode="soft"):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        if mode not in ("soft", "straight_through", "ones"):
            raise ValueError(f"unknown mask mode {mode!r}")
        self.temperature = temperature
        self.mode = mode
        g = torch.Generator().manual_seed(1234 + k * 7 + n_channels)
        self.logits = nn.Parameter(0.5 * torch.randn(k, n_channels, generator=g))

    def soft(self):
        return torch.sigmoid(self.logits / self.temperature)

    def hard(self):
        return (self.soft() >= 0.5).to(self.logits.dtype)

    def forward(self):
        soft = self.soft()
        if self.mode == "ones":
            return torch.ones_like(soft.detach())
        if self.mode == "straight_through":
            return soft + (self.hard() - soft).detach()
        return soft


class ConditionHead(nn.Module):
    """Pointwise MLP over one expert's output concatenated with the broadcast
    parameter vector."""

    def __init__(self, channels, cond_dim, head_width):
        super().__init__()
        self.fc1 = nn.Conv2d(channels + cond_dim, head_width, 1)
        self.fc2 = nn.Conv2d(head_width, channels, 1)
        self.act = nn.GELU()

    def forward(self, expert_out, cond_map):
        return self.fc2(self.act(self.fc1(torch.cat([expert_out, cond_map], dim=1))))


class FusionNet(nn.Module):
    """Pointwise MLP combining all head outputs (nonlinear composition)."""

    def __init__(self, k, channels, width, depth):
        super().__init__()
        layers = [nn.Conv2d(k * channels, width, 1), nn.GELU()]
        for _ in range(depth - 1):
            layers += [nn.Conv2d(width, width, 1), nn.GELU()]
        layers.append(nn.Conv2d(width, channels, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MooeModel(nn.Module):
    """K masked operator experts + conditioning heads + fusion.

    `grid_extent` is the physical (lx, ly) of the simulation domain, used for
    the derivative scaling; masks index into the versioned derivative-stack
    ordering.
    """

    def __init__(self, channels: int, expert_cfg: ExpertConfig,
                 fusion_cfg: FusionConfig, grid_extent=(1.0, 1.0),
                 mask_mode="soft", temperature=1.0):
        super().__init__()
        self.channels = channels
        self.expert_cfg = expert_cfg
        self.fusion_cfg = fusion_cfg
        self.grid_extent = tuple(grid_extent)
        self.deriv_channels = N_DERIVS * channels
        in_channels = 2 + expert_cfg.window * channels + self.deriv_channels

        self.experts = nn.ModuleList([
            FnoExpert(in_channels, channels, expert_cfg.width, expert_cfg.modes,
                      expert_cfg.layers)
            for _ in range(expert_cfg.k)
        ])
        self.masks = MaskBank(expert_cfg.k, self.deriv_channels,
                              temperature=temperature, mode=mask_mode)
        self.heads = nn.ModuleList([
            ConditionHead(channels, fusion_cfg.cond_dim, fusion_cfg.head_width)
            for _ in range(expert_cfg.k)
        ])
        self.fusion = (FusionNet(expert_cfg.k, channels, fusion_cfg.fusion_width,
                                 fusion_cfg.fusion_depth)
                       if fusion_cfg.mode == "nonlinear" else None)
        self._grids: dict[tuple[int, int], SpectralGrid] = {}

    # -- pieces ---------------------------------------------------------

    def spectral_grid(self, h, w) -> SpectralGrid:
        key = (h, w)
        if key not in self._grids:
            self._grids[key] = SpectralGrid(h, w, ly=self.grid_extent[1],
                                            lx=self.grid_extent[0])
        return self._grids[key]

    def coords(self, h, w, dtype, device) -> torch.Tensor:
        x = torch.arange(w, dtype=dtype, device=device) / w
        y = torch.arange(h, dtype=dtype, device=device) / h
        gy, gx = torch.meshgrid(y, x, indexing="ij")
        return torch.stack([gx, gy])

    def expert_forward(self, i: int, coords, window, derivs, mask_row):
        """One expert on [coords; window; mask_row * derivs] channel stacks.

        `window` is [B, W*C, H, W] (oldest frame first), `derivs` the
        [B, 5*C, H, W] stack of the latest frame.
        """
        if derivs.shape[1] != self.deriv_channels:
            raise ValueError(
                f"derivative stack has {derivs.shape[1]} channels, "
                f"expected {self.deriv_channels} ({DERIV_ORDERING_VERSION})")
        gated = derivs * mask_row.view(1, -1, 1, 1)
        if coords.dim() == 3:
            coords = coords[None].expand(window.shape[0], -1, -1, -1)
        x = torch.cat([coords, window, gated], dim=1)
        return self.experts[i](x)

    def fuse(self, expert_outs, cond):
        """Aggregate expert outputs conditioned on the parameter vector.

        cond: [B, cond_dim], broadcast over the grid inside each head.
        """
        if cond.shape[-1] != self.fusion_cfg.cond_dim:
            raise ValueError(
                f"cond vector length {cond.shape[-1]} != {self.fusion_cfg.cond_dim}")
        b, _, h, w = expert_outs[0].shape
        cond_map = cond.view(b, -1, 1, 1).expand(b, cond.shape[-1], h, w)
        head_outs = [head(out, cond_map) for head, out in zip(self.heads, expert_outs)]
        if self.fusion is None:
            return torch.stack(head_outs).sum(dim=0)
        return self.fusion(torch.cat(head_outs, dim=1))

    # -- forecasting ----------------------------------------------------

    def forward_step(self, window: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Increment prediction from a [B, W, C, H, W] window of recent frames."""
        b, t, c, h, w = window.shape
        last = window[:, -1]
        derivs = derivative_stack(last, self.spectral_grid(h, w))
        coords = self.coords(h, w, window.dtype, window.device)
        flat = window.reshape(b, t * c, h, w)
        mask = self.masks()
        outs = [self.expert_forward(i, coords, flat, derivs, mask[i])
                for i in range(self.expert_cfg.k)]
        return self.fuse(outs, cond)

    def rollout(self, history: torch.Tensor, steps: int,
                cond: torch.Tensor) -> torch.Tensor:
        """Autoregressive forecast: [B, W, C, H, W] history -> [B, steps, C, H, W].

        The window always holds the most recent W frames (model predictions
        once ground truth runs out); gradients flow through the whole chain.
        """
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if history.shape[1] != self.expert_cfg.window:
            raise ValueError(
                f"history length {history.shape[1]} != window {self.expert_cfg.window}")
        window = history
        preds = []
        for step in range(steps):
            nxt = window[:, -1] + self.forward_step(window, cond)
            if not torch.isfinite(nxt).all():
                raise RolloutBlowupError(step)
            preds.append(nxt)
            window = torch.cat([window[:, 1:], nxt[:, None]], dim=1)
        return torch.stack(preds, dim=1)


def build_model(channels, expert_cfg, fusion_cfg, grid_extent=(1.0, 1.0),
                precision="f32", seed=None, mask_mode="soft",
                temperature=1.0) -> MooeModel:
    if seed is not None:
        torch.manual_seed(seed)
    model = MooeModel(channels, expert_cfg, fusion_cfg, grid_extent,
                      mask_mode=mask_mode, temperature=temperature)
    if precision == "f64":
        model = model.double()
    return model


def save_checkpoint(path, model: MooeModel, *, system_id=None, resolution=None,
                    norm_stats=None, cond_stats=None, extra=None) -> None:
    """Single-archive checkpoint; refuses to load under a different
    derivative-stack ordering."""
    payload = {
        "state_dict": model.state_dict(),
        "channels": model.channels,
        "expert_cfg": asdict(model.expert_cfg),
        "fusion_cfg": asdict(model.fusion_cfg),
        "grid_extent": model.grid_extent,
        "mask_mode": model.masks.mode,
        "temperature": model.masks.temperature,
        "deriv_ordering_version": DERIV_ORDERING_VERSION,
        "system_id": system_id,
        "resolution": resolution,
        "norm_stats": norm_stats,
        "cond_stats": cond_stats,
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[MooeModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("deriv_ordering_version")
    if version != DERIV_ORDERING_VERSION:
        raise ValueError(
            f"checkpoint derivative ordering {version!r} does not match "
            f"{DERIV_ORDERING_VERSION!r}")
    model = MooeModel(payload["channels"], ExpertConfig(**payload["expert_cfg"]),
                      FusionConfig(**payload["fusion_cfg"]),
                      payload["grid_extent"],
                      mask_mode=payload.get("mask_mode", "soft"),
                      temperature=payload.get("temperature", 1.0))
    sample = next(iter(payload["state_dict"].values()))
    if sample.dtype == torch.float64:
        model = model.double()
    model.load_state_dict(payload["state_dict"])
    return model, payload
