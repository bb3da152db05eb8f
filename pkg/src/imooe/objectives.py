"""Training objective: rollout prediction risk, cross-environment risk variance,
frequency-enrichment risk, mask diversity, and their scheduled combination.

Risks are estimated per batch: each environment's risk is the mean over that
environment's batch elements (batches are stratified so every training
environment contributes each step). The variance term uses the population
convention, so a single environment gives exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .spectral import freq_weighted_sq_error_per_sample


@dataclass
class LossWeights:
    pred: float = 1.0
    freq: float = 0.1
    mask: float = 0.001
    inv_max: float = 0.001
    warmup_end: int = 175      # epochs of pure ERM before the variance term
    ramp_end: int = 325        # linear ramp finishes here
    total_epochs: int = 500
    schedule: str = "linear"   # "linear" | "fixed" (ablation switch)

    def __post_init__(self):
        if min(self.pred, self.freq, self.mask, self.inv_max) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 <= self.warmup_end < self.ramp_end <= self.total_epochs:
            raise ValueError("need warmup_end < ramp_end <= total_epochs")
        if self.schedule not in ("linear", "fixed"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def scaled_to(self, total_epochs: int) -> "LossWeights":
        """Shrink the schedule proportionally for desk-scale epoch budgets."""
        f = total_epochs / self.total_epochs
        return LossWeights(
            pred=self.pred, freq=self.freq, mask=self.mask, inv_max=self.inv_max,
            warmup_end=int(round(self.warmup_end * f)),
            ramp_end=max(int(round(self.ramp_end * f)), int(round(self.warmup_end * f)) + 1),
            total_epochs=total_epochs, schedule=self.schedule)


@dataclass
class LossBreakdown:
    pred: float
    inv: float
    freq: float
    mask: float
    lambda_inv_current: float
    total: float


def lambda_inv(epoch: int, weights: LossWeights) -> float:
    """Variance-term weight: 0 through warmup, linear ramp, then the plateau."""
    if not 0 <= epoch < weights.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {weights.total_epochs})")
    if weights.schedule == "fixed":
        return weights.inv_max
    if epoch < weights.warmup_end:
        return 0.0
    if epoch < weights.ramp_end:
        return (epoch - weights.warmup_end) / (weights.ramp_end - weights.warmup_end) \
            * weights.inv_max
    return weights.inv_max


def prediction_risk(pred_traj, true_traj):
    """Mean squared error over steps, channels and grid of a forecast block."""
    if pred_traj.shape != true_traj.shape:
        raise ValueError(
            f"shape mismatch {tuple(pred_traj.shape)} vs {tuple(true_traj.shape)}")
    return ((pred_traj - true_traj) ** 2).mean()


def frequency_risk(pred_traj, true_traj):
    """Wavenumber-weighted spectral error, averaged over forecast steps."""
    if pred_traj.shape != true_traj.shape:
        raise ValueError(
            f"shape mismatch {tuple(pred_traj.shape)} vs {tuple(true_traj.shape)}")
    return freq_weighted_sq_error_per_sample(pred_traj - true_traj).mean()


def risk_variance(risks):
    """Population variance of the keyed risks (Var over environment keys)."""
    if isinstance(risks, dict):
        values = [risks[k] for k in sorted(risks)]
    else:
        values = list(risks)
    if len(values) == 0:
        raise ValueError("risk table is empty")
    if isinstance(values[0], torch.Tensor):
        stacked = torch.stack(values)
        return ((stacked - stacked.mean()) ** 2).mean()
    import numpy as np
    return float(np.var(np.asarray(values, dtype=np.float64)))


def mask_diversity_loss(soft_masks: torch.Tensor):
    """(1/K^2) sum_ij exp(-||m_i - m_j||^2), diagonal included."""
    k = soft_masks.shape[0]
    d2 = ((soft_masks[:, None, :] - soft_masks[None, :, :]) ** 2).sum(dim=-1)
    return torch.exp(-d2).sum() / (k * k)


def partition_keys(env_ids, n_steps: int, mode: str, step_bucket: int = 1):
    """Unique risk-table keys for a batch: per environment, or per
    (environment, rollout-step bucket)."""
    unique_envs = sorted(set(int(e) for e in env_ids))
    if mode == "by_env":
        return unique_envs
    if mode == "by_env_and_step":
        return [(e, s // step_bucket) for e in unique_envs
                for s in range(0, n_steps, step_bucket)]
    raise ValueError(f"unknown partition mode {mode!r}")


def risk_table(per_step_errors: torch.Tensor, env_ids, mode: str,
               step_bucket: int = 1) -> dict:
    """Reduce [B, T] per-element-step squared errors into keyed risks.

    The reduction is an ordered fold over sorted keys, so repeated runs give
    bit-identical values.
    """
    env_ids = [int(e) for e in env_ids]
    n_steps = per_step_errors.shape[1]
    table = {}
    for env in sorted(set(env_ids)):
        rows = [i for i, e in enumerate(env_ids) if e == env]
        env_err = per_step_errors[rows]
        if mode == "by_env":
            table[env] = env_err.mean()
        elif mode == "by_env_and_step":
            for s0 in range(0, n_steps, step_bucket):
                table[(env, s0 // step_bucket)] = env_err[:, s0:s0 + step_bucket].mean()
        else:
            raise ValueError(f"unknown partition mode {mode!r}")
    return table


def total_loss(pred, inv, freq, mask, epoch: int, weights: LossWeights) -> LossBreakdown:
    """Compose the scheduled objective; the breakdown identity is exact by
    construction (total is recomputed from the recorded float fields)."""
    lam = lambda_inv(epoch, weights)
    def _val(x):
        return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)
    p, i, f, m = _val(pred), _val(inv), _val(freq), _val(mask)
    total = weights.pred * p + lam * i + weights.freq * f + weights.mask * m
    return LossBreakdown(pred=p, inv=i, freq=f, mask=m,
                         lambda_inv_current=lam, total=total)


def combine(pred, inv, freq, mask, epoch: int, weights: LossWeights):
    """Differentiable counterpart of total_loss for the training step."""
    lam = lambda_inv(epoch, weights)
    return weights.pred * pred + lam * inv + weights.freq * freq + weights.mask * mask
