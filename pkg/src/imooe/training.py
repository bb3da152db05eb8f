"""Training loop: stratified environment batching, full-horizon autoregressive
unroll, Adam updates under the scheduled objective, JSONL loss history, and
resumable checkpointing.

Model selection is the final-epoch checkpoint; `validate` is diagnostic only
and never mutates weights.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .datasets import (cond_param_order, cond_stats_from_envs, get_system,
                       normalize, normalized_cond, read_dataset)
from .model import (ExpertConfig, FusionConfig, MooeModel, RolloutBlowupError,
                    build_model, load_checkpoint, save_checkpoint)
from .objectives import (LossBreakdown, LossWeights, combine, lambda_inv,
                         mask_diversity_loss, risk_table, risk_variance,
                         total_loss)
from .spectral import freq_weighted_sq_error_per_sample

FUSION_DEFAULT = {"ns": "nonlinear"}
PARTITION_DEFAULT = {"ns": "by_env_and_step", "bg": "by_env_and_step"}


class TrainDivergedError(RuntimeError):
    pass


def deterministic_requested(flag: bool | None) -> bool:
    if flag is not None:
        return flag
    return os.environ.get("IMOOE_DETERMINISTIC", "0") == "1"


@dataclass
class TrainConfig:
    system: str = "dr"
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "f32"            # "f32" | "f64"
    device: str = "cpu"
    k: int = 2
    layers: int = 4
    width: int = 64
    modes: int = 16
    window: int = 10
    fusion: str | None = None         # None -> per-system default
    head_width: int = 64
    fusion_width: int = 128
    fusion_depth: int = 2
    partition: str | None = None      # None -> per-system default
    step_bucket: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    scale_schedule: bool = True       # shrink warmup/ramp to the epoch budget
    temperature: float = 1.0
    straight_through: bool = False
    mask_select: bool = True          # False: masks pinned to ones (ablation)
    cond_mode: str = "params"         # "params" | "ones"
    truncate_unroll: int = 0          # 0 = full-horizon gradient
    checkpoint_every: int = 0
    lr_schedule: str = "none"         # "none" | "cosine"
    deterministic: bool | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.fusion is None:
            self.fusion = FUSION_DEFAULT.get(self.system, "additive")
        if self.partition is None:
            self.partition = PARTITION_DEFAULT.get(self.system, "by_env")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def effective_weights(self) -> LossWeights:
        if self.scale_schedule and self.epochs != self.weights.total_epochs:
            if self.epochs == 0:
                return self.weights
            return self.weights.scaled_to(self.epochs)
        return self.weights

    def mask_mode(self) -> str:
        if not self.mask_select:
            return "ones"
        return "straight_through" if self.straight_through else "soft"


@dataclass
class LoadedSplit:
    """A dataset split in model space: z-scored arrays plus conditioning vectors."""

    manifest: object
    arrays: dict[int, np.ndarray]
    raw: dict[int, np.ndarray]
    conds: dict[int, np.ndarray]
    env_ids: list[int]
    norm_stats: dict
    cond_stats: dict


def load_split(path: str, norm_stats: dict | None = None,
               cond_stats: dict | None = None, cond_mode: str = "params") -> LoadedSplit:
    manifest, raw = read_dataset(path)
    stats = norm_stats if norm_stats is not None else manifest.normalization
    if stats is None:
        raise ValueError(
            f"{path}: no normalization stats in manifest; pass the training stats")
    if cond_stats is None:
        order = cond_param_order(manifest.system_id)
        cond_stats = cond_stats_from_envs(manifest.environments, order)
    conds = {}
    for env in manifest.environments:
        if cond_mode == "ones":
            conds[env.env_id] = np.ones(1)
        else:
            conds[env.env_id] = normalized_cond(env, cond_stats)
    arrays = {eid: normalize(u, stats) for eid, u in raw.items()}
    return LoadedSplit(manifest=manifest, arrays=arrays, raw=raw, conds=conds,
                       env_ids=sorted(arrays), norm_stats=stats,
                       cond_stats=cond_stats)


def batch_schedule(counts: dict[int, int], batch_size: int,
                   rng: np.random.Generator) -> list[list[tuple[int, int]]]:
    """Stratified round-robin batches: environments rotate so each appears in
    every batch when batch_size >= n_envs, and at least once per epoch otherwise."""
    env_ids = sorted(counts)
    pools = {e: rng.permutation(counts[e]).tolist() for e in env_ids}
    cursor = {e: 0 for e in env_ids}
    total = sum(counts.values())
    n_batches = max(1, total // batch_size)
    batches = []
    slot = 0
    for _ in range(n_batches):
        batch = []
        while len(batch) < batch_size:
            e = env_ids[slot % len(env_ids)]
            if cursor[e] >= len(pools[e]):
                pools[e] = rng.permutation(counts[e]).tolist()
                cursor[e] = 0
            batch.append((e, int(pools[e][cursor[e]])))
            cursor[e] += 1
            slot += 1
        batches.append(batch)
    return batches


def _rollout_maybe_truncated(model, hist, steps, cond, chunk):
    if chunk <= 0 or chunk >= steps:
        return model.rollout(hist, steps, cond)
    preds = []
    window = hist
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        p = model.rollout(window, n, cond)
        preds.append(p)
        window = torch.cat([window[:, n:], p], dim=1)[:, -hist.shape[1]:].detach()
        done += n
    return torch.cat(preds, dim=1)


def _batch_tensors(data: LoadedSplit, batch, dtype, device):
    u = torch.as_tensor(
        np.stack([data.arrays[e][t] for e, t in batch]), dtype=dtype, device=device)
    cond = torch.as_tensor(
        np.stack([data.conds[e] for e, _ in batch]), dtype=dtype, device=device)
    env_ids = [e for e, _ in batch]
    return u, cond, env_ids


def compute_losses(model: MooeModel, pred, true, env_ids, config: TrainConfig):
    """Per-environment risks, their variance, the spectral risk, and mask loss."""
    e_bt = ((pred - true) ** 2).mean(dim=(-3, -2, -1))
    pred_table = risk_table(e_bt, env_ids, "by_env")
    pred_risk = torch.stack([pred_table[k] for k in sorted(pred_table)]).mean()

    var_table = (pred_table if config.partition == "by_env"
                 else risk_table(e_bt, env_ids, config.partition, config.step_bucket))
    inv = risk_variance(var_table)

    f_bt = freq_weighted_sq_error_per_sample(pred - true)
    freq_table = risk_table(f_bt, env_ids, "by_env")
    freq = torch.stack([freq_table[k] for k in sorted(freq_table)]).mean()

    mask = mask_diversity_loss(model.masks.soft())
    return pred_risk, inv, freq, mask


def _save_train_checkpoint(path, model, opt, epoch, sched_rng, config, data):
    save_checkpoint(
        path, model,
        system_id=data.manifest.system_id,
        resolution=data.manifest.resolution,
        norm_stats=data.norm_stats,
        cond_stats=data.cond_stats,
        extra={
            "train_config": config.to_dict(),
            "cond_mode": config.cond_mode,
            "train_state": {
                "optimizer": opt.state_dict(),
                "epoch": epoch,
                "torch_rng": torch.get_rng_state(),
                "sched_rng": sched_rng.bit_generator.state,
            },
        })


def train(config: TrainConfig, data: LoadedSplit | str, out_dir: str,
          resume: str | None = None):
    """Run the training loop; returns (final checkpoint path, history records).

    Deterministic given the seed (and exactly resumable at f64): the batch
    schedule, weight init, and every reduction are driven by saved RNG state.
    """
    if isinstance(data, str):
        data = load_split(data, cond_mode=config.cond_mode)
    if data.manifest.system_id != config.system:
        raise ValueError(
            f"config system {config.system!r} != dataset {data.manifest.system_id!r}")

    # small-tensor workload: intra-op parallelism only adds sync overhead
    torch.set_num_threads(1)
    if deterministic_requested(config.deterministic):
        torch.use_deterministic_algorithms(True)

    dtype = torch.float64 if config.precision == "f64" else torch.float32
    device = torch.device(config.device)
    system = get_system(config.system)
    weights = config.effective_weights()

    torch.manual_seed(config.seed)
    sched_rng = np.random.default_rng(config.seed + 1)

    cond_dim = len(next(iter(data.conds.values())))
    expert_cfg = ExpertConfig(k=config.k, layers=config.layers, width=config.width,
                              modes=config.modes, window=config.window)
    fusion_cfg = FusionConfig(mode=config.fusion, head_width=config.head_width,
                              fusion_width=config.fusion_width,
                              fusion_depth=config.fusion_depth, cond_dim=cond_dim)
    model = build_model(system.channels, expert_cfg, fusion_cfg,
                        grid_extent=system.domain, precision=config.precision,
                        mask_mode=config.mask_mode(),
                        temperature=config.temperature).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr,
                           betas=(config.beta1, config.beta2), eps=config.adam_eps)

    start_epoch = 0
    if resume is not None:
        loaded, payload = load_checkpoint(resume)
        model.load_state_dict(loaded.state_dict())
        model = model.to(device=device, dtype=dtype)
        state = payload["train_state"]
        opt.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])
        sched_rng.bit_generator.state = state["sched_rng"]
        start_epoch = state["epoch"]

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "model.pt")
    history_path = os.path.join(out_dir, "history.jsonl")
    history: list[LossBreakdown] = []
    last_good = None

    n_t = data.manifest.n_t
    steps_n = n_t - config.window
    if steps_n < 1:
        raise ValueError(f"window {config.window} leaves no frames to forecast")
    counts = {e: data.arrays[e].shape[0] for e in data.env_ids}

    hist_mode = "a" if resume is not None else "w"
    with open(history_path, hist_mode) as hist_fh:
        for epoch in range(start_epoch, config.epochs):
            if config.lr_schedule == "cosine":
                scale = 0.5 * (1 + math.cos(math.pi * epoch / max(config.epochs, 1)))
                for group in opt.param_groups:
                    group["lr"] = config.lr * scale
            batches = batch_schedule(counts, min(config.batch_size, sum(counts.values())),
                                     sched_rng)
            for step, batch in enumerate(batches):
                u, cond, env_ids = _batch_tensors(data, batch, dtype, device)
                hist = u[:, :config.window]
                true = u[:, config.window:]
                try:
                    pred = _rollout_maybe_truncated(model, hist, steps_n, cond,
                                                    config.truncate_unroll)
                except RolloutBlowupError as exc:
                    raise TrainDivergedError(
                        f"rollout blew up at epoch {epoch} step {step} "
                        f"({exc}); last good checkpoint: {last_good or 'none'}"
                    ) from exc
                p, i, f, m = compute_losses(model, pred, true, env_ids, config)
                loss = combine(p, i, f, m, epoch, weights)
                if not torch.isfinite(loss):
                    raise TrainDivergedError(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"last good checkpoint: {last_good or 'none'}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                breakdown = total_loss(p, i, f, m, epoch, weights)
                history.append(breakdown)
                hist_fh.write(json.dumps({
                    "epoch": epoch, "step": step, "pred": breakdown.pred,
                    "inv": breakdown.inv, "freq": breakdown.freq,
                    "mask": breakdown.mask,
                    "lambda_inv": breakdown.lambda_inv_current,
                    "total": breakdown.total}) + "\n")
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                path = os.path.join(out_dir, f"model_ep{epoch + 1:05d}.pt")
                _save_train_checkpoint(path, model, opt, epoch + 1, sched_rng,
                                       config, data)
                last_good = path

    _save_train_checkpoint(ckpt_path, model, opt, config.epochs, sched_rng,
                           config, data)
    return ckpt_path, history


def validate(ckpt_path: str, split_path: str):
    """Frozen-checkpoint rollout metrics on a split; never updates weights."""
    from .evaluation import report
    return report(ckpt_path, {"": split_path})
