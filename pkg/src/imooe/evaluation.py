"""Zero-shot evaluation: nMSE and banded spectral RMSE per environment,
split-level aggregates, and the ID-OOD correlation fit.

Metrics are computed in raw data space: model outputs are de-normalized with
the checkpoint's training statistics before comparison. The evaluation path is
strictly read-only for the model (no gradient step anywhere).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .model import load_checkpoint
from .spectral import default_bands, radial_band_rmse
from .training import LoadedSplit, load_split


def nmse(pred_seq, true_seq) -> float:
    """Forecast-block squared error over target-block energy."""
    p = np.asarray(pred_seq, dtype=np.float64)
    t = np.asarray(true_seq, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    denom = np.sum(t * t)
    if denom == 0:
        raise ValueError("zero-norm target sequence")
    return float(np.sum((p - t) ** 2) / denom)


def frmse(pred_seq, true_seq) -> tuple[float, float, float, float]:
    """(total, low, mid, high) spectral RMSE with the default wavenumber bands."""
    h = np.asarray(true_seq).shape[-2]
    total = radial_band_rmse(pred_seq, true_seq, [(0, h // 2)])[0]
    low, mid, high = radial_band_rmse(pred_seq, true_seq, default_bands(h))
    return total, low, mid, high


@dataclass
class EnvRecord:
    env_id: int
    split: str
    nmse: float
    frmse_total: float
    frmse_low: float
    frmse_mid: float
    frmse_high: float


METRIC_NAMES = ("nmse", "frmse_total", "frmse_low", "frmse_mid", "frmse_high")


@dataclass
class MetricsReport:
    records: list[EnvRecord]
    aggregates: dict     # split -> metric -> {"mean": .., "std": ..}

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records],
                "aggregates": self.aggregates}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(records=[EnvRecord(**r) for r in d["records"]],
                   aggregates=d["aggregates"])

    def split_mean(self, split: str, metric: str = "nmse") -> float:
        return self.aggregates[split][metric]["mean"]


def aggregate(records: list[EnvRecord]) -> dict:
    """Population mean/std of each metric per split, recomputable from records."""
    out: dict = {}
    for split in sorted({r.split for r in records}):
        vals = [r for r in records if r.split == split]
        out[split] = {}
        for name in METRIC_NAMES:
            arr = np.array([getattr(r, name) for r in vals], dtype=np.float64)
            out[split][name] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return out


def _denorm_np(x: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"]).reshape(1, 1, -1, 1, 1)
    std = np.asarray(stats["std"]).reshape(1, 1, -1, 1, 1)
    return x * std + mean


def evaluate_split(model, payload, data: LoadedSplit) -> list[EnvRecord]:
    """Rollout every trajectory of every environment from its observed window."""
    window = payload["expert_cfg"]["window"]
    dtype = next(model.parameters()).dtype
    records = []
    model.eval()
    with torch.no_grad():
        for env in sorted(data.env_ids):
            arr = data.arrays[env]                      # normalized [n, Nt, C, H, W]
            raw = data.raw[env].astype(np.float64)
            steps = arr.shape[1] - window
            hist = torch.as_tensor(arr[:, :window], dtype=dtype)
            cond = torch.as_tensor(
                np.stack([data.conds[env]] * arr.shape[0]), dtype=dtype)
            pred = model.rollout(hist, steps, cond).cpu().numpy()
            pred_raw = _denorm_np(pred.astype(np.float64), data.norm_stats)
            true_raw = raw[:, window:]
            vals = np.array([
                [nmse(pred_raw[i], true_raw[i]), *frmse(pred_raw[i], true_raw[i])]
                for i in range(arr.shape[0])
            ])
            mean = vals.mean(axis=0)
            records.append(EnvRecord(
                env_id=int(env), split=data.manifest.split, nmse=float(mean[0]),
                frmse_total=float(mean[1]), frmse_low=float(mean[2]),
                frmse_mid=float(mean[3]), frmse_high=float(mean[4])))
    return records


def report(ckpt_path: str, split_paths) -> MetricsReport:
    """Frozen-checkpoint metrics over one or more dataset splits."""
    if isinstance(split_paths, (str, bytes)):
        split_paths = [split_paths]
    if isinstance(split_paths, dict):
        split_paths = list(split_paths.values())
    model, payload = load_checkpoint(ckpt_path)
    records = []
    for path in split_paths:
        data = load_split(path, norm_stats=payload["norm_stats"],
                          cond_stats=payload["cond_stats"],
                          cond_mode=payload.get("cond_mode", "params"))
        records.extend(evaluate_split(model, payload, data))
    return MetricsReport(records=records, aggregates=aggregate(records))


def save_report(rep: MetricsReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)


def load_report(path: str) -> MetricsReport:
    with open(path) as fh:
        return MetricsReport.from_dict(json.load(fh))


# ------------------------------------------------------------- ID-OOD fit

@dataclass
class IdOodFit:
    points: list           # (run_tag, id_error, ood_error)
    slope: float
    intercept: float
    r2: float


def id_ood_fit(points) -> IdOodFit:
    """Ordinary least squares of OOD error on ID error across runs."""
    pts = [(str(tag), float(x), float(y)) for tag, x, y in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    x = np.array([p[1] for p in pts])
    y = np.array([p[2] for p in pts])
    var = np.var(x)
    if var == 0:
        raise ValueError("degenerate regressor: all id_error values equal")
    slope = float(np.cov(x, y, bias=True)[0, 1] / var)
    intercept = float(y.mean() - slope * x.mean())
    res = y - (slope * x + intercept)
    ss_res = float(np.sum(res**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return IdOodFit(points=pts, slope=slope, intercept=intercept, r2=r2)


# ------------------------------------------------------------- artifacts

def report_tables(rep: MetricsReport, out_dir: str) -> list[str]:
    """One CSV of per-environment errors per split."""
    import csv
    import os
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for split in sorted({r.split for r in rep.records}):
        path = os.path.join(out_dir, f"errors_{split or 'all'}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env_id", *METRIC_NAMES])
            for r in sorted((r for r in rep.records if r.split == split),
                            key=lambda r: r.env_id):
                writer.writerow([r.env_id] + [f"{getattr(r, m):.6e}" for m in METRIC_NAMES])
        paths.append(path)
    return paths


def render_showcase(ckpt_path: str, split_path: str, out_dir: str,
                    n_envs: int = 2) -> list[str]:
    """Side-by-side truth/forecast/error panels for a few environments."""
    import os
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    model, payload = load_checkpoint(ckpt_path)
    data = load_split(split_path, norm_stats=payload["norm_stats"],
                      cond_stats=payload["cond_stats"],
                      cond_mode=payload.get("cond_mode", "params"))
    window = payload["expert_cfg"]["window"]
    dtype = next(model.parameters()).dtype
    paths = []
    model.eval()
    with torch.no_grad():
        for env in sorted(data.env_ids)[:n_envs]:
            arr = data.arrays[env]
            steps = arr.shape[1] - window
            hist = torch.as_tensor(arr[:1, :window], dtype=dtype)
            cond = torch.as_tensor(data.conds[env][None], dtype=dtype)
            pred = model.rollout(hist, steps, cond)[0].numpy()
            pred = _denorm_np(pred[None], data.norm_stats)[0]
            true = data.raw[env][0, window:].astype(np.float64)
            picks = [0, steps // 2, steps - 1]
            fig, axes = plt.subplots(3, len(picks), figsize=(3 * len(picks), 8))
            for j, t in enumerate(picks):
                for row, (img, label) in enumerate(
                        [(true[t, 0], "truth"), (pred[t, 0], "forecast"),
                         (pred[t, 0] - true[t, 0], "error")]):
                    ax = axes[row, j]
                    im = ax.imshow(img, cmap="RdBu_r")
                    ax.set_title(f"{label} t+{t + 1}")
                    ax.axis("off")
                    fig.colorbar(im, ax=ax, fraction=0.046)
            path = os.path.join(out_dir, f"showcase_env{env:04d}.png")
            fig.tight_layout()
            fig.savefig(path, dpi=110)
            plt.close(fig)
            paths.append(path)
    return paths


def render_id_ood(fit: IdOodFit, path: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.array([p[1] for p in fit.points])
    y = np.array([p[2] for p in fit.points])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(x, y, label="runs")
    xs = np.linspace(x.min(), x.max(), 32)
    ax.plot(xs, fit.slope * xs + fit.intercept, "k--",
            label=f"slope={fit.slope:.3f}, r2={fit.r2:.3f}")
    ax.set_xlabel("ID error")
    ax.set_ylabel("OOD error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
