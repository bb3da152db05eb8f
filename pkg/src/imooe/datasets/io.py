"""Dataset container: one directory per (system, split) holding manifest.json
and data.h5 with one group per environment (`env_0000/u`, shape
[n_traj, N_t, C, H, W] float32, C-order)."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import h5py
import numpy as np

from .solvers import simulate
from .systems import Environment, get_system, sample_environments

SCHEMA_VERSION = 1
ARRAY_LAYOUT = "env_{id:04d}/u [n_traj, n_t, C, H, W] float32 C-order"


@dataclass
class DatasetManifest:
    schema_version: int
    system_id: str
    split: str
    resolution: int
    n_t: int
    dt_saved: float
    dx: float
    dy: float
    environments: list[Environment]
    normalization: dict | None    # {"mean": [C], "std": [C]}; train split only
    dtype: str = "float32"
    layout: str = ARRAY_LAYOUT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["environments"] = [asdict(e) for e in self.environments]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        envs = [Environment(**e) for e in d["environments"]]
        return cls(**{**d, "environments": envs})


def channel_stats(arrays: list[np.ndarray]) -> dict:
    """Per-channel mean/std over every frame of every trajectory (float64 accum)."""
    c = arrays[0].shape[2]
    flat = np.concatenate([a.reshape(-1, c, a.shape[-2] * a.shape[-1]).astype(np.float64)
                           for a in arrays], axis=0)
    mean = flat.mean(axis=(0, 2))
    std = flat.std(axis=(0, 2))
    return {"mean": mean.tolist(), "std": std.tolist()}


def normalize(u: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"], dtype=u.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(stats["std"], dtype=u.dtype).reshape(1, -1, 1, 1)
    return (u - mean) / std


def denormalize(u: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"], dtype=u.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(stats["std"], dtype=u.dtype).reshape(1, -1, 1, 1)
    return u * std + mean


def write_dataset(manifest: DatasetManifest, trajectories: dict[int, np.ndarray],
                  path: str) -> None:
    """Persist manifest + arrays; rejects invalid normalization and shape drift."""
    system = get_system(manifest.system_id)
    if manifest.normalization is not None:
        std = np.asarray(manifest.normalization["std"])
        if not (std > 0).all():
            raise ValueError("normalization std must be > 0 per channel")
    expect = (manifest.n_t, system.channels, manifest.resolution, manifest.resolution)
    for env in manifest.environments:
        arr = trajectories[env.env_id]
        if arr.shape[1:] != expect:
            raise ValueError(
                f"env {env.env_id}: array shape {arr.shape[1:]} != manifest {expect}")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    with h5py.File(os.path.join(path, "data.h5"), "w") as fh:
        for env in manifest.environments:
            grp = fh.create_group(f"env_{env.env_id:04d}")
            grp.create_dataset("u", data=trajectories[env.env_id].astype(np.float32))


def read_dataset(path: str) -> tuple[DatasetManifest, dict[int, np.ndarray]]:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = DatasetManifest.from_dict(json.load(fh))
    if manifest.schema_version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {manifest.schema_version}")
    system = get_system(manifest.system_id)
    expect = (manifest.n_t, system.channels, manifest.resolution, manifest.resolution)
    out = {}
    with h5py.File(os.path.join(path, "data.h5"), "r") as fh:
        for env in manifest.environments:
            arr = fh[f"env_{env.env_id:04d}"]["u"][...]
            if arr.shape[1:] != expect:
                raise ValueError(
                    f"env {env.env_id}: stored shape {arr.shape[1:]} != manifest {expect}")
            out[env.env_id] = arr
    return manifest, out


def _simulate_one(args):
    env, traj_seed, resolution = args
    return env.env_id, traj_seed, simulate(env, traj_seed, resolution=resolution).u


def build_dataset(system_id: str, split: str, n_envs: int, n_traj: int,
                  resolution: int, seed: int, out_dir: str,
                  workers: int = 1) -> str:
    """Sample environments, simulate all trajectories, and write the container.

    Trajectory seeds are the trajectory indices; simulation parallelizes over
    (env, trajectory) pairs while a single writer persists the results.
    Normalization stats are computed only for the training split.
    """
    system = get_system(system_id)
    envs = sample_environments(system, split, n_envs, seed)
    jobs = [(env, t, resolution) for env in envs for t in range(n_traj)]

    results: dict[int, dict[int, np.ndarray]] = {e.env_id: {} for e in envs}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for env_id, t, u in pool.map(_simulate_one, jobs, chunksize=1):
                results[env_id][t] = u
    else:
        for job in jobs:
            env_id, t, u = _simulate_one(job)
            results[env_id][t] = u

    trajectories = {
        env_id: np.stack([per_traj[t] for t in range(n_traj)])
        for env_id, per_traj in results.items()
    }
    normalization = (channel_stats(list(trajectories.values()))
                     if split == "train_id" else None)
    dx = system.domain[0] / resolution
    manifest = DatasetManifest(
        schema_version=SCHEMA_VERSION, system_id=system_id, split=split,
        resolution=resolution, n_t=system.n_t, dt_saved=system.dt_saved,
        dx=dx, dy=dx, environments=envs, normalization=normalization)
    path = os.path.join(out_dir, system_id, split)
    write_dataset(manifest, trajectories, path)
    return path


def cond_param_order(system_id: str) -> list[str]:
    """Conditioning vector layout: sampled params in manifest order, then fixed ones."""
    system = get_system(system_id)
    fixed = [n for n in system.fixed_params if n not in system.param_names]
    return list(system.param_names) + fixed


def cond_vector(env: Environment, order: list[str]) -> np.ndarray:
    params = env.all_params
    return np.array([params[name] for name in order], dtype=np.float64)


def cond_stats_from_envs(envs: list[Environment], order: list[str]) -> dict:
    """Mean/std of each conditioning entry over the training environments."""
    mat = np.stack([cond_vector(e, order) for e in envs])
    return {"order": list(order), "mean": mat.mean(axis=0).tolist(),
            "std": mat.std(axis=0).tolist()}


def normalized_cond(env: Environment, stats: dict) -> np.ndarray:
    """Z-scored conditioning vector; constant entries (std 0) map to 0."""
    vec = cond_vector(env, stats["order"])
    mean = np.asarray(stats["mean"])
    std = np.asarray(stats["std"])
    out = np.zeros_like(vec)
    nz = std > 0
    out[nz] = (vec[nz] - mean[nz]) / std[nz]
    return out
