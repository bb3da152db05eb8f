"""PDE system descriptors and environment sampling.

An *environment* is one draw of the variable physical context of a system
(coefficients and/or forcing parameters). Training environments come from the
in-distribution (ID) parameter ranges, OOD test environments from disjoint
ranges. Some systems use a union of two OOD intervals (below and above the
ID range).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train_id", "test_id", "test_ood")

# Numeric codes folded into seed sequences so draws differ per (system, split).
_SYSTEM_CODE = {"dr": 1, "ns": 2, "bg": 3, "sw": 4, "hc": 5}
_SPLIT_CODE = {"train_id": 1, "test_id": 2, "test_ood": 3}


@dataclass(frozen=True)
class ParamRange:
    """Union of closed intervals; sampling is half-open at each upper endpoint."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for lo, hi in self.intervals:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")

    @property
    def lo(self) -> float:
        return min(lo for lo, _ in self.intervals)

    @property
    def hi(self) -> float:
        return max(hi for _, hi in self.intervals)

    def contains(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def sample(self, rng: np.random.Generator) -> float:
        """Pick an interval with probability proportional to its length, then uniform."""
        lengths = np.array([hi - lo for lo, hi in self.intervals])
        u = rng.uniform(0.0, lengths.sum())
        edges = np.cumsum(lengths)
        i = int(np.searchsorted(edges, u, side="right"))
        i = min(i, len(self.intervals) - 1)
        lo, hi = self.intervals[i]
        return float(rng.uniform(lo, hi))


def _rng(*intervals) -> ParamRange:
    return ParamRange(tuple(intervals))


@dataclass(frozen=True)
class SystemSpec:
    """Static description of one PDE system: state layout, domain, horizon, ranges."""

    system_id: str
    channels: int
    domain: tuple[float, float]          # (Lx, Ly); all domains start at 0
    t_end: float
    n_t: int                             # saved steps, including t=0
    param_names: tuple[str, ...]         # sampled parameters, in manifest order
    forcing_names: tuple[str, ...]       # subset of names that live in the forcing term
    id_ranges: dict[str, ParamRange]
    ood_ranges: dict[str, ParamRange]
    fixed_params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.system_id not in _SYSTEM_CODE:
            raise ValueError(f"unknown system id {self.system_id!r}")
        for name in self.param_names:
            id_r, ood_r = self.id_ranges[name], self.ood_ranges[name]
            for lo, hi in ood_r.intervals:
                # touching endpoints are fine: ID sampling is half-open at the top
                # and the shared value has probability zero anyway
                if not (hi <= id_r.lo or lo >= id_r.hi):
                    raise ValueError(
                        f"{self.system_id}/{name}: OOD interval [{lo},{hi}] overlaps "
                        f"ID range [{id_r.lo},{id_r.hi}]"
                    )

    @property
    def dt_saved(self) -> float:
        return self.t_end / (self.n_t - 1)

    def ranges_for(self, split: str) -> dict[str, ParamRange]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return self.ood_ranges if split == "test_ood" else self.id_ranges


@dataclass(frozen=True)
class Environment:
    """One sampled physical context; `seed` drives every stochastic draw for it."""

    env_id: int
    system_id: str
    p: dict[str, float]
    f_desc: dict[str, float]
    split: str
    seed: int

    @property
    def all_params(self) -> dict[str, float]:
        return {**self.p, **self.f_desc}


SYSTEMS: dict[str, SystemSpec] = {
    "dr": SystemSpec(
        system_id="dr", channels=2, domain=(2.0, 2.0), t_end=20.0, n_t=21,
        param_names=("D_u", "D_v", "k"), forcing_names=(),
        id_ranges={"D_u": _rng((1e-3, 2e-3)), "D_v": _rng((5e-3, 1e-2)),
                   "k": _rng((5e-3, 1e-2))},
        ood_ranges={"D_u": _rng((2e-3, 3e-3)), "D_v": _rng((1e-2, 1.5e-2)),
                    "k": _rng((1e-2, 1.5e-2))},
    ),
    "ns": SystemSpec(
        system_id="ns", channels=1, domain=(1.0, 1.0), t_end=50.0, n_t=31,
        param_names=("nu",), forcing_names=("w",),
        id_ranges={"nu": _rng((1e-5, 1e-3))},
        ood_ranges={"nu": _rng((5e-6, 8e-6), (1.2e-3, 2e-3))},
        fixed_params={"w": 2.0},
    ),
    "bg": SystemSpec(
        system_id="bg", channels=2, domain=(64.0, 64.0), t_end=1.0, n_t=21,
        param_names=("nu",), forcing_names=(),
        id_ranges={"nu": _rng((5e-3, 5e-2))},
        ood_ranges={"nu": _rng((2.5e-3, 4e-3), (6e-2, 1e-1))},
    ),
    "sw": SystemSpec(
        system_id="sw", channels=1, domain=(5.0, 5.0), t_end=1.0, n_t=21,
        param_names=("radius",), forcing_names=(),
        id_ranges={"radius": _rng((0.3, 0.63))},
        ood_ranges={"radius": _rng((0.63, 0.7))},
    ),
    "hc": SystemSpec(
        system_id="hc", channels=1, domain=(1.0, 1.0), t_end=5.0, n_t=21,
        param_names=("m1", "m2", "m3"), forcing_names=("m1", "m2", "m3", "A"),
        id_ranges={"m1": _rng((1.0, 2.0)), "m2": _rng((5.0, 10.0)),
                   "m3": _rng((1.0, 2.0))},
        ood_ranges={"m1": _rng((2.0, 3.0)), "m2": _rng((10.0, 15.0)),
                    "m3": _rng((2.0, 3.0))},
        fixed_params={"A": 200.0},
    ),
}


def get_system(system_id: str) -> SystemSpec:
    try:
        return SYSTEMS[system_id]
    except KeyError:
        raise ValueError(f"unknown system id {system_id!r}") from None


def sample_environments(system: SystemSpec | str, split: str, n_envs: int,
                        seed: int) -> list[Environment]:
    """Draw `n_envs` environments for a split, each parameter uniform in its range.

    Deterministic: the same (system, split, n_envs, seed) gives bit-identical
    parameter lists. Sampled and fixed parameters are routed to `p` or `f_desc`
    according to the system's `forcing_names`.
    """
    if isinstance(system, str):
        system = get_system(system)
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if n_envs < 1:
        raise ValueError("n_envs must be >= 1")
    ranges = system.ranges_for(split)

    root = np.random.SeedSequence(
        [int(seed), _SYSTEM_CODE[system.system_id], _SPLIT_CODE[split]])
    envs = []
    for env_id, child in enumerate(root.spawn(n_envs)):
        rng = np.random.Generator(np.random.PCG64(child))
        values = {name: ranges[name].sample(rng) for name in system.param_names}
        values.update(system.fixed_params)
        p = {k: v for k, v in values.items() if k not in system.forcing_names}
        f_desc = {k: v for k, v in values.items() if k in system.forcing_names}
        env_seed = int(rng.integers(0, 2**63 - 1))
        envs.append(Environment(env_id=env_id, system_id=system.system_id,
                                p=p, f_desc=f_desc, split=split, seed=env_seed))
    return envs


def validate_environment(env: Environment) -> None:
    """Check every sampled parameter sits inside the range of the env's split."""
    system = get_system(env.system_id)
    ranges = system.ranges_for(env.split)
    params = env.all_params
    for name in system.param_names:
        if not ranges[name].contains(params[name]):
            raise ValueError(
                f"env {env.env_id}: {name}={params[name]} outside {env.split} range")


def trajectory_rng(env: Environment, traj_seed: int) -> np.random.Generator:
    """RNG stream fully determined by (env.seed, traj_seed)."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([env.seed & (2**63 - 1), int(traj_seed)])))
