"""Declarative experiment recipes: generate/train/eval stage pipelines with
per-seed replication, content-hash resume, and an optional comparison verdict.

A recipe YAML carries `stages` (each with an `id` other stages can reference),
`seeds`, per-`scale` parameter overrides (desk vs paper), and optionally a
`comparison` rule evaluated over the collated reports.
"""
from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np
import yaml

from . import evaluation
from .datasets import build_dataset
from .training import TrainConfig, train

SPLIT_ALIASES = {"train": "train_id", "id": "test_id", "ood": "test_ood",
                 "train_id": "train_id", "test_id": "test_id", "test_ood": "test_ood"}


def load_recipe(path: str) -> dict:
    with open(path) as fh:
        recipe = yaml.safe_load(fh) or {}
    recipe.setdefault("stages", [])
    recipe.setdefault("seeds", [0])
    return recipe


def _stage_hash(desc: dict) -> str:
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


def _merge(base: dict, override: dict | None) -> dict:
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve_stage(stage: dict, recipe: dict, scale: str) -> dict:
    overrides = (recipe.get("scales", {}).get(scale, {})).get(stage["kind"], {})
    return _merge(stage, overrides)


def _run_stage(stage: dict, seed: int, stage_dir: str, outputs: dict) -> dict:
    kind = stage["kind"]
    t0 = time.perf_counter()
    if kind == "generate":
        split = SPLIT_ALIASES[stage.get("split", "train")]
        path = build_dataset(
            system_id=stage["system"], split=split, n_envs=int(stage["envs"]),
            n_traj=int(stage["traj"]), resolution=int(stage.get("res", 64)),
            seed=seed + int(stage.get("seed_offset", 0)), out_dir=stage_dir,
            workers=int(stage.get("workers", 1)))
        result = {"dataset": path}
    elif kind == "train":
        cfg_dict = dict(stage.get("config", {}))
        cfg_dict.setdefault("seed", seed)
        config = TrainConfig.from_dict(cfg_dict)
        data_path = outputs[stage["data"]]["dataset"]
        ckpt, _ = train(config, data_path, stage_dir)
        result = {"checkpoint": ckpt}
    elif kind == "eval":
        ckpt = outputs[stage["ckpt"]]["checkpoint"]
        data_path = outputs[stage["data"]]["dataset"]
        rep = evaluation.report(ckpt, [data_path])
        rep_path = os.path.join(stage_dir, "report.json")
        evaluation.save_report(rep, rep_path)
        n_traj = sum(1 for _ in rep.records)
        result = {"report": rep_path,
                  "aggregates": rep.aggregates,
                  "records": [vars(r) for r in rep.records]}
        _ = n_traj
    else:
        raise ValueError(f"unknown stage kind {kind!r}")
    result["elapsed_s"] = time.perf_counter() - t0
    return result


def run_recipe(recipe_path: str, workdir: str, scale: str = "desk") -> dict:
    """Execute all stages for every seed, skipping stages whose content hash
    already completed; returns (and writes) the summary."""
    recipe = load_recipe(recipe_path)
    os.makedirs(workdir, exist_ok=True)
    summary = {"name": recipe.get("name", os.path.basename(recipe_path)),
               "scale": scale, "seeds": recipe["seeds"], "runs": {}}

    for seed in recipe["seeds"]:
        outputs: dict = {}
        seed_summary = {}
        for stage in recipe["stages"]:
            resolved = _resolve_stage(stage, recipe, scale)
            desc = {"stage": resolved, "seed": seed, "scale": scale}
            digest = _stage_hash(desc)
            stage_dir = os.path.join(workdir, f"seed_{seed}", resolved["id"])
            done_path = os.path.join(stage_dir, "done.json")
            if os.path.exists(done_path):
                with open(done_path) as fh:
                    done = json.load(fh)
                if done.get("hash") == digest:
                    outputs[resolved["id"]] = done["result"]
                    seed_summary[resolved["id"]] = {**done["result"], "cached": True}
                    continue
            os.makedirs(stage_dir, exist_ok=True)
            result = _run_stage(resolved, seed, stage_dir, outputs)
            with open(done_path, "w") as fh:
                json.dump({"hash": digest, "result": result}, fh, indent=2)
            outputs[resolved["id"]] = result
            seed_summary[resolved["id"]] = result
        summary["runs"][str(seed)] = seed_summary

    if recipe.get("comparison") and recipe["stages"]:
        summary["comparison"] = evaluate_comparison(recipe["comparison"], summary)

    with open(os.path.join(workdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _median_env_nmse(stage_result: dict, split: str) -> float:
    vals = [r["nmse"] for r in stage_result["records"] if r["split"] == split]
    return float(np.median(vals))


def evaluate_comparison(comparison: dict, summary: dict) -> dict:
    """Per-seed metric comparison between two eval stages with a majority rule."""
    kind = comparison.get("kind", "median_env_nmse")
    if kind != "median_env_nmse":
        raise ValueError(f"unknown comparison kind {kind!r}")
    split = SPLIT_ALIASES[comparison.get("split", "ood")]
    arm_a, arm_b = comparison["arm_a"], comparison["arm_b"]
    per_seed = {}
    wins = 0
    for seed, stages in summary["runs"].items():
        a = _median_env_nmse(stages[arm_a], split)
        b = _median_env_nmse(stages[arm_b], split)
        win = bool(a <= b)
        wins += int(win)
        per_seed[seed] = {"a": a, "b": b, "a_leq_b": win}
    min_wins = int(comparison.get("min_wins", (len(per_seed) // 2) + 1))
    return {"kind": kind, "split": split, "arm_a": arm_a, "arm_b": arm_b,
            "per_seed": per_seed, "wins": wins, "min_wins": min_wins,
            "verdict": "pass" if wins >= min_wins else "fail"}
