"""Command-line entry point: dataset generation, training, evaluation,
reporting, and recipe execution.

Set IMOOE_DETERMINISTIC=1 to force single-threaded deterministic execution.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .recipes import SPLIT_ALIASES, run_recipe


def _add_generate(sub):
    p = sub.add_parser("generate", help="simulate a multi-environment dataset split")
    p.add_argument("--system", required=True, choices=["dr", "ns", "bg", "sw", "hc"])
    p.add_argument("--split", required=True, choices=["train", "id", "ood"])
    p.add_argument("--envs", type=int, required=True)
    p.add_argument("--traj", type=int, required=True)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)


def _add_train(sub):
    p = sub.add_parser("train", help="train a forecaster from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset root or split directory")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)


def _add_eval(sub):
    p = sub.add_parser("eval", help="zero-shot metrics of a frozen checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, choices=["id", "ood", "train"])
    p.add_argument("--out", required=True)


def _add_report(sub):
    p = sub.add_parser("report", help="render tables and figures from reports")
    p.add_argument("--in", dest="inputs", action="append", required=True)
    p.add_argument("--plots", required=True)
    p.add_argument("--ckpt", default=None, help="checkpoint for showcase images")
    p.add_argument("--data", default=None, help="split directory for showcase images")


def _add_recipe(sub):
    p = sub.add_parser("recipe", help="run a declarative experiment recipe")
    rsub = p.add_subparsers(dest="recipe_cmd", required=True)
    runp = rsub.add_parser("run")
    runp.add_argument("recipe")
    runp.add_argument("--workdir", required=True)
    runp.add_argument("--scale", default="desk", choices=["desk", "paper"])


def resolve_split_dir(data: str, system: str, split: str) -> str:
    """Accept either a dataset root (containing system/split) or a split dir."""
    if os.path.exists(os.path.join(data, "manifest.json")):
        return data
    candidate = os.path.join(data, system, SPLIT_ALIASES[split])
    if os.path.exists(os.path.join(candidate, "manifest.json")):
        return candidate
    raise FileNotFoundError(f"no dataset found under {data!r} for {system}/{split}")


def _cmd_generate(args) -> int:
    from .datasets import build_dataset
    path = build_dataset(args.system, SPLIT_ALIASES[args.split], args.envs,
                         args.traj, args.res, args.seed, args.out,
                         workers=args.workers)
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    import yaml

    from .training import TrainConfig, train
    with open(args.config) as fh:
        cfg = TrainConfig.from_dict(yaml.safe_load(fh) or {})
    data = args.data
    if not os.path.exists(os.path.join(data, "manifest.json")):
        data = resolve_split_dir(data, cfg.system, "train")
    ckpt, history = train(cfg, data, args.out, resume=args.resume)
    print(f"checkpoint: {ckpt} ({len(history)} steps logged)")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import report, save_report
    from .model import load_checkpoint
    _, payload = load_checkpoint(args.ckpt)
    split_dir = resolve_split_dir(args.data, payload["system_id"], args.split)
    rep = report(args.ckpt, [split_dir])
    save_report(rep, args.out)
    for split, metrics in sorted(rep.aggregates.items()):
        print(f"{split}: nmse={metrics['nmse']['mean']:.4e} "
              f"frmse={metrics['frmse_total']['mean']:.4e}")
    print(f"wrote {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .evaluation import (id_ood_fit, load_report, render_id_ood,
                             render_showcase, report_tables)
    os.makedirs(args.plots, exist_ok=True)
    reports = [load_report(p) for p in args.inputs]
    for path, rep in zip(args.inputs, reports):
        outputs = report_tables(rep, args.plots)
        print(f"{path}: wrote {', '.join(outputs)}")

    points = []
    for path, rep in zip(args.inputs, reports):
        splits = rep.aggregates
        ids = [s for s in splits if s.endswith("test_id") or s == "train_id"]
        oods = [s for s in splits if s.endswith("test_ood")]
        if ids and oods:
            points.append((os.path.basename(path),
                           splits[ids[0]]["nmse"]["mean"],
                           splits[oods[0]]["nmse"]["mean"]))
    if len(points) >= 2:
        fit = id_ood_fit(points)
        out = render_id_ood(fit, os.path.join(args.plots, "id_ood.png"))
        print(f"id-ood fit: slope={fit.slope:.3f} r2={fit.r2:.3f} ({out})")

    if args.ckpt and args.data:
        paths = render_showcase(args.ckpt, args.data, args.plots)
        print(f"showcase: {', '.join(paths)}")
    return 0


def _cmd_recipe(args) -> int:
    summary = run_recipe(args.recipe, args.workdir, scale=args.scale)
    if "comparison" in summary:
        comp = summary["comparison"]
        print(f"comparison {comp['arm_a']} vs {comp['arm_b']}: "
              f"{comp['wins']} wins -> {comp['verdict']}")
    print(f"summary: {os.path.join(args.workdir, 'summary.json')}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="imooe", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    _add_generate(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_report(sub)
    _add_recipe(sub)
    args = parser.parse_args(argv)

    if os.environ.get("IMOOE_DETERMINISTIC", "0") == "1":
        import torch
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)

    handlers = {"generate": _cmd_generate, "train": _cmd_train, "eval": _cmd_eval,
                "report": _cmd_report, "recipe": _cmd_recipe}
    try:
        return handlers[args.cmd](args)
    except Exception as exc:  # structured context for scripts, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
