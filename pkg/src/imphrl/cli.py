"""Command line entry point: ``imphrl {train,eval,fit-params,export,export-heatmap}``.

Exit codes: 0 success, 1 runtime failure (diverged training, corrupt
checkpoint, degenerate fit), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .affordance import AffordanceContext, coupling_grid, write_heatmap_csv
from .calibration import DemoFormatError, FitDegenerate, fit_adaptive_params, load_demo_dir, write_fragment
from .config import (ABLATIONS, PROFILES, TASK_KINDS, ConfigError, RunConfig, apply_ablation, apply_profile,
                     load_config, make_config)

log = logging.getLogger("imphrl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
EXPORTS = ("curves", "heatmap", "compositionality", "forces", "ablation")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# helpers


def _build_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = make_config(args.task or "lift")
        env_out = os.environ.get("IMPHRL_OUTPUT_DIR")
        if env_out:
            cfg.output_dir = env_out
    if args.task and args.config and args.task != cfg.task.kind:
        raise ConfigError(f"task.kind: config says {cfg.task.kind!r} but --task {args.task!r}")
    if args.profile:
        apply_profile(cfg, args.profile)
    if args.ablation:
        apply_ablation(cfg, args.ablation)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.trace:
        cfg.trace = True
    cfg.validate()
    return cfg


def _seed_dirs(run_dir: Path) -> list[Path]:
    dirs = sorted(p for p in run_dir.glob("seed_*") if (p / "metrics.csv").exists())
    if not dirs and (run_dir / "metrics.csv").exists():
        dirs = [run_dir]
    return dirs


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise UsageError(f"{path}: missing {what}")
    return path


# ----------------------------------------------------------------------------
# verbs


def cmd_train(args: argparse.Namespace) -> int:
    from .rl.trainer import train

    cfg = _build_config(args)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    out = Path(cfg.output_dir)
    for s in seeds:
        res = train(cfg, s, out / f"seed_{s}", resume=args.resume, force=args.force)
        if res.final_eval is not None:
            print(f"seed {s}: success rate {res.final_eval.success_rate:.3f} -> {res.out_dir}")
        else:
            print(f"seed {s}: done -> {res.out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .rl.evaluate import evaluate
    from .rl.trainer import load_agent

    ckpt = _require(Path(args.checkpoint), "checkpoint")
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.yaml"
    cfg = load_config(_require(cfg_path, "config snapshot"))
    agent, header = load_agent(ckpt, cfg, force=args.force)
    seed = int(header["meta"].get("seed", 0))
    report = evaluate(agent, cfg, args.episodes, seed)
    out = Path(args.out) if args.out else ckpt.parent / f"eval_{ckpt.stem}"
    report.write(out)
    fs = report.forces
    force = f"{fs.mean:.3f} +/- {fs.std:.3f} N" if fs else "absent (no successes)"
    print(f"episodes {args.episodes}  success rate {report.success_rate:.3f}  max force {force}  -> {out}")
    return EXIT_OK


def cmd_fit_params(args: argparse.Namespace) -> int:
    d = Path(args.demo_dir)
    if not d.is_dir():
        raise UsageError(f"{d}: not a directory")
    demos = load_demo_dir(d)
    if not demos:
        raise UsageError(f"{d}: no demonstration CSV files")
    res = fit_adaptive_params(demos)
    print(f"beta {res.beta:.9g}")
    print(f"gamma_e {res.gamma_e:.9g}")
    for demo, m in zip(demos, res.mse):
        print(f"mse {demo.name} {m:.6g}")
    out = Path(args.out) if args.out else d / "fitted_params.yaml"
    write_fragment(out, res)
    print(f"fragment -> {out}")
    return EXIT_OK


def _export_curves(run: Path, out: Path) -> None:
    dirs = _seed_dirs(run)
    if not dirs:
        raise UsageError(f"{run}: no metrics.csv found")
    series = {}
    for d in dirs:
        rows = metrics.read_csv(d / "metrics.csv")
        series[d.name] = ([int(r["epoch"]) for r in rows], [float(r["return_norm"]) for r in rows])
    n = min(len(e) for e, _ in series.values())
    epochs = list(series.values())[0][0][:n]
    mean = np.mean([v[:n] for _, v in series.values()], axis=0)
    metrics.write_csv(out / "curves.csv", ["epoch", *series.keys(), "mean"],
                      [[epochs[i], *[metrics.fmt(v[i]) for _, v in series.values()], metrics.fmt(mean[i])]
                       for i in range(n)])
    metrics.line_chart_svg(out / "curves.svg", {**series, "mean": (epochs, list(mean))}, "normalized return")


def _export_heatmap(run: Path, out: Path) -> None:
    _heatmap_files(load_config(_require(_config_of(run), "config snapshot")), out)


def _heatmap_files(cfg: RunConfig, out: Path) -> None:
    ctx = AffordanceContext.from_config(np.zeros((1, 3)), cfg.affordance, cfg.controller)
    write_heatmap_csv(out / "heatmap.csv", ctx)
    dist = np.linspace(0.0, 0.2, 41)
    stiff = np.linspace(ctx.k_min[0], ctx.k_max[0], 41)
    grid = coupling_grid(dist, stiff, ctx)
    cell = 8
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{41 * cell + 60}" height="{41 * cell + 40}" '
             f'font-family="sans-serif" font-size="10">',
             '<text x="40" y="12">coupling: rows stiffness (low at top), columns distance</text>']
    for j in range(len(stiff)):
        for i in range(len(dist)):
            g = int(round(255 * (1.0 - grid[i, j])))
            parts.append(f'<rect x="{40 + i * cell}" y="{20 + j * cell}" width="{cell}" height="{cell}" '
                         f'fill="rgb({g},{g},255)"/>')
    parts.append("</svg>")
    (out / "heatmap.svg").write_text("\n".join(parts) + "\n")


def _config_of(run: Path) -> Path:
    if (run / "config.yaml").exists():
        return run / "config.yaml"
    dirs = _seed_dirs(run)
    return dirs[0] / "config.yaml" if dirs else run / "config.yaml"


def _eval_rows(d: Path) -> Optional[list[dict]]:
    p = d / "eval" / "eval_episodes.csv"
    return metrics.read_csv(p) if p.exists() else None


def _export_compositionality(run: Path, out: Path) -> None:
    dirs = _seed_dirs(run)
    rows = []
    for d in dirs:
        ev = _eval_rows(d)
        if ev is None:
            continue
        seqs = [r["sequence"].split() for r in ev if int(r["success"])]
        f = metrics.compositionality(seqs) if len(seqs) >= 2 else None
        rows.append([d.name, len(seqs), metrics.fmt(f)])
    if not rows:
        raise UsageError(f"{run}: no evaluation results")
    metrics.write_csv(out / "compositionality.csv", ["seed", "successful_sequences", "f_comp"], rows)


def _export_forces(run: Path, out: Path) -> None:
    rows, labels, means = [], [], []
    for d in _seed_dirs(run):
        ev = _eval_rows(d)
        if ev is None:
            continue
        succ = [bool(int(r["success"])) for r in ev]
        fs = metrics.force_stats([float(r["max_force"]) for r in ev], succ)
        rows.append([d.name, len(ev), metrics.fmt(float(np.mean(succ))), metrics.fmt(fs.mean if fs else None),
                     metrics.fmt(fs.std if fs else None), metrics.fmt(fs.max if fs else None)])
        labels.append(d.name)
        means.append(fs.mean if fs else None)
    if not rows:
        raise UsageError(f"{run}: no evaluation results")
    metrics.write_csv(out / "forces.csv", ["seed", "episodes", "success_rate", "mean_max_force", "std_max_force",
                                           "max_max_force"], rows)
    metrics.bar_chart_svg(out / "forces.svg", labels, means, "mean max force over successes (N)")


def arm_summary(arm_dir: Path, arm: str) -> metrics.ArmSummary:
    evals, curves = [], []
    for d in _seed_dirs(arm_dir):
        ev = _eval_rows(d)
        if ev is not None:
            evals.append(ev)
        rows = metrics.read_csv(d / "metrics.csv")
        curves.append(([int(r["epoch"]) for r in rows], [float(r["return_norm"]) for r in rows]))
    return metrics.summarize_arm(arm, evals, curves)


def _export_ablation(run: Path, out: Path) -> None:
    arms = {a: arm_summary(run / a, a) for a in ABLATIONS if (run / a).is_dir()}
    if not arms:
        raise UsageError(f"{run}: no arm directories ({', '.join(ABLATIONS)})")
    metrics.ablation_report(arms, out / "ablation.csv", out / "ablation.svg")


def cmd_export(args: argparse.Namespace) -> int:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise UsageError(f"{run}: run directory not found")
    out = Path(args.out) if args.out else run / "exports"
    out.mkdir(parents=True, exist_ok=True)
    {"curves": _export_curves, "heatmap": _export_heatmap, "compositionality": _export_compositionality,
     "forces": _export_forces, "ablation": _export_ablation}[args.what](run, out)
    print(f"{args.what} -> {out}")
    return EXIT_OK


def cmd_export_heatmap(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else make_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _heatmap_files(cfg, out)
    print(f"heatmap -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imphrl", description="Impedance-primitive hierarchical RL on desk-scale tasks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", help="train one or more seeds")
    t.add_argument("config", nargs="?", help="YAML run config (defaults when omitted)")
    t.add_argument("--task", choices=TASK_KINDS)
    t.add_argument("--seed", type=int)
    t.add_argument("--profile", choices=PROFILES, help="replace the train block with this profile's values")
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--trace", action="store_true", help="write per-tick telemetry CSV")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--force", action="store_true", help="accept a checkpoint with a different config hash")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="config snapshot (default: config.yaml beside the checkpoint)")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--out")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit-params", help="fit adaptive-law constants from demonstration CSVs")
    f.add_argument("demo_dir")
    f.add_argument("--out", help="fragment path (default: <demo_dir>/fitted_params.yaml)")
    f.set_defaults(func=cmd_fit_params)

    x = sub.add_parser("export", help="export figure data from a run directory")
    x.add_argument("run_dir")
    x.add_argument("what", choices=EXPORTS)
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)

    h = sub.add_parser("export-heatmap", help="affordance coupling grid (distance x stiffness) without a run")
    h.add_argument("--config", help="run config supplying affordance and stiffness constants")
    h.add_argument("--out", default="exports")
    h.set_defaults(func=cmd_export_heatmap)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .rl.checkpoint import ConfigMismatch
    from .rl.sac import CheckpointCorrupt, TrainingDiverged

    try:
        return args.func(args)
    except (ConfigError, UsageError, DemoFormatError, ConfigMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CheckpointCorrupt, FitDegenerate, metrics.InsufficientData) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
