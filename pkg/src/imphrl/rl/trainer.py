"""Training loop: exploration epochs, gradient steps, evaluation and checkpoints.

Run directory contents::

    config.yaml        full config snapshot
    run.json           seed and config hash
    metrics.csv        one row per epoch
    episodes.csv       one row per exploration decision
    eval/              greedy evaluation of the final policy
    ckpt_XXXX.bin      checkpoints; latest.bin mirrors the newest
    trace.csv          per-tick telemetry when tracing is enabled
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .. import envs
from ..config import RunConfig
from ..metrics import episode_score, fmt, normalize_scores, read_csv, rolling_mean, write_csv
from ..sim import append_trace_csv
from .action import ParamSpace
from .buffer import ReplayBuffer
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluate import EvalReport, evaluate, explore_seed
from .sac import HybridSAC, TrainingDiverged

log = logging.getLogger(__name__)

CURVE_WINDOW = 20
METRICS_HEADER = ["epoch", "episodes", "explore_units", "return_norm", "explore_success", "eval_return_norm",
                  "success_rate", "mean_max_force", "alpha_h", "alpha_l", "q_loss", "policy_loss", "entropy_h"]


@dataclass
class TrainResult:
    out_dir: Path
    metrics: list[dict[str, str]]
    final_eval: Optional[EvalReport]


class Trainer:
    def __init__(self, cfg: RunConfig, seed: int, out_dir: str | Path):
        self.cfg = cfg
        self.seed = int(seed)
        self.out = Path(out_dir)
        torch.set_num_threads(cfg.train.torch_threads)
        kind = cfg.task.kind
        self.space = ParamSpace(cfg.controller, cfg.primitives)
        self.agent = HybridSAC(envs.obs_dim(kind), cfg.train, self.space, envs.obs_scale(kind), seed=self.seed)
        self.buffer = ReplayBuffer(envs.obs_dim(kind), cfg.train.buffer_size)
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 2]))
        self.epoch = 0
        self.episode_index = 0
        self.scores: list[float] = []
        self.successes: list[bool] = []

    # ------------------------------------------------------------------ state

    def state_tree(self) -> dict:
        return {"agent": self.agent.state_tree(), "buffer": self.buffer.state_tree(),
                "rng": self.rng.bit_generator.state, "epoch": self.epoch, "episode_index": self.episode_index,
                "scores": np.asarray(self.scores, float), "successes": np.asarray(self.successes, bool)}

    def load_state_tree(self, tree: dict) -> None:
        self.agent.load_state_tree(tree["agent"])
        self.buffer.load_state_tree(tree["buffer"])
        self.rng.bit_generator.state = tree["rng"]
        self.epoch = int(tree["epoch"])
        self.episode_index = int(tree["episode_index"])
        self.scores = [float(v) for v in tree["scores"]]
        self.successes = [bool(v) for v in tree["successes"]]

    def save(self) -> Path:
        path = self.out / f"ckpt_{self.epoch:04d}.bin"
        save_checkpoint(path, self.state_tree(), self.cfg.config_hash(), self.epoch,
                        meta={"seed": self.seed, "task": self.cfg.task.kind, "ablation": self.cfg.ablation})
        save_checkpoint(self.out / "latest.bin", self.state_tree(), self.cfg.config_hash(), self.epoch,
                        meta={"seed": self.seed, "task": self.cfg.task.kind, "ablation": self.cfg.ablation})
        return path

    # ------------------------------------------------------------------ loop

    def explore_episode(self, uniform: bool, elog: envs.EpisodeLog) -> int:
        cfg, spec = self.cfg, self.cfg.task
        env = envs.TaskEnv(cfg)
        obs = env.reset(explore_seed(self.seed, self.episode_index))
        rewards, costs = [], []
        done = False
        step = 0
        while not done:
            action, unit = self.agent.select_action(obs, "explore", uniform=uniform)
            call = self.space.decode(action.primitive, action.theta)
            nxt, r, done, info = env.step(call, keep_trace=cfg.trace)
            # every episode end is terminal, budget exhaustion included: the observation carries no
            # remaining-budget signal, so bootstrapping past it would value the last decisions as endless
            self.buffer.add(obs, int(action.primitive), unit, info.shaped_reward / cfg.train.reward_normalizer, nxt,
                            done, info.cost)
            elog.write(self.episode_index, step, action.primitive, action.theta, info, r)
            if cfg.trace and info.trace is not None:
                append_trace_csv(self.out / "trace.csv", info.trace, action.primitive.label)
            if info.success:
                r -= envs.success_bonus(spec, info.budget_used)
            r += spec.decision_cost  # scores track task reward only
            rewards.append(r)
            costs.append(info.cost)
            obs = nxt
            step += 1
        ep = env.episode
        score = episode_score(rewards, costs, ep.success, spec.horizon_atomic)
        lo, hi = envs.reward_bounds(spec.kind)
        self.scores.append(float(normalize_scores([score], spec.horizon_atomic, lo, hi)[0]))
        self.successes.append(bool(ep.success))
        self.episode_index += 1
        return ep.budget_used

    def run_epoch(self, elog: envs.EpisodeLog) -> dict:
        tc = self.cfg.train
        self.epoch += 1
        uniform = self.epoch <= tc.warmup_epochs
        units = 0
        while units < tc.explore_per_epoch:
            units += self.explore_episode(uniform, elog)
        self.agent.alpha_active = self.epoch <= tc.entropy_epochs
        diag: dict = {}
        if len(self.buffer) >= tc.batch_size:
            sums: dict[str, float] = {}
            for _ in range(tc.steps_per_epoch):
                d = self.agent.update(self.buffer.sample(tc.batch_size, self.rng))
                for k, v in d.items():
                    sums[k] = sums.get(k, 0.0) + v
            diag = {k: v / tc.steps_per_epoch for k, v in sums.items()} if tc.steps_per_epoch else {}
        row = {"epoch": self.epoch, "episodes": self.episode_index, "explore_units": units,
               "return_norm": float(rolling_mean(self.scores, CURVE_WINDOW)[-1]),
               "explore_success": float(np.mean(self.successes[-CURVE_WINDOW:])),
               "alpha_h": float(self.agent.log_alpha_h.detach().exp()), "alpha_l": float(self.agent.log_alpha_l.detach().exp()),
               "q_loss": diag.get("q_loss"), "policy_loss": diag.get("policy_loss"),
               "entropy_h": diag.get("entropy_h")}
        last = self.epoch == tc.epochs
        if tc.eval_episodes and (last or (tc.eval_every and self.epoch % tc.eval_every == 0)):
            rep = evaluate(self.agent, self.cfg, tc.eval_episodes, self.seed)
            fs = rep.forces
            row.update(eval_return_norm=rep.mean_score_norm, success_rate=rep.success_rate,
                       mean_max_force=fs.mean if fs else None, _report=rep)
        return row


def _metrics_row(row: dict) -> list[str]:
    out = []
    for k in METRICS_HEADER:
        v = row.get(k)
        out.append(str(v) if isinstance(v, int) else fmt(v))
    return out


def _append_metrics(path: Path, row: dict) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        if new:
            fh.write(",".join(METRICS_HEADER) + "\n")
        fh.write(",".join(_metrics_row(row)) + "\n")


def _truncate_metrics(path: Path, epoch: int) -> None:
    if not path.exists():
        return
    rows = [r for r in read_csv(path) if int(r["epoch"]) <= epoch]
    write_csv(path, METRICS_HEADER, [[r[k] for k in METRICS_HEADER] for r in rows])


def _truncate_episodes(path: Path, episodes: int) -> list[list[str]]:
    if not path.exists():
        return []
    rows = read_csv(path)
    return [[r[k] for k in envs.EPISODE_LOG_COLUMNS] for r in rows if int(r["episode"]) < episodes]


def train(cfg: RunConfig, seed: int, out_dir: str | Path | None = None, resume: str | Path | None = None,
          force: bool = False, stop_after: Optional[int] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train one seed. ``resume`` continues from a checkpoint; ``stop_after`` ends early at that epoch."""
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    (out / "run.json").write_text(json.dumps({"seed": seed, "seeds": list(cfg.seeds), "config_hash": cfg.config_hash(),
                                              "task": cfg.task.kind, "ablation": cfg.ablation}, indent=1) + "\n")
    tr = Trainer(cfg, seed, out)
    metrics_path = out / "metrics.csv"
    episodes_path = out / "episodes.csv"
    kept: list[list[str]] = []
    if resume is not None:
        tree, _ = load_checkpoint(resume, cfg.config_hash(), force=force)
        tr.load_state_tree(tree)
        _truncate_metrics(metrics_path, tr.epoch)
        kept = _truncate_episodes(episodes_path, tr.episode_index)
    else:
        metrics_path.unlink(missing_ok=True)
        (out / "trace.csv").unlink(missing_ok=True)
    elog = envs.EpisodeLog(episodes_path)
    for r in kept:
        elog._w.writerow(r)
    tc = cfg.train
    final: Optional[EvalReport] = None
    end = tc.epochs if stop_after is None else min(stop_after, tc.epochs)
    t0 = time.monotonic()
    try:
        while tr.epoch < end:
            try:
                row = tr.run_epoch(elog)
            except TrainingDiverged as exc:
                (out / "diverged.json").write_text(json.dumps({"epoch": tr.epoch + 0, **exc.diagnostics}, indent=1))
                raise
            rep = row.pop("_report", None)
            if rep is not None and tr.epoch == tc.epochs:
                final = rep
            _append_metrics(metrics_path, row)
            log.info("epoch %d return %.3f explore-success %.2f eval-success %s (%.0fs)", tr.epoch,
                     row["return_norm"], row["explore_success"], fmt(row.get("success_rate")), time.monotonic() - t0)
            if on_epoch is not None:
                on_epoch(row)
            if tc.checkpoint_every and (tr.epoch % tc.checkpoint_every == 0 or tr.epoch == tc.epochs):
                tr.save()
    finally:
        elog.close()
    if final is not None:
        final.write(out / "eval")
    rows = read_csv(metrics_path) if metrics_path.exists() else []
    return TrainResult(out_dir=out, metrics=rows, final_eval=final)


def load_agent(path: str | Path, cfg: RunConfig, force: bool = False) -> tuple[HybridSAC, dict]:
    """Policy from a checkpoint, for evaluation."""
    tree, header = load_checkpoint(path, cfg.config_hash(), force=force)
    space = ParamSpace(cfg.controller, cfg.primitives)
    kind = cfg.task.kind
    agent = HybridSAC(envs.obs_dim(kind), cfg.train, space, envs.obs_scale(kind), seed=int(header["meta"].get("seed", 0)))
    agent.load_state_tree(tree["agent"])
    return agent, header
