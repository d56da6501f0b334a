"""Greedy evaluation rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import envs
from ..config import RunConfig
from ..metrics import ForceStats, episode_score, force_stats, normalize_scores, write_csv, fmt
from ..primitives import PrimitiveId
from .sac import HybridSAC

EVAL_HEADER = ["episode", "seed", "success", "max_force", "score", "score_norm", "steps", "budget_used", "sequence"]


def eval_seed(run_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([run_seed, 1, k]).generate_state(1)[0])


def explore_seed(run_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([run_seed, 0, k]).generate_state(1)[0])


@dataclass
class EpisodeResult:
    seed: int
    success: bool
    max_force: float
    score: float
    score_norm: float
    steps: int
    budget_used: int
    sequence: list[int] = field(default_factory=list)


@dataclass
class EvalReport:
    episodes: list[EpisodeResult]

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.success for e in self.episodes])) if self.episodes else 0.0

    @property
    def forces(self) -> Optional[ForceStats]:
        return force_stats([e.max_force for e in self.episodes], [e.success for e in self.episodes])

    @property
    def mean_score_norm(self) -> float:
        return float(np.mean([e.score_norm for e in self.episodes])) if self.episodes else 0.0

    def successful_sequences(self) -> list[list[int]]:
        return [e.sequence for e in self.episodes if e.success]

    def rows(self) -> list[list]:
        return [[i, e.seed, int(e.success), f"{e.max_force:.9g}", f"{e.score:.9g}", f"{e.score_norm:.9g}", e.steps,
                 e.budget_used, " ".join(PrimitiveId(p).label for p in e.sequence)]
                for i, e in enumerate(self.episodes)]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "eval_episodes.csv", EVAL_HEADER, self.rows())
        fs = self.forces
        write_csv(out / "eval_summary.csv", ["episodes", "success_rate", "mean_max_force", "std_max_force", "max_max_force"],
                  [[len(self.episodes), fmt(self.success_rate), fmt(fs.mean if fs else None),
                    fmt(fs.std if fs else None), fmt(fs.max if fs else None)]])
        write_csv(out / "sequences.csv", ["episode", "sequence"],
                  [[i, " ".join(PrimitiveId(p).label for p in e.sequence)]
                   for i, e in enumerate(self.episodes) if e.success])


def run_episode(agent: HybridSAC, cfg: RunConfig, seed: int, mode: str = "greedy") -> EpisodeResult:
    env = envs.TaskEnv(cfg)
    obs = env.reset(seed)
    spec = cfg.task
    rewards, costs, seq = [], [], []
    max_force = 0.0
    done = False
    info = None
    while not done:
        action, _ = agent.select_action(obs, mode)
        call = agent.space.decode(action.primitive, action.theta)
        obs, r, done, info = env.step(call)
        if info.success:
            r -= envs.success_bonus(spec, info.budget_used)
        r += spec.decision_cost  # scores track task reward only
        rewards.append(r)
        costs.append(info.cost)
        seq.append(int(action.primitive))
        max_force = max(max_force, info.max_force)
    ep = env.episode
    score = episode_score(rewards, costs, ep.success, spec.horizon_atomic)
    lo, hi = envs.reward_bounds(spec.kind)
    norm = float(normalize_scores([score], spec.horizon_atomic, lo, hi)[0])
    return EpisodeResult(seed=seed, success=ep.success, max_force=max_force, score=score, score_norm=norm,
                         steps=ep.steps, budget_used=ep.budget_used, sequence=seq)


def evaluate(agent: HybridSAC, cfg: RunConfig, episodes: int, run_seed: int) -> EvalReport:
    """Greedy rollouts on the fixed evaluation seed stream of ``run_seed``."""
    return EvalReport([run_episode(agent, cfg, eval_seed(run_seed, k)) for k in range(episodes)])
