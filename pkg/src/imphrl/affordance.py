"""Affordance scores used for reward shaping.

Position affordance rewards parameter targets near task keypoints; the
stiffness affordance rewards compliant (low) stiffness. The two are coupled
multiplicatively. Atomic moves and opening the gripper always score 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import AffordanceConfig, ConfigError, ControllerConfig
from .primitives import PrimitiveCall, PrimitiveId


@dataclass
class AffordanceContext:
    keypoints: np.ndarray  # (n, 3)
    tau: float = 0.02
    k_floor: float = 0.05
    k_scale: float = 1.0 / 3.0
    lambda_aff: float = 10.0
    reward_scale: float = 5.0
    k_min: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0, 1.0]))
    k_max: np.ndarray = field(default_factory=lambda: np.array([500.0, 500.0, 500.0, 50.0]))
    stiffness_affordance: bool = True
    fallback: Optional[np.ndarray] = None  # used when keypoints is empty
    ee_pos: Optional[np.ndarray] = None  # position scored for a gripper-close call

    def __post_init__(self) -> None:
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 3)
        self.k_min = np.asarray(self.k_min, dtype=float)
        self.k_max = np.asarray(self.k_max, dtype=float)
        if not self.tau > 0:
            raise ConfigError("affordance.tau: must be > 0")
        if not self.k_scale > 0:
            raise ConfigError("affordance.k_scale: must be > 0")
        if self.lambda_aff < 0:
            raise ConfigError("affordance.lambda_aff: must be >= 0")

    @classmethod
    def from_config(cls, keypoints: Sequence[Sequence[float]], aff: AffordanceConfig, ctl: ControllerConfig,
                    **kw) -> "AffordanceContext":
        return cls(keypoints=np.asarray(keypoints, float), tau=aff.tau, k_floor=aff.k_floor, k_scale=aff.k_scale,
                   lambda_aff=aff.lambda_aff, reward_scale=aff.reward_scale, k_min=np.array(ctl.k_min),
                   k_max=np.array(ctl.k_max), stiffness_affordance=aff.stiffness_affordance, **kw)

    def points(self) -> np.ndarray:
        if len(self.keypoints):
            return self.keypoints
        if self.fallback is not None:
            return np.asarray(self.fallback, float).reshape(1, 3)
        raise ConfigError("affordance.keypoints: empty keypoint set and no fallback centroid")


def position_affordance(theta_pos: Sequence[float], ctx: AffordanceContext) -> float:
    """Best keypoint score 1 - tanh(max(dist - tau, 0)), distances in metres."""
    d = np.linalg.norm(ctx.points() - np.asarray(theta_pos, float)[None, :], axis=1)
    return float(np.max(1.0 - np.tanh(np.maximum(d - ctx.tau, 0.0))))


def normalized_stiffness(stiffness: Sequence[float], ctx: AffordanceContext) -> np.ndarray:
    return (np.asarray(stiffness, float) - ctx.k_min) / (ctx.k_max - ctx.k_min)


def stiffness_affordance(stiffness: Sequence[float], ctx: AffordanceContext) -> float:
    """Mean over axes of 1 - tanh(max(k_hat - floor, 0) / scale); 1 when fully compliant."""
    k_hat = normalized_stiffness(stiffness, ctx)
    return float(np.mean(1.0 - np.tanh(np.maximum(k_hat - ctx.k_floor, 0.0) / ctx.k_scale)))


def affordance_coupling(call: PrimitiveCall, ctx: AffordanceContext) -> float:
    if call.id == PrimitiveId.ATOMIC or (call.id == PrimitiveId.GRIPPER and not call.gripper):
        return 1.0
    if call.id == PrimitiveId.GRIPPER:
        if ctx.ee_pos is None:
            raise ConfigError("affordance.ee_pos: needed to score a gripper-close call")
        pos = ctx.ee_pos
    else:
        pos = call.pos
    a = position_affordance(pos, ctx)
    if ctx.stiffness_affordance:
        a *= stiffness_affordance(call.stiffness, ctx)
    return a


def shaped_reward(env_reward: float, call: PrimitiveCall, ctx: AffordanceContext) -> float:
    return ctx.reward_scale * env_reward + ctx.lambda_aff * affordance_coupling(call, ctx)


def coupling_grid(distances: Sequence[float], stiffness: Sequence[float], ctx: AffordanceContext) -> np.ndarray:
    """Coupling of a Reach at ``distance`` from a single keypoint with all axes
    at ``stiffness`` (translation units; yaw scaled to the same fraction)."""
    one = AffordanceContext(keypoints=np.zeros((1, 3)), tau=ctx.tau, k_floor=ctx.k_floor, k_scale=ctx.k_scale,
                            lambda_aff=ctx.lambda_aff, reward_scale=ctx.reward_scale, k_min=ctx.k_min,
                            k_max=ctx.k_max, stiffness_affordance=True)
    out = np.zeros((len(distances), len(stiffness)))
    for j, k in enumerate(stiffness):
        frac = (k - one.k_min[0]) / (one.k_max[0] - one.k_min[0])
        kvec = one.k_min + frac * (one.k_max - one.k_min)
        a_stiff = stiffness_affordance(kvec, one)
        for i, d in enumerate(distances):
            out[i, j] = position_affordance([d, 0.0, 0.0], one) * a_stiff
    return out


def write_heatmap_csv(path: str | Path, ctx: AffordanceContext, n_dist: int = 41, n_stiff: int = 41,
                      max_dist: float = 0.2) -> None:
    dist = np.linspace(0.0, max_dist, n_dist)
    stiff = np.linspace(ctx.k_min[0], ctx.k_max[0], n_stiff)
    grid = coupling_grid(dist, stiff, ctx)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance", "stiffness", "coupling"])
        for i, d in enumerate(dist):
            for j, k in enumerate(stiff):
                w.writerow([f"{d:.6g}", f"{k:.6g}", f"{grid[i, j]:.12g}"])
