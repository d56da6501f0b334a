"""Desk-scale manipulation tasks: Lift, Door, Wipe and Cleanup.

An episode is a sequence of primitive decisions charged against an atomic
budget. ``reset`` and ``env_step`` are pure functions over :class:`Episode`;
:class:`TaskEnv` wraps them with the run configuration for the trainer.

Observation layouts (version ``OBS_VERSION``):

* Lift / Door / Cleanup: ee pose (x, y, z, yaw), ee velocity (4), gripper (1),
  then per object block: position (3), yaw (1), object minus ee (3),
  distance (1). Door appends (slide, angle); Cleanup adds a bin block.
* Wipe: ee pose (4), fraction wiped (1), remaining-stain centroid xy (2) and
  radius (1), ee-to-centroid distance (1).

Env reward per decision lies in [-1, 1] less the flat decision cost; a success
adds the bonus from :func:`success_bonus`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .affordance import AffordanceContext, affordance_coupling
from .config import RunConfig, TaskSpec
from .primitives import PrimitiveCall, PrimitiveId, atomic_cost, execute_primitive
from .sim import DoorState, ObjectState, SimState, StainGrid, WorldParams

log = logging.getLogger(__name__)

OBS_VERSION = 1
CUBE_HALF = 0.025
TABLE_CORNER = np.array([0.25, -0.25])
BIN_CENTER = np.array([-0.15, 0.15])
BIN_HALF = np.array([0.06, 0.06])
BIN_DEPTH = 0.05


@dataclass
class Episode:
    spec: TaskSpec
    state: SimState
    seed: int
    budget_used: int = 0
    steps: int = 0
    done: bool = False
    success: bool = False
    failed: bool = False
    randomization: dict[str, Any] = field(default_factory=dict)
    initial: dict[str, Any] = field(default_factory=dict)


# ----------------------------------------------------------------------------
# reset


def _cube(oid: str, xy: np.ndarray, h: float, half=(CUBE_HALF,) * 3, mass: float = 0.2) -> ObjectState:
    half = np.asarray(half, float)
    pos = np.array([xy[0], xy[1], h + half[2]])
    return ObjectState(id=oid, pos=pos, yaw=0.0, half_extents=half, keypoint=pos + np.array([0, 0, half[2]]),
                       mass=mass)


def _stains(rng: np.random.Generator, spec: TaskSpec, center: np.ndarray) -> StainGrid:
    cell = spec.stain_cell
    half_len = rng.uniform(*spec.stain_half_length)
    nx = max(1, int(round(2 * half_len / cell)))
    n_line = max(1, int(round(spec.stain_line_width / cell)))
    ny = int(round(n_line / spec.stain_coverage))
    cells = np.zeros((nx, ny), dtype=bool)
    j0 = (ny - n_line) // 2
    cells[:, j0:j0 + n_line] = True
    origin = np.array([center[0] - nx * cell / 2, center[1] - ny * cell / 2])
    return StainGrid(cells=cells, cell_size=cell, origin=origin, initial_count=int(cells.sum()))


def reset(spec: TaskSpec, seed: int) -> tuple[Episode, np.ndarray]:
    """Deterministic initial state for (spec, seed); randomization is logged."""
    rng = np.random.default_rng(seed)
    h = float(rng.uniform(*spec.table_height))
    mu = float(rng.uniform(*spec.table_friction))
    ee = np.array([rng.uniform(*spec.ee_x), rng.uniform(*spec.ee_y), h + rng.uniform(*spec.ee_z)])
    obj_xy = np.array([rng.uniform(*spec.object_x), rng.uniform(*spec.object_y)])
    world = WorldParams(table_height=h, friction=mu, force_band=tuple(spec.wipe_force_band),
                        pad_radius=spec.wipe_pad_radius)
    state = SimState(ee_pos=ee, world=world)
    rand: dict[str, Any] = {"table_height": h, "friction": mu, "ee": ee.tolist(), "object_xy": obj_xy.tolist()}
    if spec.kind == "lift":
        state.objects = [_cube("cube", obj_xy, h)]
    elif spec.kind == "door":
        base = np.array([obj_xy[0] - 0.08, obj_xy[1], h + 0.10])
        handle = ObjectState(id="handle", pos=base.copy(), yaw=0.0, half_extents=np.array([0.02, 0.04, 0.01]),
                             keypoint=base + np.array([0.0, 0.0, 0.01]), kind="handle", mass=1.0)
        state.objects = [handle]
        state.door = DoorState(base=base.copy(), axis=np.array([1.0, 0.0]))
    elif spec.kind == "cleanup":
        can_xy = np.array([rng.uniform(*spec.object_x), rng.uniform(*spec.object_y)])
        while np.linalg.norm(can_xy - obj_xy) < 0.08:
            can_xy = np.array([rng.uniform(*spec.object_x), rng.uniform(*spec.object_y)])
        rand["can_xy"] = can_xy.tolist()
        state.objects = [_cube("jello", obj_xy, h, half=(0.03, 0.03, 0.02), mass=0.3), _cube("can", can_xy, h)]
        world.bin = (BIN_CENTER[0], BIN_CENTER[1], BIN_HALF[0], BIN_HALF[1], BIN_DEPTH)
    elif spec.kind == "wipe":
        state.stains = _stains(rng, spec, obj_xy)
        rand["stain_cells"] = state.stains.initial_count
        rand["stain_half_length"] = state.stains.cells.shape[0] * spec.stain_cell / 2
    log.debug("reset %s seed=%d randomization=%s", spec.kind, seed, rand)
    ep = Episode(spec=spec, state=state, seed=seed, randomization=rand)
    ep.initial = {"object_z": [o.pos[2] for o in state.objects]}
    return ep, observe(state, spec)


# ----------------------------------------------------------------------------
# observations


def _stain_summary(state: SimState) -> tuple[np.ndarray, float]:
    st = state.stains
    centers = st.cell_centers()
    if len(centers) == 0:
        all_idx = np.argwhere(np.ones_like(st.cells))
        return st.origin + (all_idx.mean(axis=0) + 0.5) * st.cell_size, 0.0
    c = centers.mean(axis=0)
    return c, float(np.max(np.linalg.norm(centers - c, axis=1)))


def observe(state: SimState, spec: TaskSpec) -> np.ndarray:
    pose = state.pose()
    if spec.kind == "wipe":
        c, radius = _stain_summary(state)
        d = float(np.linalg.norm(state.ee_pos - np.array([c[0], c[1], 0.0])))
        return np.array([*pose, state.stains.fraction_wiped(), c[0], c[1], radius, d])
    parts = [pose, np.array([*state.ee_vel, state.ee_yaw_rate]), [1.0 if state.gripper_closed else 0.0]]
    for o in state.objects:
        rel = o.pos - state.ee_pos
        parts.append([*o.pos, o.yaw, *rel, float(np.linalg.norm(rel))])
    if spec.kind == "door":
        parts.append([state.door.s, state.door.phi])
    if spec.kind == "cleanup":
        b = np.array([*BIN_CENTER, state.world.table_height - BIN_DEPTH])
        rel = b - state.ee_pos
        parts.append([*b, 0.0, *rel, float(np.linalg.norm(rel))])
    return np.concatenate([np.asarray(p, float) for p in parts])


def obs_dim(kind: str) -> int:
    return {"lift": 17, "door": 19, "cleanup": 33, "wipe": 9}[kind]


def obs_scale(kind: str) -> np.ndarray:
    """Fixed per-entry scale so network inputs are O(1)."""
    if kind == "wipe":
        return np.array([10, 10, 10, 1, 1, 10, 10, 10, 10], dtype=float)
    s = [10.0] * 3 + [1.0] + [1.0] * 4 + [1.0]
    n_blocks = {"lift": 1, "door": 1, "cleanup": 3}[kind]
    s += ([10.0] * 3 + [1.0] + [10.0] * 4) * n_blocks
    if kind == "door":
        s += [10.0, 1.0]
    return np.array(s)


# ----------------------------------------------------------------------------
# success and rewards


def _table_corner_dist(o: ObjectState) -> float:
    return float(np.linalg.norm(o.pos[:2] - TABLE_CORNER))


def _in_bin(o: ObjectState, world: WorldParams) -> bool:
    inside = np.all(np.abs(o.pos[:2] - BIN_CENTER) <= BIN_HALF)
    return bool(inside and o.pos[2] < world.table_height)


def check_success(state: SimState, spec: TaskSpec) -> bool:
    h = state.world.table_height
    if spec.kind == "lift":
        return bool(state.object("cube").pos[2] - h > spec.lift_height)
    if spec.kind == "door":
        return bool(state.door.s >= spec.door_position and state.door.phi >= math.radians(spec.door_angle_deg))
    if spec.kind == "cleanup":
        jello, can = state.object("jello"), state.object("can")
        return (_table_corner_dist(jello) <= spec.cleanup_corner_dist and state.held_object != "can"
                and _in_bin(can, state.world))
    if spec.kind == "wipe":
        return state.stains.remaining() == 0
    raise ValueError(spec.kind)


def _near(d: float, scale: float = 10.0) -> float:
    return 1.0 - math.tanh(scale * d)


def progress(state: SimState, spec: TaskSpec) -> float:
    """Staged task progress in [0, 1]."""
    h = state.world.table_height
    if spec.kind == "lift":
        cube = state.object("cube")
        reach = _near(float(np.linalg.norm(state.ee_pos - cube.keypoint)))
        held = 1.0 if state.held_object == "cube" else 0.0
        lift = min(max((cube.pos[2] - h - CUBE_HALF) / (spec.lift_height - CUBE_HALF), 0.0), 1.0)
        return 0.25 * reach + 0.25 * held + 0.5 * lift * held
    if spec.kind == "door":
        handle = state.object("handle")
        reach = _near(float(np.linalg.norm(state.ee_pos - handle.keypoint)))
        s = min(state.door.s / spec.door_position, 1.0)
        phi = min(state.door.phi / math.radians(spec.door_angle_deg), 1.0)
        return 0.2 * reach + 0.4 * s + 0.4 * phi
    if spec.kind == "cleanup":
        jello, can = state.object("jello"), state.object("can")
        push = _near(max(_table_corner_dist(jello) - spec.cleanup_corner_dist, 0.0), 5.0)
        can_to_bin = _near(float(np.linalg.norm(can.pos[:2] - BIN_CENTER)), 5.0)
        reach_can = _near(float(np.linalg.norm(state.ee_pos - can.keypoint)))
        in_bin = 1.0 if _in_bin(can, state.world) else 0.0
        return 0.35 * push + 0.1 * reach_can + 0.25 * can_to_bin + 0.3 * in_bin
    if spec.kind == "wipe":
        c, _ = _stain_summary(state)
        near = _near(float(np.linalg.norm(state.ee_pos[:2] - c)))
        return 0.8 * state.stains.fraction_wiped() + 0.2 * near
    raise ValueError(spec.kind)


def success_bonus(spec: TaskSpec, budget_used: int) -> float:
    remaining = max(spec.horizon_atomic - budget_used, 0)
    return spec.success_bonus + spec.success_bonus_per_unit * remaining


def env_reward(state: SimState, spec: TaskSpec, excess_impulse: float, success: bool, budget_used: int = 0) -> float:
    """Progress minus a contact-force penalty (Wipe) and the flat decision cost, plus the success bonus."""
    r = progress(state, spec) - spec.decision_cost
    if spec.kind == "wipe":
        r -= min(excess_impulse, 1.0)
    return r + (success_bonus(spec, budget_used) if success else 0.0)


def reward_bounds(kind: str) -> tuple[float, float]:
    """Per-decision env reward bounds without the success bonus and the decision cost."""
    return (-1.0 if kind == "wipe" else 0.0), 1.0


# ----------------------------------------------------------------------------
# affordance keypoints


def keypoints(state: SimState, spec: TaskSpec) -> np.ndarray:
    if spec.kind == "wipe":
        c, _ = _stain_summary(state)
        return np.array([[c[0], c[1], state.world.table_height]])
    pts = [o.keypoint for o in state.objects]
    if spec.kind == "cleanup":
        pts.append(np.array([*BIN_CENTER, state.world.table_height]))
    return np.array(pts)


def affordance_context(state: SimState, cfg: RunConfig) -> AffordanceContext:
    return AffordanceContext.from_config(keypoints(state, cfg.task), cfg.affordance, cfg.controller,
                                         ee_pos=state.ee_pos.copy())


# ----------------------------------------------------------------------------
# stepping


@dataclass
class StepInfo:
    max_force: float
    ticks: int
    cost: int
    affordance: float
    shaped_reward: float
    success: bool
    failed: bool
    budget_used: int
    energy: float
    trace: Optional[np.ndarray] = None


def env_step(ep: Episode, call: PrimitiveCall, cfg: RunConfig, keep_trace: bool = False
             ) -> tuple[Episode, np.ndarray, float, bool, StepInfo]:
    """Execute one primitive decision. Returns (episode, obs, env_reward, done, info)."""
    if ep.done:
        raise RuntimeError("episode already finished; call reset")
    spec = ep.spec
    ctx = affordance_context(ep.state, cfg)
    aff = affordance_coupling(call, ctx)
    out = execute_primitive(ep.state, call, cfg.controller, cfg.primitives, cfg.sim)
    cost = atomic_cost(out, cfg.primitives.ticks_per_atomic)
    nxt = out.terminal_state
    used = ep.budget_used + cost
    if out.failed:
        success = False
        r = -1.0 - spec.decision_cost
    else:
        success = check_success(nxt, spec)
        r = env_reward(nxt, spec, out.excess_impulse, success, used)
    done = success or out.failed or used >= spec.horizon_atomic
    shaped = ctx.reward_scale * r + ctx.lambda_aff * aff
    new = Episode(spec=spec, state=nxt, seed=ep.seed, budget_used=used, steps=ep.steps + 1, done=done,
                  success=success, failed=out.failed, randomization=ep.randomization, initial=ep.initial)
    info = StepInfo(max_force=out.max_force, ticks=out.ticks, cost=cost, affordance=aff, shaped_reward=shaped,
                    success=success, failed=out.failed, budget_used=used, energy=out.energy,
                    trace=out.trace if keep_trace else None)
    return new, observe(nxt, spec), r, done, info


class TaskEnv:
    """Stateful convenience wrapper used by the trainer and evaluator."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.spec = cfg.task
        self.episode: Optional[Episode] = None

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.spec.kind)

    def reset(self, seed: int) -> np.ndarray:
        self.episode, obs = reset(self.spec, seed)
        return obs

    def step(self, call: PrimitiveCall, keep_trace: bool = False) -> tuple[np.ndarray, float, bool, StepInfo]:
        self.episode, obs, r, done, info = env_step(self.episode, call, self.cfg, keep_trace)
        return obs, r, done, info


# ----------------------------------------------------------------------------
# episode log

EPISODE_LOG_COLUMNS = (["episode", "step", "primitive"] + [f"theta_{i}" for i in range(12)]
                       + ["affordance", "env_reward", "shaped_reward", "max_force", "success"])


class EpisodeLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(EPISODE_LOG_COLUMNS)

    def write(self, episode: int, step: int, primitive: PrimitiveId, theta: np.ndarray, info: StepInfo,
              env_r: float) -> None:
        self._w.writerow([episode, step, PrimitiveId(primitive).label, *[f"{v:.9g}" for v in theta],
                          f"{info.affordance:.9g}", f"{env_r:.9g}", f"{info.shaped_reward:.9g}",
                          f"{info.max_force:.9g}", int(info.success)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EpisodeLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
