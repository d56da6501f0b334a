"""Parameterized behavior primitives executed under impedance control.

Each primitive is a short state machine of setpoint phases. Every control tick
interpolates the setpoint, optionally adapts stiffness (and refreshes critical
damping), then steps the plant; the loop itself lives in ``kernels.run_phase``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as kn
from .config import ControllerConfig, PrimitiveConfig, SimConfig
from .sim import SimState, axis_masses, pack, unpack


class PrimitiveId(enum.IntEnum):
    REACH = 0
    GRASP = 1
    PUSH = 2
    ATOMIC = 3
    GRIPPER = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {PrimitiveId.REACH: "reach", PrimitiveId.GRASP: "grasp", PrimitiveId.PUSH: "push",
           PrimitiveId.ATOMIC: "atomic", PrimitiveId.GRIPPER: "gripper"}
N_PRIMITIVES = len(PrimitiveId)


@dataclass
class PrimitiveCall:
    """A primitive with its full fixed-width parameter set.

    Only the fields used by ``id`` are read; the rest are carried untouched.
    """

    id: PrimitiveId
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper: bool = False
    stiffness: np.ndarray = field(default_factory=lambda: np.array([100.0, 100.0, 100.0, 10.0]))

    def __post_init__(self) -> None:
        self.id = PrimitiveId(self.id)
        self.pos = np.asarray(self.pos, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.stiffness = np.asarray(self.stiffness, dtype=float)


@dataclass
class PrimitiveOutcome:
    ticks: int
    trace: np.ndarray  # (ticks, kernels.NF_TRACE)
    terminal_state: SimState
    timed_out: bool
    failed: bool
    max_force: float
    energy: float
    excess_impulse: float  # integral of table normal force above the wipe band
    final_stiffness: np.ndarray

    @property
    def ticks_used(self) -> int:
        return self.ticks


def atomic_cost(outcome: PrimitiveOutcome | int, ticks_per_atomic: int = 25) -> int:
    """Budget units charged for a primitive: ceil(ticks / ticks_per_atomic), at least 1."""
    ticks = outcome if isinstance(outcome, int) else outcome.ticks
    return max(1, -(-ticks // ticks_per_atomic))


def _ctl_vector(ctl: ControllerConfig, sim: SimConfig) -> np.ndarray:
    return np.array([ctl.beta, ctl.gamma_e, ctl.max_step, ctl.max_yaw_step,
                     *ctl.k_min, *ctl.k_max, *axis_masses(sim)], dtype=float)


def _clip_target(t: np.ndarray, sim: SimConfig) -> np.ndarray:
    out = t.copy()
    out[:3] = np.clip(out[:3], sim.workspace_lo, sim.workspace_hi)
    out[3] = min(max(out[3], -sim.yaw_limit), sim.yaw_limit)
    return out


def execute_primitive(state: SimState, call: PrimitiveCall, ctl: ControllerConfig = ControllerConfig(),
                      prim: PrimitiveConfig = PrimitiveConfig(), sim: SimConfig = SimConfig(),
                      mode: Optional[str] = None) -> PrimitiveOutcome:
    """Run ``call`` from ``state`` to termination; the input state is not modified.

    ``mode`` ('adaptive' or 'static') overrides ``ctl.mode``. A diverging
    integration ends the primitive with ``failed=True`` instead of raising.
    """
    mode = ctl.mode if mode is None else mode
    adaptive = mode == "adaptive"
    energy_mode = ctl.energy_term == "energy"
    p = pack(state, sim)
    K = np.clip(call.stiffness, ctl.k_min, ctl.k_max).astype(float)
    D = np.empty(4)
    masses = axis_masses(sim)
    kn.damping(K, masses, D)
    cvec = _ctl_vector(ctl, sim)
    cstate = np.zeros(8)
    pid = call.id

    hold = p.S.copy()
    phases: list[tuple[np.ndarray, int, bool]] = []  # (target, budget, stop_on_reach)
    if pid == PrimitiveId.REACH:
        phases.append((np.array([*call.pos, hold[3]]), prim.reach_ticks, True))
    elif pid == PrimitiveId.GRASP:
        kn.release(p.IS)
        above = np.array([call.pos[0], call.pos[1], call.pos[2] + prim.grasp_approach, call.yaw])
        phases.append((above, prim.reach_ticks, True))
        phases.append((np.array([*call.pos, call.yaw]), prim.reach_ticks, True))
    elif pid == PrimitiveId.PUSH:
        delta = np.clip(call.delta, -prim.delta_limit, prim.delta_limit)
        phases.append((np.array([*call.pos, hold[3]]), prim.reach_ticks, True))
        phases.append((np.array([*(call.pos + delta), hold[3]]), prim.push_ticks, True))
    elif pid == PrimitiveId.ATOMIC:
        delta = np.clip(call.delta, -prim.atomic_clamp, prim.atomic_clamp)
        phases.append((np.array([*(hold[:3] + delta), hold[3]]), prim.atomic_ticks, False))
    else:
        if call.gripper:
            kn.try_grasp(p.X, p.objs, p.C, p.IS)
        else:
            kn.release(p.IS)
        phases.append((hold.copy(), prim.gripper_ticks, False))

    budget = sum(b for _, b, _ in phases) + (prim.gripper_ticks if pid == PrimitiveId.GRASP else 0)
    trace = np.zeros((budget, kn.NF_TRACE))
    n = 0
    timed_out = False
    failed = False
    for target, max_ticks, stop in phases:
        target = _clip_target(target, sim)
        used, status = kn.run_phase(p.X, p.V, p.S, K, D, p.objs, p.door, p.W, p.C, p.grid, p.SM, p.IS, p.T,
                                    target, cvec, adaptive, energy_mode, max_ticks, prim.pos_tol, stop,
                                    prim.settle_speed if stop else 0.0, cstate, trace, n)
        n += used
        if status < 0:
            failed = True
            break
        if stop and status == 0:
            timed_out = True
    if pid == PrimitiveId.GRASP and not failed:
        kn.try_grasp(p.X, p.objs, p.C, p.IS)
        kn.attach_held(p.X, p.V, p.objs, p.IS)
        used, status = kn.run_phase(p.X, p.V, p.S, K, D, p.objs, p.door, p.W, p.C, p.grid, p.SM, p.IS, p.T,
                                    p.S.copy(), cvec, adaptive, energy_mode, prim.gripper_ticks, prim.pos_tol,
                                    False, 0.0, cstate, trace, n)
        n += used
        failed = status < 0
    trace = trace[:n]
    if failed:
        terminal = state.copy()
        terminal.time = state.time + n * sim.dt
    else:
        f_last = trace[-1, kn.TR_FCON:kn.TR_FCON + 3].copy() if n else np.zeros(3)
        terminal = unpack(p, state, contact_force=f_last)
    return PrimitiveOutcome(
        ticks=max(n, 1), trace=trace, terminal_state=terminal, timed_out=timed_out, failed=failed,
        max_force=float(cstate[6]) if math.isfinite(cstate[6]) else math.inf,
        energy=float(cstate[5]), excess_impulse=float(cstate[7]), final_stiffness=K.copy())
