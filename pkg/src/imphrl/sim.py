"""Lumped-mass Cartesian end-effector under impedance control, with penalty
contact against the table and box-shaped objects.

The public functions here are pure: they copy the incoming state, run the
compiled kernel and return a fresh state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels as kn
from .config import SimConfig


class IntegrationDiverged(RuntimeError):
    """Non-finite values appeared while integrating (bad gains or dt)."""


@dataclass
class ObjectState:
    id: str
    pos: np.ndarray
    yaw: float
    half_extents: np.ndarray
    keypoint: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 0.2
    kind: str = "box"  # box | handle
    # pose relative to the ee while held (ee-yaw frame xyz, yaw)
    grip_offset: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass
class StainGrid:
    cells: np.ndarray  # bool (nx, ny); x index first
    cell_size: float
    origin: np.ndarray  # world xy of cell (0, 0)'s lower corner
    initial_count: int

    def remaining(self) -> int:
        return int(self.cells.sum())

    def fraction_wiped(self) -> float:
        if self.initial_count == 0:
            return 1.0
        return 1.0 - self.remaining() / self.initial_count

    def cell_centers(self) -> np.ndarray:
        idx = np.argwhere(self.cells)
        return self.origin + (idx + 0.5) * self.cell_size


@dataclass
class DoorState:
    base: np.ndarray  # handle position with the door closed
    axis: np.ndarray  # unit xy opening direction
    s: float = 0.0
    s_dot: float = 0.0
    phi: float = 0.0
    phi_dot: float = 0.0
    k_s: float = 10.0
    c_s: float = 5.0
    m_s: float = 1.0
    s_max: float = 0.3
    k_phi: float = 0.5
    c_phi: float = 0.2
    inertia_phi: float = 0.01
    phi_max: float = math.radians(60.0)
    lever: float = 0.1
    hinge_friction: float = 0.3


@dataclass
class WorldParams:
    """Per-episode constants drawn at reset."""

    table_height: float = 0.0
    friction: float = 0.5
    bin: Optional[tuple[float, float, float, float, float]] = None  # cx, cy, hx, hy, depth
    force_band: tuple[float, float] = (1.0, 20.0)
    pad_radius: float = 0.02


@dataclass
class SimState:
    ee_pos: np.ndarray
    ee_yaw: float = 0.0
    ee_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_yaw_rate: float = 0.0
    gripper_closed: bool = False
    held_object: Optional[str] = None
    objects: list[ObjectState] = field(default_factory=list)
    stains: Optional[StainGrid] = None
    contact_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0
    world: WorldParams = field(default_factory=WorldParams)
    door: Optional[DoorState] = None
    # setpoint the controller holds between primitives
    hold: Optional[np.ndarray] = None

    def pose(self) -> np.ndarray:
        return np.array([*self.ee_pos, self.ee_yaw])

    def hold_pose(self) -> np.ndarray:
        return self.pose() if self.hold is None else np.array(self.hold, dtype=float)

    def object(self, oid: str) -> ObjectState:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def copy(self) -> "SimState":
        return unpack(pack(self, SimConfig()), self)


@dataclass
class ImpedanceGains:
    k: np.ndarray  # (Kx, Ky, Kz, Kyaw)
    d: np.ndarray

    @classmethod
    def critically_damped(cls, k: Sequence[float], cfg: SimConfig = SimConfig()) -> "ImpedanceGains":
        k = np.asarray(k, dtype=float)
        if np.any(k <= 0):
            raise ValueError("stiffness must be positive")
        d = np.empty(4)
        kn.damping(k, axis_masses(cfg), d)
        return cls(k=k.copy(), d=d)


@dataclass
class StepTelemetry:
    f_cmd: np.ndarray  # 4: force xyz + yaw torque
    f_contact: np.ndarray  # 3: total contact force on the ee
    tracking_error: np.ndarray  # 4: setpoint - pose before the step
    velocity: np.ndarray  # 4: velocity after the step
    power: float
    table_normal: float


def axis_masses(cfg: SimConfig) -> np.ndarray:
    return np.array([cfg.m_eff, cfg.m_eff, cfg.m_eff, cfg.yaw_inertia])


# ----------------------------------------------------------------------------
# packing


@dataclass
class Packed:
    X: np.ndarray
    V: np.ndarray
    S: np.ndarray
    objs: np.ndarray
    door: np.ndarray
    W: np.ndarray
    C: np.ndarray
    grid: np.ndarray
    SM: np.ndarray
    IS: np.ndarray
    T: np.ndarray


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def pack(state: SimState, cfg: SimConfig) -> Packed:
    X = np.array([*state.ee_pos, state.ee_yaw], dtype=float)
    V = np.array([*state.ee_vel, state.ee_yaw_rate], dtype=float)
    S = np.array(state.hold_pose(), dtype=float)
    objs = np.zeros((len(state.objects), kn.NF_OBJ))
    held = -1
    for j, o in enumerate(state.objects):
        row = objs[j]
        row[kn.O_POS:kn.O_POS + 3] = o.pos
        row[kn.O_YAW] = o.yaw
        row[kn.O_VEL:kn.O_VEL + 3] = o.vel
        row[kn.O_HALF:kn.O_HALF + 3] = o.half_extents
        rel = np.asarray(o.keypoint, dtype=float) - np.asarray(o.pos, dtype=float)
        row[kn.O_KP:kn.O_KP + 2] = _rot(-o.yaw) @ rel[:2]
        row[kn.O_KP + 2] = rel[2]
        row[kn.O_MASS] = o.mass
        row[kn.O_KIND] = kn.KIND_HANDLE if o.kind == "handle" else kn.KIND_BOX
        row[kn.O_HOFF:kn.O_HOFF + 3] = o.grip_offset[:3]
        row[kn.O_HYAW] = o.grip_offset[3]
        if state.held_object == o.id:
            held = j
    door = np.zeros(kn.NF_DOOR if state.door is not None else 0)
    if state.door is not None:
        d = state.door
        door[kn.DR_S], door[kn.DR_SD], door[kn.DR_PHI], door[kn.DR_PHID] = d.s, d.s_dot, d.phi, d.phi_dot
        door[kn.DR_BASE:kn.DR_BASE + 3] = d.base
        door[kn.DR_AXIS:kn.DR_AXIS + 2] = d.axis
        door[kn.DR_KS], door[kn.DR_CS], door[kn.DR_MS], door[kn.DR_SMAX] = d.k_s, d.c_s, d.m_s, d.s_max
        door[kn.DR_KPHI], door[kn.DR_CPHI], door[kn.DR_IPHI] = d.k_phi, d.c_phi, d.inertia_phi
        door[kn.DR_PHIMAX], door[kn.DR_LEVER], door[kn.DR_HFRIC] = d.phi_max, d.lever, d.hinge_friction
    w = state.world
    W = np.zeros(kn.NF_WORLD)
    W[kn.W_TABLE_H] = w.table_height
    W[kn.W_MU] = w.friction
    if w.bin is not None:
        W[kn.W_BIN:kn.W_BIN + 5] = w.bin
    C = const_vector(cfg, w)
    if state.stains is not None:
        grid = state.stains.cells.astype(np.uint8)
        SM = np.array([state.stains.origin[0], state.stains.origin[1], state.stains.cell_size])
    else:
        grid = np.zeros((0, 0), dtype=np.uint8)
        SM = np.zeros(3)
    IS = np.array([1 if state.gripper_closed else 0, held], dtype=np.int64)
    T = np.array([state.time])
    return Packed(X, V, S, objs, door, W, C, grid, SM, IS, T)


def const_vector(cfg: SimConfig, world: WorldParams) -> np.ndarray:
    C = np.zeros(kn.NF_CONST)
    C[kn.C_DT] = cfg.dt
    C[kn.C_M] = cfg.m_eff
    C[kn.C_IYAW] = cfg.yaw_inertia
    C[kn.C_KT] = cfg.k_table
    C[kn.C_CT] = cfg.c_table
    C[kn.C_SLIP] = cfg.slip_speed
    C[kn.C_EER] = cfg.ee_radius
    C[kn.C_KO] = cfg.k_object
    C[kn.C_CO] = cfg.c_object
    C[kn.C_G] = cfg.gravity
    C[kn.C_GRASP] = cfg.grasp_radius
    C[kn.C_WSLO:kn.C_WSLO + 3] = cfg.workspace_lo
    C[kn.C_WSHI:kn.C_WSHI + 3] = cfg.workspace_hi
    C[kn.C_YAWLIM] = cfg.yaw_limit
    C[kn.C_BANDLO], C[kn.C_BANDHI] = world.force_band
    C[kn.C_PAD] = world.pad_radius
    return C


def unpack(p: Packed, template: SimState, contact_force: Optional[np.ndarray] = None) -> SimState:
    objects = []
    held = None
    for j, o in enumerate(template.objects):
        row = p.objs[j]
        pos = row[kn.O_POS:kn.O_POS + 3].copy()
        yaw = float(row[kn.O_YAW])
        kp = pos.copy()
        kp[:2] += _rot(yaw) @ row[kn.O_KP:kn.O_KP + 2]
        kp[2] += row[kn.O_KP + 2]
        objects.append(ObjectState(
            id=o.id, pos=pos, yaw=yaw, half_extents=row[kn.O_HALF:kn.O_HALF + 3].copy(), keypoint=kp,
            vel=row[kn.O_VEL:kn.O_VEL + 3].copy(), mass=float(row[kn.O_MASS]), kind=o.kind,
            grip_offset=np.array([*row[kn.O_HOFF:kn.O_HOFF + 3], row[kn.O_HYAW]])))
        if p.IS[kn.I_HELD] == j:
            held = o.id
    stains = None
    if template.stains is not None:
        stains = StainGrid(cells=p.grid.astype(bool), cell_size=template.stains.cell_size,
                           origin=template.stains.origin.copy(), initial_count=template.stains.initial_count)
    door = None
    if template.door is not None:
        d = p.door
        door = replace(template.door, s=float(d[kn.DR_S]), s_dot=float(d[kn.DR_SD]),
                       phi=float(d[kn.DR_PHI]), phi_dot=float(d[kn.DR_PHID]))
    return SimState(
        ee_pos=p.X[:3].copy(), ee_yaw=float(p.X[3]), ee_vel=p.V[:3].copy(), ee_yaw_rate=float(p.V[3]),
        gripper_closed=bool(p.IS[kn.I_GRIP]), held_object=held, objects=objects, stains=stains,
        contact_force=(template.contact_force.copy() if contact_force is None else contact_force.copy()),
        time=float(p.T[0]), world=template.world, door=door, hold=p.S.copy())


# ----------------------------------------------------------------------------
# operations


def step_dynamics(state: SimState, gains: ImpedanceGains, setpoint: Sequence[float], dt: float,
                  cfg: SimConfig = SimConfig()) -> tuple[SimState, StepTelemetry]:
    """Advance one control tick: F_cmd = K (x_set - x) - D v plus contact."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if cfg.dt != dt:
        cfg = replace(cfg, dt=dt)
    p = pack(state, cfg)
    p.S[:] = np.asarray(setpoint, dtype=float)
    tel = np.zeros(kn.NF_TEL)
    ok = kn.tick(p.X, p.V, p.S, np.asarray(gains.k, float), np.asarray(gains.d, float), p.objs, p.door,
                 p.W, p.C, p.grid, p.SM, p.IS, p.T, tel)
    if not ok or not np.all(np.isfinite(tel)):
        raise IntegrationDiverged("non-finite state after step; check gains and dt")
    f_contact = tel[kn.T_FCON:kn.T_FCON + 3].copy()
    nxt = unpack(p, state, contact_force=f_contact)
    telemetry = StepTelemetry(
        f_cmd=tel[kn.T_FCMD:kn.T_FCMD + 4].copy(), f_contact=f_contact,
        tracking_error=tel[kn.T_EPS:kn.T_EPS + 4].copy(), velocity=p.V.copy(),
        power=float(tel[kn.T_POW]), table_normal=float(tel[kn.T_NTAB]))
    return nxt, telemetry


def contact_forces(state: SimState, cfg: SimConfig = SimConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Contact force on the ee (3,) and on each object (n, 3), gravity excluded."""
    p = pack(state, cfg)
    f_ee = np.zeros(3)
    f_obj = np.zeros((len(state.objects), 3))
    kn.contacts(p.X, p.V, p.objs, p.W, p.C, p.IS, f_ee, f_obj, np.zeros(3))
    return f_ee, f_obj


def actuation_energy(telemetry: StepTelemetry, dt: float) -> tuple[float, float]:
    """(energy over the tick in J, instantaneous power in W), P = |F_cmd . v|."""
    power = abs(float(np.dot(telemetry.f_cmd[:len(telemetry.velocity)], telemetry.velocity)))
    return power * dt, power


# ----------------------------------------------------------------------------
# telemetry CSV

TRACE_COLUMNS = ["time", "ee_x", "ee_y", "ee_z", "set_x", "set_y", "set_z",
                 "k_x", "k_y", "k_z", "k_yaw", "fc_x", "fc_y", "fc_z", "power"]


def trace_rows(trace: np.ndarray) -> np.ndarray:
    """Select the CSV columns from a kernel trace array."""
    cols = ([kn.TR_TIME] + [kn.TR_POS + a for a in range(3)] + [kn.TR_SET + a for a in range(3)]
            + [kn.TR_K + a for a in range(4)] + [kn.TR_FCON + a for a in range(3)] + [kn.TR_POW])
    return trace[:, cols]


def append_trace_csv(path: str | Path, trace: np.ndarray, primitive_id: Optional[str] = None) -> None:
    path = Path(path)
    header = TRACE_COLUMNS + (["primitive_id"] if primitive_id is not None else [])
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        for row in trace_rows(trace):
            vals = [repr(float(v)) for v in row]
            w.writerow(vals + ([primitive_id] if primitive_id is not None else []))
