"""Fixed-width parameter vector shared by all primitives.

Layout of the 12 entries (unit interval [-1, 1] on the policy side):
x, y, z, yaw, dx, dy, dz, gripper, Kx, Ky, Kz, Kyaw. Each primitive reads a
subset; the remaining entries are masked out for the critic and the entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import ControllerConfig, PrimitiveConfig
from ..primitives import N_PRIMITIVES, PrimitiveCall, PrimitiveId

THETA_DIM = 12
POS, YAW, DELTA, GRIP, STIFF = slice(0, 3), 3, slice(4, 7), 7, slice(8, 12)

_ACTIVE = {
    PrimitiveId.REACH: [0, 1, 2, 8, 9, 10, 11],
    PrimitiveId.GRASP: [0, 1, 2, 3, 8, 9, 10, 11],
    PrimitiveId.PUSH: [0, 1, 2, 4, 5, 6, 8, 9, 10, 11],
    PrimitiveId.ATOMIC: [4, 5, 6, 8, 9, 10, 11],
    PrimitiveId.GRIPPER: [7, 8, 9, 10, 11],
}


def masks() -> np.ndarray:
    """(n_primitives, 12) 0/1 matrix of parameters read by each primitive."""
    m = np.zeros((N_PRIMITIVES, THETA_DIM))
    for pid, idx in _ACTIVE.items():
        m[int(pid), idx] = 1.0
    return m


@dataclass
class HybridAction:
    primitive: PrimitiveId
    theta: np.ndarray  # physical units, length 12


class ParamSpace:
    """Affine map between the unit box and physical parameter bounds."""

    def __init__(self, ctl: ControllerConfig = ControllerConfig(), prim: PrimitiveConfig = PrimitiveConfig(),
                 xy: float = 0.15, z: tuple[float, float] = (-0.02, 0.40)):
        lo = np.zeros(THETA_DIM)
        hi = np.zeros(THETA_DIM)
        lo[0:2], hi[0:2] = -xy, xy
        lo[2], hi[2] = z
        lo[YAW], hi[YAW] = -math.pi / 2, math.pi / 2
        lo[DELTA], hi[DELTA] = -prim.delta_limit, prim.delta_limit
        lo[GRIP], hi[GRIP] = -1.0, 1.0
        lo[STIFF], hi[STIFF] = ctl.k_min, ctl.k_max
        self.lo, self.hi = lo, hi
        self.mask = masks()

    def to_physical(self, unit: np.ndarray) -> np.ndarray:
        unit = np.clip(np.asarray(unit, float), -1.0, 1.0)
        return self.lo + (unit + 1.0) * 0.5 * (self.hi - self.lo)

    def to_unit(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(2.0 * (np.asarray(theta, float) - self.lo) / (self.hi - self.lo) - 1.0, -1.0, 1.0)

    def decode(self, primitive: int, theta: np.ndarray) -> PrimitiveCall:
        """PrimitiveCall carrying every field of ``theta`` (physical units)."""
        theta = np.asarray(theta, float)
        return PrimitiveCall(id=PrimitiveId(primitive), pos=theta[POS].copy(), yaw=float(theta[YAW]),
                             delta=theta[DELTA].copy(), gripper=bool(theta[GRIP] > 0.0),
                             stiffness=theta[STIFF].copy())

    def encode(self, call: PrimitiveCall) -> np.ndarray:
        theta = np.zeros(THETA_DIM)
        theta[POS] = call.pos
        theta[YAW] = call.yaw
        theta[DELTA] = call.delta
        theta[GRIP] = 1.0 if call.gripper else -1.0
        theta[STIFF] = call.stiffness
        return theta

    def active_dims(self, primitive: int) -> int:
        return int(self.mask[int(primitive)].sum())
