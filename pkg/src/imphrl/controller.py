"""Adaptive variable-stiffness impedance controller.

Stiffness on every axis follows dK/dt = beta*|eps| - gamma_e*P, where eps is
the closed-loop error on that axis and P the shared actuation power. Damping is
kept critical (d = 2*sqrt(k*m)) after every update. The numeric work is done by
the compiled kernels so that these helpers and the primitive executor share one
code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels as kn
from .config import ConfigError, ControllerConfig, SimConfig


@dataclass(frozen=True)
class AdaptiveParams:
    beta: float
    gamma_e: float
    k_min: tuple[float, float, float, float] = (10.0, 10.0, 10.0, 1.0)
    k_max: tuple[float, float, float, float] = (500.0, 500.0, 500.0, 50.0)

    def __post_init__(self) -> None:
        if self.beta < 0 or self.gamma_e < 0:
            raise ConfigError("controller.beta/gamma_e: must be >= 0")
        lo, hi = np.asarray(self.k_min, float), np.asarray(self.k_max, float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo <= 0) or np.any(lo >= hi):
            raise ConfigError("controller.k_min/k_max: need 4 positive entries with k_min < k_max")

    @classmethod
    def from_config(cls, cfg: ControllerConfig) -> "AdaptiveParams":
        return cls(cfg.beta, cfg.gamma_e, tuple(cfg.k_min), tuple(cfg.k_max))

    def clamp(self, k: Sequence[float]) -> np.ndarray:
        return np.clip(np.asarray(k, float), self.k_min, self.k_max)


@dataclass
class ControllerState:
    k: np.ndarray
    eps: np.ndarray = field(default_factory=lambda: np.zeros(4))
    power: float = 0.0
    setpoint: np.ndarray = field(default_factory=lambda: np.zeros(4))
    target: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def copy(self) -> "ControllerState":
        return replace(self, k=self.k.copy(), eps=self.eps.copy(), setpoint=self.setpoint.copy(),
                       target=self.target.copy())


def adapt_stiffness(cs: ControllerState, params: AdaptiveParams, dt: float) -> ControllerState:
    """One explicit Euler step of the stiffness law, clamped to the bounds.

    The caller is responsible for refreshing damping with ``critical_damping``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = cs.copy()
    kn.adapt(out.k, np.asarray(cs.eps, float), float(cs.power), params.beta, params.gamma_e,
             np.asarray(params.k_min, float), np.asarray(params.k_max, float), dt)
    return out


def critical_damping(k: Sequence[float], m_eff: float = 1.0, inertia: float = 0.05) -> np.ndarray:
    """Per-axis critical damping 2*sqrt(k*m); yaw uses the rotational inertia."""
    k = np.asarray(k, dtype=float)
    if k.shape != (4,):
        raise ValueError("expected 4 stiffness entries (x, y, z, yaw)")
    if not np.all(k > 0):
        raise ValueError("critical damping needs strictly positive stiffness")
    d = np.empty(4)
    kn.damping(k, np.array([m_eff, m_eff, m_eff, inertia]), d)
    return d


def interpolate_setpoint(cs: ControllerState, max_step: float, max_yaw_step: float = np.inf) -> ControllerState:
    """Advance the setpoint toward the target by at most ``max_step`` metres."""
    if not max_step > 0:
        raise ValueError("max_step must be positive")
    out = cs.copy()
    kn.interpolate(out.setpoint, np.asarray(cs.target, float), max_step, max_yaw_step)
    return out


def normalize_stiffness(f: float, f_lo: float, f_hi: float, k_lo: float, k_hi: float) -> float:
    """Affine map of a (clamped) human force onto the stiffness range."""
    if not f_hi > f_lo:
        raise ConfigError(f"force thresholds: need f_hi > f_lo, got ({f_lo}, {f_hi})")
    if not k_hi > k_lo:
        raise ConfigError(f"stiffness thresholds: need k_hi > k_lo, got ({k_lo}, {k_hi})")
    f = min(max(f, f_lo), f_hi)
    return k_lo + (k_hi - k_lo) * (f - f_lo) / (f_hi - f_lo)


def params_for(cfg: ControllerConfig) -> AdaptiveParams:
    return AdaptiveParams.from_config(cfg)


def axis_masses(sim: SimConfig) -> np.ndarray:
    return np.array([sim.m_eff, sim.m_eff, sim.m_eff, sim.yaw_inertia])
