"""Fitting the adaptive-stiffness gains from demonstrations.

A demonstration records the interaction force F_h, the displacement dx and the
observed stiffness rate per axis. Replaying the force through the lumped-mass
plant yields the actuation power P, so each demo gives the linear regression

    kdot_i(t) ~ beta*|dx_i(t)| - gamma_e*P(t)

which is solved per demo from its 2x2 normal equations. The per-demo
estimates are clamped at zero and averaged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from .config import SimConfig

CSV_HEADER = ["time", "fx", "fy", "fz", "dx", "dy", "dz", "kdot_x", "kdot_y", "kdot_z"]
PRIMITIVE_KINDS = ("reach", "push", "atomic")
MIN_SAMPLES = 10


class DemoFormatError(ValueError):
    """Malformed demonstration file; the message carries file and line."""


class FitDegenerate(ValueError):
    """Regressors of a demonstration do not determine both gains."""


@dataclass
class Demonstration:
    time: np.ndarray  # (n,)
    force: np.ndarray  # (n, 3) N
    disp: np.ndarray  # (n, 3) m
    kdot: np.ndarray  # (n, 3)
    primitive_kind: Optional[str] = None
    name: str = "demo"

    def __post_init__(self) -> None:
        n = len(self.time)
        if n < MIN_SAMPLES:
            raise ValueError(f"{self.name}: need at least {MIN_SAMPLES} samples, got {n}")
        for arr, label in ((self.force, "force"), (self.disp, "disp"), (self.kdot, "kdot")):
            if arr.shape != (n, 3):
                raise ValueError(f"{self.name}: {label} must have shape ({n}, 3)")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError(f"{self.name}: timestamps must be strictly increasing")
        if self.primitive_kind is not None and self.primitive_kind not in PRIMITIVE_KINDS:
            raise ValueError(f"{self.name}: unknown primitive kind {self.primitive_kind!r}")


@dataclass
class FitResult:
    beta: float
    gamma_e: float
    mse: list[float]
    per_demo: list[tuple[float, float]] = field(default_factory=list)

    def fragment(self) -> dict:
        """Config fragment that merges into a run config's ``controller`` block."""
        return {"controller": {"beta": float(self.beta), "gamma_e": float(self.gamma_e),
                               "fit_mse": [float(m) for m in self.mse]}}


# ----------------------------------------------------------------------------
# CSV


def save_demo(path: str | Path, demo: Demonstration) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for n in range(len(demo.time)):
            row = [demo.time[n], *demo.force[n], *demo.disp[n], *demo.kdot[n]]
            w.writerow([repr(float(v)) for v in row])


def _kind_from_name(stem: str) -> Optional[str]:
    head = stem.split("_")[0].lower()
    return head if head in PRIMITIVE_KINDS else None


def load_demo(path: str | Path) -> Demonstration:
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DemoFormatError(f"{path}:1: empty file")
        if [h.strip() for h in header] != CSV_HEADER:
            raise DemoFormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise DemoFormatError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                raise DemoFormatError(f"{path}:{lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise DemoFormatError(f"{path}:{lineno}: non-finite value")
            if rows and vals[0] <= rows[-1][0]:
                raise DemoFormatError(f"{path}:{lineno}: time not strictly increasing")
            rows.append(vals)
    if len(rows) < MIN_SAMPLES:
        raise DemoFormatError(f"{path}: need at least {MIN_SAMPLES} samples, got {len(rows)}")
    a = np.array(rows)
    return Demonstration(time=a[:, 0], force=a[:, 1:4], disp=a[:, 4:7], kdot=a[:, 7:10],
                         primitive_kind=_kind_from_name(path.stem), name=path.name)


def load_demo_dir(directory: str | Path) -> list[Demonstration]:
    files = sorted(Path(directory).glob("*.csv"))
    return [load_demo(f) for f in files]


# ----------------------------------------------------------------------------
# replay and fit


def replay_power(demo: Demonstration, m_eff: float = 1.0) -> np.ndarray:
    """Actuation power at every sample when the recorded force drives the plant.

    Velocity starts at rest and is advanced with the force held over each
    sampling interval; P_n = |F_n . v_n|.
    """
    n = len(demo.time)
    v = np.zeros((n, 3))
    dts = np.diff(demo.time)
    for i in range(n - 1):
        v[i + 1] = v[i] + dts[i] * demo.force[i] / m_eff
    return np.abs(np.einsum("ij,ij->i", demo.force, v))


def regressors(demo: Demonstration, m_eff: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix (3n, 2) with columns |dx| and -P, and the targets (3n,)."""
    p = replay_power(demo, m_eff)
    a = np.column_stack([np.abs(demo.disp).reshape(-1), -np.repeat(p, 3)])
    return a, demo.kdot.reshape(-1)


def _solve_2x2(a: np.ndarray, y: np.ndarray, name: str) -> np.ndarray:
    g = a.T @ a
    b = a.T @ y
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    scale = g[0, 0] * g[1, 1]
    if not scale > 0 or not det > 1e-12 * scale:
        raise FitDegenerate(f"{name}: regressors are rank deficient (constant-zero error or power?)")
    return np.array([g[1, 1] * b[0] - g[0, 1] * b[1], g[0, 0] * b[1] - g[1, 0] * b[0]]) / det


def fit_adaptive_params(demos: Sequence[Demonstration], m_eff: float = 1.0) -> FitResult:
    if not demos:
        raise ValueError("need at least one demonstration")
    ests, mses = [], []
    for demo in demos:
        a, y = regressors(demo, m_eff)
        theta = np.maximum(_solve_2x2(a, y, demo.name), 0.0)
        ests.append((float(theta[0]), float(theta[1])))
        mses.append(float(np.mean((a @ theta - y) ** 2)))
    mean = np.mean(np.array(ests), axis=0)
    return FitResult(beta=float(mean[0]), gamma_e=float(mean[1]), mse=mses, per_demo=ests)


def write_fragment(path: str | Path, result: FitResult) -> None:
    Path(path).write_text(yaml.safe_dump(result.fragment(), sort_keys=False))


# ----------------------------------------------------------------------------
# synthetic demonstrations


def synthetic_demo(kind: str, beta: float, gamma_e: float, rng: np.random.Generator,
                   noise: float = 0.0, sim: SimConfig = SimConfig(), subsample: int = 1,
                   name: Optional[str] = None) -> Demonstration:
    """Scripted linear primitive motion played through the plant.

    The executor's initial stiffness comes from the human force/stiffness map,
    the interaction force is the commanded impedance force, and the recorded
    stiffness rate follows the adaptive law on the replayed regressors.
    ``noise`` adds Gaussian noise with that fraction of the rate's range.
    """
    from .controller import normalize_stiffness
    from .primitives import PrimitiveCall, PrimitiveId, execute_primitive
    from .config import ControllerConfig, PrimitiveConfig
    from .sim import SimState

    if kind not in PRIMITIVE_KINDS:
        raise ValueError(f"unknown primitive kind {kind!r}")
    start = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.15, 0.25)])
    state = SimState(ee_pos=start)
    f_demo = rng.uniform(2.0, 15.0)
    k0 = normalize_stiffness(f_demo, 1.0, 20.0, 50.0, 400.0)
    stiff = np.array([k0, k0, k0, 10.0])
    if kind == "reach":
        goal = start + rng.uniform(-0.12, 0.12, 3) * np.array([1, 1, 0.5])
        call = PrimitiveCall(PrimitiveId.REACH, pos=goal, stiffness=stiff)
    elif kind == "push":
        goal = start + rng.uniform(-0.05, 0.05, 3) * np.array([1, 1, 0.5])
        call = PrimitiveCall(PrimitiveId.PUSH, pos=goal, delta=rng.uniform(-0.08, 0.08, 3) * np.array([1, 1, 0]),
                             stiffness=stiff)
    else:
        call = PrimitiveCall(PrimitiveId.ATOMIC, delta=rng.uniform(-0.02, 0.02, 3), stiffness=stiff)
    ctl = ControllerConfig(mode="static")
    prim = PrimitiveConfig(atomic_ticks=60, reach_ticks=240, push_ticks=240, pos_tol=1e-4)
    out = execute_primitive(state, call, ctl, prim, sim)
    tr = out.trace[::subsample]
    from . import kernels as kn
    time = tr[:, kn.TR_TIME]
    force = tr[:, kn.TR_FCMD:kn.TR_FCMD + 3]
    disp = tr[:, kn.TR_EPS:kn.TR_EPS + 3]
    demo = Demonstration(time=time, force=force, disp=disp, kdot=np.zeros_like(disp), primitive_kind=kind,
                         name=name or f"{kind}_synthetic")
    p = replay_power(demo, sim.m_eff)
    kdot = beta * np.abs(disp) - gamma_e * p[:, None]
    if noise > 0:
        span = float(kdot.max() - kdot.min())
        kdot = kdot + rng.normal(0.0, noise * span, kdot.shape)
    demo.kdot = kdot
    return demo


def synthetic_demo_set(beta: float, gamma_e: float, seed: int, per_kind: int = 5,
                       noise: float = 0.0) -> list[Demonstration]:
    """``per_kind`` demonstrations each of reach, push and atomic."""
    rng = np.random.default_rng(seed)
    demos = []
    for kind in PRIMITIVE_KINDS:
        for i in range(per_kind):
            demos.append(synthetic_demo(kind, beta, gamma_e, rng, noise=noise, name=f"{kind}_{i:02d}.csv"))
    return demos


def write_demo_set(directory: str | Path, demos: Iterable[Demonstration]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in demos:
        p = directory / (d.name if d.name.endswith(".csv") else d.name + ".csv")
        save_demo(p, d)
        paths.append(p)
    return paths
