"""Run configuration: nested dataclasses, YAML round-trip, hashing and profiles.

Every physical constant, threshold and hyperparameter used by the package lives
here so that a run directory's ``config.yaml`` is enough to reproduce it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

TASK_KINDS = ("lift", "door", "wipe", "cleanup")
ABLATIONS = ("full", "case1", "case2", "case3")
PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class SimConfig:
    dt: float = 0.002
    m_eff: float = 1.0
    yaw_inertia: float = 0.05
    k_table: float = 5000.0
    c_table: float = 50.0
    mu: float = 0.5
    slip_speed: float = 0.01
    ee_radius: float = 0.01
    k_object: float = 5000.0
    c_object: float = 50.0
    gravity: float = 9.81
    grasp_radius: float = 0.02
    object_mass: float = 0.2
    workspace_lo: tuple[float, float, float] = (-0.3, -0.3, -0.12)
    workspace_hi: tuple[float, float, float] = (0.3, 0.3, 0.45)
    yaw_limit: float = math.pi / 2

    def validate(self, path: str = "sim") -> None:
        for name in ("dt", "m_eff", "yaw_inertia", "k_table", "k_object", "slip_speed", "ee_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}: must be > 0")
        if not 0 <= self.mu:
            raise ConfigError(f"{path}.mu: must be >= 0")
        if any(lo >= hi for lo, hi in zip(self.workspace_lo, self.workspace_hi)):
            raise ConfigError(f"{path}.workspace_lo: must be below workspace_hi on every axis")


@dataclass
class ControllerConfig:
    """Adaptive stiffness law constants plus the ablation switch ``mode``."""

    beta: float = 2000.0
    gamma_e: float = 100.0
    k_min: tuple[float, float, float, float] = (10.0, 10.0, 10.0, 1.0)
    k_max: tuple[float, float, float, float] = (500.0, 500.0, 500.0, 50.0)
    mode: str = "adaptive"  # adaptive | static
    energy_term: str = "power"  # power | energy (cumulative Joules, not recommended)
    max_step: float = 0.002
    max_yaw_step: float = 0.02
    fit_mse: tuple[float, ...] = ()  # diagnostics written by fit-params

    def validate(self, path: str = "controller") -> None:
        if self.beta < 0 or self.gamma_e < 0:
            raise ConfigError(f"{path}.beta/gamma_e: must be >= 0")
        if len(self.k_min) != 4 or len(self.k_max) != 4:
            raise ConfigError(f"{path}.k_min/k_max: need 4 entries (x, y, z, yaw)")
        for i, (lo, hi) in enumerate(zip(self.k_min, self.k_max)):
            if not 0 < lo < hi:
                raise ConfigError(f"{path}.k_min[{i}]: need 0 < k_min < k_max")
        if self.mode not in ("adaptive", "static"):
            raise ConfigError(f"{path}.mode: expected 'adaptive' or 'static', got {self.mode!r}")
        if self.energy_term not in ("power", "energy"):
            raise ConfigError(f"{path}.energy_term: expected 'power' or 'energy'")
        if not self.max_step > 0 or not self.max_yaw_step > 0:
            raise ConfigError(f"{path}.max_step: must be > 0")


@dataclass
class PrimitiveConfig:
    pos_tol: float = 0.005
    reach_ticks: int = 400
    push_ticks: int = 400
    atomic_ticks: int = 10
    atomic_clamp: float = 0.02
    gripper_ticks: int = 5
    grasp_approach: float = 0.05
    ticks_per_atomic: int = 25
    delta_limit: float = 0.25
    settle_speed: float = 0.005

    def validate(self, path: str = "primitives") -> None:
        for name in ("reach_ticks", "push_ticks", "atomic_ticks", "gripper_ticks", "ticks_per_atomic"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name}: must be >= 1")
        if not self.pos_tol > 0 or not self.atomic_clamp > 0:
            raise ConfigError(f"{path}.pos_tol/atomic_clamp: must be > 0")


@dataclass
class AffordanceConfig:
    tau: float = 0.02
    k_floor: float = 0.05
    k_scale: float = 1.0 / 3.0
    lambda_aff: float = 10.0
    reward_scale: float = 5.0
    stiffness_affordance: bool = True

    def validate(self, path: str = "affordance") -> None:
        if not self.tau > 0:
            raise ConfigError(f"{path}.tau: must be > 0")
        if not self.k_scale > 0:
            raise ConfigError(f"{path}.k_scale: must be > 0")
        if self.lambda_aff < 0:
            raise ConfigError(f"{path}.lambda_aff: must be >= 0")


@dataclass
class TaskSpec:
    kind: str = "lift"
    horizon_atomic: int = 150
    # randomization ranges (lo, hi)
    table_friction: tuple[float, float] = (0.4, 0.6)
    table_height: tuple[float, float] = (-0.02, 0.02)
    object_x: tuple[float, float] = (-0.08, 0.08)
    object_y: tuple[float, float] = (-0.08, 0.08)
    ee_x: tuple[float, float] = (-0.05, 0.05)
    ee_y: tuple[float, float] = (-0.05, 0.05)
    ee_z: tuple[float, float] = (0.15, 0.25)
    # success thresholds
    lift_height: float = 0.20
    door_position: float = 0.15
    door_angle_deg: float = 30.0
    cleanup_corner_dist: float = 0.10
    # wipe
    stain_coverage: float = 0.40
    stain_line_width: float = 0.04
    stain_half_length: tuple[float, float] = (0.05, 0.10)
    stain_cell: float = 0.01
    wipe_force_band: tuple[float, float] = (1.0, 20.0)
    wipe_pad_radius: float = 0.03
    # rewards: success pays a base bonus plus a per-unit amount for every
    # atomic unit left in the budget, so finishing early always dominates
    # collecting shaping reward until the horizon
    success_bonus: float = 50.0
    success_bonus_per_unit: float = 3.0
    # flat cost charged on every decision, in env-reward units; at reward_scale * 2 it
    # offsets the affordance credit that atomic and gripper-open decisions always earn,
    # so that padding an episode with them is worth nothing by itself
    decision_cost: float = 2.0

    def validate(self, path: str = "task") -> None:
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"{path}.kind: expected one of {TASK_KINDS}, got {self.kind!r}")
        if self.horizon_atomic < 1:
            raise ConfigError(f"{path}.horizon_atomic: must be >= 1")
        for name in ("table_friction", "table_height", "object_x", "object_y", "ee_x", "ee_y", "ee_z",
                     "stain_half_length", "wipe_force_band"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{path}.{name}: degenerate range ({lo}, {hi})")
        if self.decision_cost < 0:
            raise ConfigError(f"{path}.decision_cost: must be >= 0")
        if not 0 < self.stain_coverage < 1:
            raise ConfigError(f"{path}.stain_coverage: must be in (0, 1)")


def default_horizon(kind: str) -> int:
    return 300 if kind == "wipe" else 150


def task_spec(kind: str, **overrides: Any) -> TaskSpec:
    """TaskSpec with the per-task horizon and ranges filled in."""
    base: dict[str, Any] = {"kind": kind, "horizon_atomic": default_horizon(kind)}
    if kind == "wipe":
        base["table_height"] = (-0.03, 0.03)
    base.update(overrides)
    spec = TaskSpec(**base)
    spec.validate()
    return spec


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (512, 512)
    hidden_activation: str = "relu"
    policy_output_activation: str = "tanh"
    q_output_activation: str = "none"
    optimizer: str = "adam"
    batch_size: int = 1024
    lr: float = 3e-5
    tau_net: float = 1e-3
    discount: float = 0.99
    discount_mode: str = "decision"  # decision | atomic
    # parameter-head weighting in the policy loss: "uniform" trains every primitive's head
    # equally, "policy" weights each head by its current primitive probability
    head_weighting: str = "uniform"
    buffer_size: int = 1_000_000
    steps_per_epoch: int = 1000
    explore_per_epoch: int = 3000
    entropy_epochs: int = 200
    epochs: int = 1000
    warmup_epochs: int = 10
    eval_episodes: int = 20
    checkpoint_every: int = 50
    eval_every: int = 10
    init_alpha: float = 1.0
    target_entropy_discrete: float = 0.5  # fraction of log(n_primitives)
    target_entropy_scale: float = 1.0  # continuous target = -scale * active dims
    reward_normalizer: float = 1.0  # shaped rewards are divided by this before entering the buffer
    torch_threads: int = 1

    def validate(self, path: str = "train") -> None:
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"{path}.hidden: need positive layer sizes")
        if self.hidden_activation != "relu" or self.policy_output_activation != "tanh":
            raise ConfigError(f"{path}.hidden_activation: only relu hidden / tanh policy output supported")
        if self.q_output_activation != "none" or self.optimizer != "adam":
            raise ConfigError(f"{path}.optimizer: only adam with linear critic output supported")
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size: must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"{path}.lr: must be > 0")
        if not 0 < self.tau_net <= 1:
            raise ConfigError(f"{path}.tau_net: must be in (0, 1]")
        if not 0 <= self.discount <= 1:
            raise ConfigError(f"{path}.discount: must be in [0, 1]")
        if self.discount_mode not in ("decision", "atomic"):
            raise ConfigError(f"{path}.discount_mode: expected 'decision' or 'atomic'")
        if self.head_weighting not in ("uniform", "policy"):
            raise ConfigError(f"{path}.head_weighting: expected 'uniform' or 'policy'")
        if not self.reward_normalizer > 0:
            raise ConfigError(f"{path}.reward_normalizer: must be > 0")
        if self.buffer_size < self.batch_size:
            raise ConfigError(f"{path}.buffer_size: smaller than batch_size")
        for name in ("steps_per_epoch", "explore_per_epoch", "epochs", "eval_episodes", "checkpoint_every", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{path}.{name}: must be >= 0")


# Reference hyperparameters the ``paper`` profile must reproduce exactly.
PAPER_TRAIN = dict(
    hidden=(512, 512),
    hidden_activation="relu",
    policy_output_activation="tanh",
    q_output_activation="none",
    optimizer="adam",
    batch_size=1024,
    lr=3e-5,
    tau_net=1e-3,
    discount=0.99,
    buffer_size=1_000_000,
    steps_per_epoch=1000,
    explore_per_epoch=3000,
    entropy_epochs=200,
)
PAPER_AFFORDANCE = dict(reward_scale=5.0, lambda_aff=10.0)
PAPER_HORIZONS = {"lift": 150, "door": 150, "cleanup": 150, "wipe": 300}

DESK_TRAIN = dict(
    hidden=(128, 128),
    batch_size=128,
    lr=3e-4,
    steps_per_epoch=200,
    explore_per_epoch=1500,
    epochs=150,
    warmup_epochs=10,
    eval_episodes=10,
    checkpoint_every=25,
    eval_every=5,
    reward_normalizer=3.0,
)


@dataclass
class RunConfig:
    profile: str = "desk"
    ablation: str = "full"
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs/default"
    trace: bool = False
    task: TaskSpec = field(default_factory=TaskSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    primitives: PrimitiveConfig = field(default_factory=PrimitiveConfig)
    affordance: AffordanceConfig = field(default_factory=AffordanceConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**{**DESK_TRAIN}))

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: expected one of {PROFILES}, got {self.profile!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation: expected one of {ABLATIONS}, got {self.ablation!r}")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        self.task.validate()
        self.sim.validate()
        self.controller.validate()
        self.primitives.validate()
        self.affordance.validate()
        self.train.validate()
        expected = ablation_switches(self.ablation)
        if (self.controller.mode, self.affordance.stiffness_affordance) != expected:
            raise ConfigError(
                f"ablation: {self.ablation!r} requires controller.mode={expected[0]!r} and "
                f"affordance.stiffness_affordance={expected[1]}")
        if self.profile == "paper":
            check_paper_profile(self)

    def to_dict(self) -> dict[str, Any]:
        return _to_plain(dataclasses.asdict(self))

    def semantic_dict(self) -> dict[str, Any]:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("trace")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def dump(self, path: str | os.PathLike) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def ablation_switches(ablation: str) -> tuple[str, bool]:
    """(controller mode, stiffness affordance on) for an ablation arm."""
    return {
        "full": ("adaptive", True),
        "case1": ("adaptive", False),
        "case2": ("static", True),
        "case3": ("static", False),
    }[ablation]


def apply_ablation(cfg: RunConfig, ablation: str) -> RunConfig:
    if ablation not in ABLATIONS:
        raise ConfigError(f"ablation: expected one of {ABLATIONS}, got {ablation!r}")
    mode, stiff = ablation_switches(ablation)
    cfg.ablation = ablation
    cfg.controller.mode = mode
    cfg.affordance.stiffness_affordance = stiff
    return cfg


def apply_profile(cfg: RunConfig, profile: str) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"profile: expected one of {PROFILES}, got {profile!r}")
    cfg.profile = profile
    # TrainConfig defaults are the reference values; the desk profile overrides a subset
    cfg.train = TrainConfig(**PAPER_TRAIN) if profile == "paper" else TrainConfig(**DESK_TRAIN)
    if profile == "paper":
        cfg.affordance.reward_scale = PAPER_AFFORDANCE["reward_scale"]
        cfg.affordance.lambda_aff = PAPER_AFFORDANCE["lambda_aff"]
        cfg.task.horizon_atomic = PAPER_HORIZONS[cfg.task.kind]
    return cfg


def check_paper_profile(cfg: RunConfig) -> None:
    for k, v in PAPER_TRAIN.items():
        if getattr(cfg.train, k) != v:
            raise ConfigError(f"train.{k}: paper profile requires {v!r}, got {getattr(cfg.train, k)!r}")
    for k, v in PAPER_AFFORDANCE.items():
        if getattr(cfg.affordance, k) != v:
            raise ConfigError(f"affordance.{k}: paper profile requires {v!r}")
    want = PAPER_HORIZONS[cfg.task.kind]
    if cfg.task.horizon_atomic != want:
        raise ConfigError(f"task.horizon_atomic: paper profile requires {want} for {cfg.task.kind}")


def make_config(kind: str = "lift", profile: str = "desk", ablation: str = "full", **task_overrides: Any) -> RunConfig:
    cfg = RunConfig(task=task_spec(kind, **task_overrides))
    apply_profile(cfg, profile)
    apply_ablation(cfg, ablation)
    cfg.validate()
    return cfg


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _build(cls: type, data: dict[str, Any], path: str) -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{path}.{name}" if path else name)
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = dict(data)
    profile = data.get("profile", "desk")
    task = data.get("task", {})
    if not isinstance(task, dict):
        raise ConfigError("task: expected a mapping")
    kind = task.get("kind", "lift")
    if kind not in TASK_KINDS:
        raise ConfigError(f"task.kind: expected one of {TASK_KINDS}, got {kind!r}")
    # Start from the profile + per-task defaults, then overlay the file.
    base = make_config(kind, profile if profile in PROFILES else "desk",
                       data.get("ablation", "full") if data.get("ablation", "full") in ABLATIONS else "full")
    merged = _deep_merge(base.to_dict(), data)
    cfg = _build(RunConfig, merged, "")
    cfg.validate()
    return cfg


def _deep_merge(base: dict[str, Any], over: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: malformed YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    cfg = config_from_dict(data)
    env_out = os.environ.get("IMPHRL_OUTPUT_DIR")
    if env_out:
        cfg.output_dir = env_out
    return cfg
