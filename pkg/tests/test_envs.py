import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from imphrl import envs
from imphrl.config import make_config, task_spec
from imphrl.primitives import PrimitiveCall, PrimitiveId

KINDS = ("lift", "door", "wipe", "cleanup")


@pytest.mark.parametrize("kind", KINDS)
def test_reset_deterministic(kind):
    spec = task_spec(kind)
    a, oa = envs.reset(spec, 7)
    b, ob = envs.reset(spec, 7)
    assert oa.tobytes() == ob.tobytes()
    assert a.randomization == b.randomization
    assert len(oa) == envs.obs_dim(kind) == len(envs.obs_scale(kind))
    assert np.all(np.isfinite(oa))
    for key in ("table_height", "friction", "ee", "object_xy"):
        assert key in a.randomization


def test_reset_positions_uniform():
    spec = task_spec("lift")
    xs, ys, hs = [], [], []
    for seed in range(1000):
        ep, _ = envs.reset(spec, seed)
        xs.append(ep.randomization["object_xy"][0])
        ys.append(ep.randomization["object_xy"][1])
        hs.append(ep.randomization["table_height"])
    for vals, (lo, hi) in ((xs, spec.object_x), (ys, spec.object_y), (hs, spec.table_height)):
        assert stats.kstest(vals, stats.uniform(loc=lo, scale=hi - lo).cdf).pvalue > 0.01


def test_wipe_coverage():
    spec = task_spec("wipe")
    for seed in range(20):
        ep, _ = envs.reset(spec, seed)
        cells = ep.state.stains.cells
        assert ep.state.stains.initial_count == int(cells.sum())
        assert cells.mean() == pytest.approx(0.40, abs=0.03)
        width = int(cells.any(axis=0).sum()) * spec.stain_cell
        assert width == pytest.approx(0.04, abs=1e-9)


def test_horizons():
    assert task_spec("lift").horizon_atomic == 150
    assert task_spec("door").horizon_atomic == 150
    assert task_spec("cleanup").horizon_atomic == 150
    assert task_spec("wipe").horizon_atomic == 300


def test_lift_success_threshold():
    spec = task_spec("lift")
    ep, _ = envs.reset(spec, 0)
    s = ep.state
    h = s.world.table_height
    s.object("cube").pos[2] = h + 0.25
    assert envs.check_success(s, spec)
    s.object("cube").pos[2] = h + 0.19
    assert not envs.check_success(s, spec)


def test_door_success():
    spec = task_spec("door")
    ep, _ = envs.reset(spec, 0)
    s = ep.state
    s.door.s, s.door.phi = 0.16, math.radians(31)
    assert envs.check_success(s, spec)
    s.door.phi = math.radians(29)
    assert not envs.check_success(s, spec)


def test_cleanup_success():
    spec = task_spec("cleanup")
    ep, _ = envs.reset(spec, 0)
    s = ep.state
    h = s.world.table_height
    s.object("jello").pos[:2] = envs.TABLE_CORNER + np.array([0.05, 0.05])
    can = s.object("can")
    can.pos[:] = [envs.BIN_CENTER[0], envs.BIN_CENTER[1], h - 0.02]
    assert envs.check_success(s, spec)
    s.object("jello").pos[:2] = envs.TABLE_CORNER + np.array([0.1, 0.05])
    assert not envs.check_success(s, spec)


def test_wipe_success():
    spec = task_spec("wipe")
    ep, _ = envs.reset(spec, 0)
    assert not envs.check_success(ep.state, spec)
    ep.state.stains.cells[:] = False
    assert envs.check_success(ep.state, spec)


def test_lift_scripted_success():
    cfg = make_config("lift")
    env = envs.TaskEnv(cfg)
    env.reset(3)
    kp = env.episode.state.object("cube").keypoint.copy()
    _, _, done, info = env.step(PrimitiveCall(PrimitiveId.GRASP, pos=kp, stiffness=[300, 300, 300, 10]))
    assert not done and env.episode.state.held_object == "cube"
    up = kp + np.array([0, 0, 0.3])
    _, r, done, info = env.step(PrimitiveCall(PrimitiveId.REACH, pos=up, stiffness=[300, 300, 300, 10]))
    assert done and info.success
    assert r == pytest.approx(envs.progress(env.episode.state, cfg.task) - cfg.task.decision_cost
                              + envs.success_bonus(cfg.task, info.budget_used))


def random_call(rng):
    pid = PrimitiveId(int(rng.integers(5)))
    return PrimitiveCall(pid, pos=rng.uniform([-0.15, -0.15, -0.02], [0.15, 0.15, 0.4]),
                         delta=rng.uniform(-0.2, 0.2, 3), gripper=bool(rng.integers(2)),
                         yaw=float(rng.uniform(-1, 1)), stiffness=rng.uniform([10, 10, 10, 1], [500, 500, 500, 50]))


@pytest.mark.parametrize("kind", KINDS)
def test_random_episode_invariants(kind):
    cfg = make_config(kind)
    rng = np.random.default_rng(5)
    spec = cfg.task
    lo, hi = envs.reward_bounds(kind)
    for seed in range(3):
        ep, obs = envs.reset(spec, seed)
        wiped = 0.0
        last_cost = 0
        while not ep.done:
            before = ep.budget_used
            ep, obs, r, done, info = envs.env_step(ep, random_call(rng), cfg)
            last_cost = info.cost
            assert np.all(np.isfinite(obs)) and len(obs) == envs.obs_dim(kind)
            base = r - (envs.success_bonus(spec, info.budget_used) if info.success else 0.0) + spec.decision_cost
            assert lo - 1e-12 <= base <= hi + 1e-12
            assert info.budget_used == before + info.cost
            assert info.shaped_reward == pytest.approx(5.0 * r + 10.0 * info.affordance)
            if kind == "wipe":
                frac = ep.state.stains.fraction_wiped()
                assert frac >= wiped
                assert info.success == (frac == 1.0)
                wiped = frac
            # observation is a pure function of the state
            assert obs.tobytes() == envs.observe(ep.state, spec).tobytes()
        assert ep.budget_used < spec.horizon_atomic + last_cost
        with pytest.raises(RuntimeError):
            envs.env_step(ep, random_call(rng), cfg)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_single_step_properties(kind, reset_seed, call_seed):
    cfg = make_config(kind)
    ep, _ = envs.reset(cfg.task, reset_seed)
    lo, hi = envs.reward_bounds(kind)
    ep, obs, r, done, info = envs.env_step(ep, random_call(np.random.default_rng(call_seed)), cfg)
    base = r - (envs.success_bonus(cfg.task, info.budget_used) if info.success else 0.0) + cfg.task.decision_cost
    assert lo - 1e-12 <= base <= hi + 1e-12
    assert info.budget_used == info.cost >= 1
    assert 0.0 <= info.affordance <= 1.0
    assert obs.tobytes() == envs.observe(ep.state, cfg.task).tobytes()


def test_failure_ends_episode():
    cfg = make_config("lift")
    ep, _ = envs.reset(cfg.task, 0)
    ep, _, r, done, info = envs.env_step(ep, PrimitiveCall(PrimitiveId.REACH, pos=[np.nan, 0, 0.2]), cfg)
    assert done and info.failed and not info.success and r == -1.0 - cfg.task.decision_cost


def test_episode_log(tmp_path):
    cfg = make_config("lift")
    env = envs.TaskEnv(cfg)
    env.reset(0)
    call = PrimitiveCall(PrimitiveId.ATOMIC, delta=[0.01, 0, 0])
    _, r, _, info = env.step(call)
    with envs.EpisodeLog(tmp_path / "e.csv") as log:
        log.write(0, 0, PrimitiveId.ATOMIC, np.zeros(12), info, r)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0].split(",") == envs.EPISODE_LOG_COLUMNS
    assert lines[1].startswith("0,0,atomic,")
