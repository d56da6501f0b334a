import copy
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from imphrl import envs
from imphrl.config import TrainConfig, make_config
from imphrl.primitives import N_PRIMITIVES, PrimitiveId, execute_primitive
from imphrl.rl.action import THETA_DIM, ParamSpace, masks
from imphrl.rl.buffer import ReplayBuffer
from imphrl.rl.checkpoint import ConfigMismatch, load_checkpoint, read_header, save_checkpoint
from imphrl.rl.evaluate import EvalReport, EpisodeResult, evaluate
from imphrl.rl.sac import Batch, CheckpointCorrupt, HybridSAC, TrainingDiverged
from imphrl.sim import ObjectState, SimState

OBS = 6


def small_cfg(**kw):
    base = dict(hidden=(16, 16), batch_size=8, lr=1e-3, buffer_size=64, tau_net=0.1)
    base.update(kw)
    return TrainConfig(**base)


def agent(seed=0, dtype=torch.float32, **kw):
    return HybridSAC(OBS, small_cfg(**kw), ParamSpace(), np.ones(OBS), seed=seed, dtype=dtype)


def batch(n=8, seed=0, done=0.0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return Batch(obs=torch.randn(n, OBS, generator=g, dtype=dtype), prim=torch.randint(5, (n,), generator=g),
                 theta=torch.rand(n, THETA_DIM, generator=g, dtype=dtype) * 2 - 1,
                 reward=torch.randn(n, generator=g, dtype=dtype), next_obs=torch.randn(n, OBS, generator=g, dtype=dtype),
                 done=torch.full((n,), done, dtype=dtype), cost=torch.randint(1, 9, (n,), generator=g).to(dtype))


# ----------------------------------------------------------------------------
# action space


def test_masks_layout():
    m = masks()
    assert m.shape == (N_PRIMITIVES, THETA_DIM)
    assert m[PrimitiveId.GRIPPER].tolist() == [0] * 7 + [1] * 5
    assert np.all(m[:, 8:] == 1)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=12, max_size=12), st.integers(0, 4))
def test_decode_bounds_and_round_trip(unit, pid):
    sp = ParamSpace()
    th = sp.to_physical(np.array(unit))
    assert np.all(th >= sp.lo - 1e-12) and np.all(th <= sp.hi + 1e-12)
    call = sp.decode(pid, th)
    back = sp.encode(call)
    keep = np.ones(12, bool)
    keep[7] = False  # gripper is a sign
    assert np.allclose(back[keep], th[keep])
    assert call.gripper == (th[7] > 0)
    assert np.allclose(sp.to_unit(th), np.array(unit), atol=1e-9)


def test_masking_invariance_execution_and_critic():
    a = agent()
    sp = a.space
    half = np.array([0.025] * 3)
    cube = ObjectState(id="cube", pos=np.array([0, 0, 0.025]), yaw=0.0, half_extents=half,
                       keypoint=np.array([0, 0, 0.05]))
    rng = np.random.default_rng(0)
    for pid in PrimitiveId:
        u = rng.uniform(-1, 1, 12)
        v = u.copy()
        unused = sp.mask[pid] == 0
        v[unused] = rng.uniform(-1, 1, unused.sum())
        outs = [execute_primitive(SimState(ee_pos=np.array([0, 0, 0.2]), objects=[copy.deepcopy(cube)]),
                                  sp.decode(pid, sp.to_physical(x))) for x in (u, v)]
        assert outs[0].trace.tobytes() == outs[1].trace.tobytes()
        obs = torch.zeros(1, OBS)
        qa = a.taken_q(obs, torch.tensor([int(pid)]), torch.tensor(u[None], dtype=torch.float32))
        qb = a.taken_q(obs, torch.tensor([int(pid)]), torch.tensor(v[None], dtype=torch.float32))
        assert torch.equal(qa[0], qb[0]) and torch.equal(qa[1], qb[1])


# ----------------------------------------------------------------------------
# acting


def test_greedy_deterministic():
    a = agent()
    obs = np.linspace(-1, 1, OBS)
    x1, u1 = a.select_action(obs, "greedy")
    x2, u2 = a.select_action(obs, "greedy")
    assert x1.primitive == x2.primitive and np.array_equal(u1, u2)


def test_explore_uniform_logits():
    a = agent(seed=3)
    with torch.no_grad():
        a.actor.logits.weight.zero_()
        a.actor.logits.bias.zero_()
    n = 10_000
    counts = np.bincount([int(a.select_action(np.zeros(OBS), "explore")[0].primitive) for _ in range(n)],
                         minlength=5)
    p = 1 / 5
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_theta_within_bounds_random_weights():
    sp = ParamSpace()
    for seed in range(50):
        a = agent(seed=seed)
        with torch.no_grad():
            for p in a.actor.parameters():
                p.mul_(20.0)
        for obs in np.random.default_rng(seed).normal(0, 5, (200 // 50 + 1, OBS)):
            for mode in ("explore", "greedy"):
                x, u = a.select_action(obs, mode)
                assert np.all(np.abs(u) <= 1) and np.all(x.theta >= sp.lo) and np.all(x.theta <= sp.hi)


def test_non_finite_output_raises():
    a = agent()
    with torch.no_grad():
        a.actor.logits.bias.fill_(float("nan"))
    with pytest.raises(CheckpointCorrupt):
        a.select_action(np.zeros(OBS), "greedy")


# ----------------------------------------------------------------------------
# updates


def test_terminal_targets_equal_reward():
    a = agent()
    b = batch(done=1.0)
    assert torch.equal(a.critic_target(b), b.reward)
    mixed = batch()
    mixed.done[::2] = 1.0
    y = a.critic_target(mixed)
    assert torch.equal(y[::2], mixed.reward[::2])


def test_polyak_exact():
    a = agent(dtype=torch.float64, tau_net=0.25)
    old = [p.clone() for p in a.q1_targ.parameters()]
    a.update(batch(dtype=torch.float64))
    for o, t, n in zip(old, a.q1_targ.parameters(), a.q1.parameters()):
        assert torch.equal(t, (1 - 0.25) * o + 0.25 * n)


def test_head_weighting_keeps_categorical_gradient():
    obs = torch.randn(8, OBS, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    grads = {}
    for weighting in ("uniform", "policy"):
        a = agent(dtype=torch.float64, seed=2, head_weighting=weighting)
        a.log_alpha_l.data.fill_(math.log(0.3))
        loss, _ = a.policy_loss(obs, a._noise(8))
        grads[weighting] = torch.autograd.grad(loss, [a.actor.logits.weight, a.actor.logits.bias, a.actor.mean.weight])
    for g_u, g_p in zip(grads["uniform"][:2], grads["policy"][:2]):
        assert torch.allclose(g_u, g_p, rtol=1e-12, atol=1e-14)
    # parameter heads see different weights: uniform versus primitive probability
    assert not torch.allclose(grads["uniform"][2], grads["policy"][2])


def test_alpha_frozen_when_inactive():
    a = agent()
    a.alpha_active = False
    before = (a.log_alpha_h.item(), a.log_alpha_l.item())
    for s in range(3):
        a.update(batch(seed=s))
    assert (a.log_alpha_h.item(), a.log_alpha_l.item()) == before
    a.alpha_active = True
    a.update(batch(seed=9))
    assert (a.log_alpha_h.item(), a.log_alpha_l.item()) != before


def test_diverged_raises():
    a = agent()
    b = batch()
    b.reward[0] = float("nan")
    with pytest.raises(TrainingDiverged) as exc:
        a.update(b)
    assert "q_loss" in exc.value.diagnostics


def test_atomic_discount_mode():
    a = agent(discount_mode="atomic", discount=0.9)
    d = agent(discount_mode="decision", discount=0.9)
    d.load_state_tree(a.state_tree())
    b = batch()
    b.cost[:] = 1.0
    assert torch.allclose(a.critic_target(b), d.critic_target(b))


# ----------------------------------------------------------------------------
# buffer


def test_buffer_integrity_and_fifo():
    buf = ReplayBuffer(OBS, capacity=5, initial=2)
    for i in range(8):
        buf.add(np.full(OBS, i), i % 5, np.full(12, i / 10), float(i), np.full(OBS, i + 1), i % 2 == 0, i + 1)
    assert len(buf) == 5
    assert buf.ordered("reward").tolist() == [3.0, 4.0, 5.0, 6.0, 7.0]
    b = buf.sample(64, np.random.default_rng(0), dtype=torch.float64)
    for k in range(64):
        i = int(b.reward[k])
        assert torch.equal(b.obs[k], torch.full((OBS,), float(i), dtype=torch.float64))
        assert int(b.prim[k]) == i % 5 and float(b.done[k]) == float(i % 2 == 0) and float(b.cost[k]) == i + 1
        assert torch.equal(b.next_obs[k], torch.full((OBS,), float(i + 1), dtype=torch.float64))
    other = ReplayBuffer(OBS, capacity=5)
    other.load_state_tree(buf.state_tree())
    assert other.ordered("reward").tolist() == buf.ordered("reward").tolist()


def test_buffer_empty():
    with pytest.raises(ValueError):
        ReplayBuffer(OBS, 4).sample(2, np.random.default_rng(0))


# ----------------------------------------------------------------------------
# checkpoint


def test_checkpoint_round_trip(tmp_path):
    a = agent(seed=1)
    a.update(batch())
    p = tmp_path / "c.bin"
    save_checkpoint(p, {"agent": a.state_tree(), "x": np.arange(3), "t": (1, "a")}, "hash1", 4, {"seed": 1})
    tree, header = load_checkpoint(p, "hash1")
    assert header["epoch"] == 4 and header["format_version"] == 1 and header["meta"]["seed"] == 1
    assert tree["t"] == (1, "a") and tree["x"].tolist() == [0, 1, 2]
    b = agent(seed=2)
    b.load_state_tree(tree["agent"])
    for pa, pb in zip(a.actor.parameters(), b.actor.parameters()):
        assert torch.equal(pa, pb)
    x1, _ = a.select_action(np.ones(OBS), "explore")
    x2, _ = b.select_action(np.ones(OBS), "explore")
    assert np.array_equal(x1.theta, x2.theta)


def test_checkpoint_refusals(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(p, {"a": np.zeros(2)}, "hash1", 0)
    with pytest.raises(ConfigMismatch):
        load_checkpoint(p, "other")
    load_checkpoint(p, "other", force=True)
    raw = p.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointCorrupt):
        read_header(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-4])
    with pytest.raises(CheckpointCorrupt):
        load_checkpoint(tmp_path / "short.bin")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.bin")


# ----------------------------------------------------------------------------
# evaluation


def test_eval_report_rows_and_absent_forces(tmp_path):
    cfg = make_config("lift")
    cfg.train.hidden = (16, 16)
    a = HybridSAC(envs.obs_dim("lift"), cfg.train, ParamSpace(cfg.controller, cfg.primitives), envs.obs_scale("lift"))
    rep = evaluate(a, cfg, 3, run_seed=0)
    assert len(rep.episodes) == 3 and len(rep.rows()) == 3
    if rep.success_rate == 0:
        assert rep.forces is None
    rep.write(tmp_path)
    summary = (tmp_path / "eval_summary.csv").read_text().splitlines()
    assert summary[0].startswith("episodes,success_rate")
    ok = EvalReport([EpisodeResult(0, True, 2.0, 1, 1, 1, 1, [1, 0])] * 20)
    assert ok.success_rate == 1.0 and ok.forces.mean == 2.0
