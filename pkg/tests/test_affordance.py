from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imphrl.affordance import (AffordanceContext, affordance_coupling, coupling_grid, position_affordance,
                               shaped_reward, stiffness_affordance, write_heatmap_csv)
from imphrl.config import AffordanceConfig, ConfigError, ControllerConfig
from imphrl.primitives import PrimitiveCall, PrimitiveId

KMIN = np.array([10.0, 10.0, 10.0, 1.0])
KMAX = np.array([500.0, 500.0, 500.0, 50.0])
finite = dict(allow_nan=False, allow_infinity=False)


def dec_one_minus_tanh(x: str) -> float:
    """1 - tanh(x) via high-precision exponentials."""
    getcontext().prec = 40
    e2 = (Decimal(2) * Decimal(x)).exp()
    return float(Decimal(1) - (e2 - 1) / (e2 + 1))


def ctx(points, **kw):
    return AffordanceContext(keypoints=np.asarray(points, float), **kw)


def test_inside_radius_is_one():
    c = ctx([[0.1, 0.2, 0.0]], tau=0.02)
    assert position_affordance([0.11, 0.2, 0.0], c) == 1.0


def test_distance_tau_plus_one():
    c = ctx([[0.0, 0.0, 0.0]], tau=0.02)
    v = position_affordance([1.02, 0.0, 0.0], c)
    assert v == pytest.approx(dec_one_minus_tanh("1"), abs=1e-12)
    assert v == pytest.approx(0.23840584, abs=1e-8)


def test_max_over_keypoints():
    c = ctx([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]], tau=0.02)
    assert position_affordance([1.02, 0.0, 0.0], c) == pytest.approx(0.23840584, abs=1e-8)
    c2 = ctx([[1.02 + 1.02, 0, 0], [1.02 + 0.02, 0, 0]], tau=0.02)
    assert position_affordance([1.02, 0.0, 0.0], c2) == 1.0


def test_empty_keypoints():
    with pytest.raises(ConfigError):
        position_affordance([0, 0, 0], ctx(np.zeros((0, 3))))
    fb = ctx(np.zeros((0, 3)), fallback=np.array([0.0, 0.0, 0.0]))
    assert position_affordance([0.01, 0, 0], fb) == 1.0


def test_stiffness_examples():
    c = ctx([[0, 0, 0]])
    assert stiffness_affordance(KMIN, c) == 1.0
    c0 = ctx([[0, 0, 0]], k_floor=0.0, k_scale=1 / 3)
    v = stiffness_affordance(KMAX, c0)
    assert v == pytest.approx(dec_one_minus_tanh("3"), abs=1e-12)
    assert v == pytest.approx(0.00494, abs=1e-5)


def test_coupling_examples():
    c = ctx([[0.0, 0.0, 0.0]], tau=0.02, k_floor=0.0, k_scale=1 / 3)
    at = PrimitiveCall(PrimitiveId.ATOMIC, pos=[9, 9, 9], stiffness=KMAX)
    assert affordance_coupling(at, c) == 1.0
    assert affordance_coupling(PrimitiveCall(PrimitiveId.REACH, pos=[0, 0, 0], stiffness=KMIN), c) == 1.0
    far = PrimitiveCall(PrimitiveId.REACH, pos=[1.02, 0, 0], stiffness=KMAX)
    expect = dec_one_minus_tanh("1") * dec_one_minus_tanh("3")
    assert affordance_coupling(far, c) == pytest.approx(expect, abs=1e-12)
    assert affordance_coupling(far, c) == pytest.approx(0.001178, abs=1e-6)


def test_shaped_reward_examples():
    c = ctx([[0, 0, 0]], lambda_aff=10.0, reward_scale=5.0)
    atomic = PrimitiveCall(PrimitiveId.ATOMIC)
    assert shaped_reward(0.0, atomic, c) == 10.0
    c_far = ctx([[0, 0, 0]], lambda_aff=10.0, reward_scale=5.0, tau=1e-9)
    # very far reach at max stiffness: affordance underflows to 0 within double precision
    far = PrimitiveCall(PrimitiveId.REACH, pos=[1e3, 0, 0], stiffness=KMAX)
    assert shaped_reward(1.0, far, c_far) == pytest.approx(5.0, abs=1e-12)
    assert (AffordanceConfig().reward_scale, AffordanceConfig().lambda_aff) == (5.0, 10.0)


def test_gripper_close_scores_ee_position():
    c = ctx([[0, 0, 0]], ee_pos=np.array([0.0, 0.0, 0.01]))
    close = PrimitiveCall(PrimitiveId.GRIPPER, gripper=True, pos=[5, 5, 5], stiffness=KMIN)
    assert affordance_coupling(close, c) == 1.0
    with pytest.raises(ConfigError):
        affordance_coupling(close, ctx([[0, 0, 0]]))


def test_context_validation():
    for kw in ({"tau": 0.0}, {"k_scale": 0.0}, {"lambda_aff": -1.0}):
        with pytest.raises(ConfigError):
            ctx([[0, 0, 0]], **kw)
    c = AffordanceContext.from_config([[0, 0, 0]], AffordanceConfig(), ControllerConfig())
    assert c.tau == 0.02 and c.k_floor == 0.05 and c.k_scale == pytest.approx(1 / 3)


pt = st.lists(st.floats(-1, 1, **finite), min_size=3, max_size=3)
stiff = st.tuples(*[st.floats(lo, hi, **finite) for lo, hi in zip(KMIN, KMAX)])


@given(pt, st.lists(pt, min_size=1, max_size=4), stiff, st.sampled_from([PrimitiveId.REACH, PrimitiveId.GRASP,
                                                                          PrimitiveId.PUSH]))
def test_range_and_dominance(p, kps, k, pid):
    c = ctx(kps)
    call = PrimitiveCall(pid, pos=p, stiffness=np.array(k))
    a = affordance_coupling(call, c)
    ap, ak = position_affordance(p, c), stiffness_affordance(k, c)
    assert 0.0 <= a <= 1.0 and 0.0 <= ap <= 1.0 and 0.0 <= ak <= 1.0
    assert a <= min(ap, ak) + 1e-15


@given(stiff, st.integers(0, 3), st.floats(0, 490, **finite))
def test_stiffness_monotone(k, axis, bump):
    c = ctx([[0, 0, 0]])
    k = np.array(k)
    k2 = k.copy()
    k2[axis] = min(k2[axis] + bump, KMAX[axis])
    assert stiffness_affordance(k2, c) <= stiffness_affordance(k, c)


@given(pt, stiff)
def test_minimal_stiffness_argmax(p, k):
    c = ctx([[0.05, 0.0, 0.02]])
    best = affordance_coupling(PrimitiveCall(PrimitiveId.REACH, pos=p, stiffness=KMIN), c)
    assert affordance_coupling(PrimitiveCall(PrimitiveId.REACH, pos=p, stiffness=np.array(k)), c) <= best


def test_heatmap(tmp_path):
    c = ctx([[0, 0, 0]])
    grid = coupling_grid([0.0, 0.1], [10.0, 500.0], c)
    assert grid[0, 0] == 1.0 and grid[1, 1] < grid[0, 1] and grid[1, 1] < grid[1, 0]
    p = tmp_path / "h.csv"
    write_heatmap_csv(p, c, n_dist=5, n_stiff=4)
    lines = p.read_text().splitlines()
    assert lines[0] == "distance,stiffness,coupling" and len(lines) == 21
