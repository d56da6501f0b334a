import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imphrl import kernels as kn
from imphrl.config import SimConfig
from imphrl.primitives import PrimitiveCall, PrimitiveId, execute_primitive
from imphrl.sim import (IntegrationDiverged, ImpedanceGains, ObjectState, SimState, StepTelemetry, WorldParams,
                        actuation_energy, append_trace_csv, contact_forces, step_dynamics)

DT = 0.002


def free_state(pos=(0.0, 0.0, 0.3)):
    return SimState(ee_pos=np.array(pos, float))


def test_fixed_point_in_free_space():
    s = free_state()
    g = ImpedanceGains.critically_damped([100, 100, 100, 10])
    nxt, tel = step_dynamics(s, g, [*s.ee_pos, 0.0], DT)
    assert np.max(np.abs(nxt.ee_pos - s.ee_pos)) <= 1e-12
    assert np.all(nxt.ee_vel == 0)
    assert np.all(tel.f_contact == 0)
    assert np.all(nxt.contact_force == 0)


def test_spring_force_at_offset():
    s = free_state((0.1, 0.0, 0.3))
    g = ImpedanceGains.critically_damped([100, 100, 100, 10])
    _, tel = step_dynamics(s, g, [0.0, 0.0, 0.3, 0.0], DT)
    assert tel.f_cmd[0] == pytest.approx(-10.0, abs=1e-12)


def test_critical_damping_step_response():
    # closed form x(t) = x_f - dx (1 + w t) exp(-w t)
    for k in (10.0, 100.0, 500.0):
        g = ImpedanceGains.critically_damped([k, k, k, 10])
        s = free_state((0.0, 0.0, 0.3))
        step = 0.05
        w = math.sqrt(k)
        n = int(12 / w / DT) + 200
        xs = np.empty(n)
        for i in range(n):
            s, _ = step_dynamics(s, g, [step, 0, 0.3, 0], DT)
            xs[i] = s.ee_pos[0]
        t = np.arange(1, n + 1) * DT
        ref = step - step * (1 + w * t) * np.exp(-w * t)
        assert (xs.max() - step) / step < 0.005
        assert np.max(np.abs(xs - ref)) / step < 0.02


@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.05, 0.05), st.floats(10, 500))
def test_passivity_without_contact(dx, dy, dz, k):
    s = free_state((dx, dy, 0.3 + dz))
    g = ImpedanceGains.critically_damped([k, k, k, 10])
    sp = np.array([0.0, 0.0, 0.3, 0.0])

    def lyap(st_):
        return 0.5 * np.sum(st_.ee_vel ** 2) + 0.5 * k * np.sum((st_.ee_pos - sp[:3]) ** 2)

    prev = lyap(s)
    for _ in range(200):
        s, _ = step_dynamics(s, g, sp, DT)
        cur = lyap(s)
        assert cur <= prev * (1 + 1e-9) + 1e-15
        prev = cur


def test_determinism_bit_identical():
    s = free_state((0.01, -0.02, 0.005))
    g = ImpedanceGains.critically_damped([300, 200, 400, 10])
    a, _ = step_dynamics(s, g, [0.05, 0, -0.01, 0.1], DT)
    b, _ = step_dynamics(s, g, [0.05, 0, -0.01, 0.1], DT)
    assert a.ee_pos.tobytes() == b.ee_pos.tobytes()
    assert a.ee_vel.tobytes() == b.ee_vel.tobytes()


def test_input_state_not_mutated():
    s = free_state((0.01, 0.0, 0.3))
    before = s.ee_pos.copy()
    step_dynamics(s, ImpedanceGains.critically_damped([100] * 4), [0, 0, 0.3, 0], DT)
    assert np.array_equal(s.ee_pos, before)


def test_non_finite_raises():
    s = free_state()
    g = ImpedanceGains(k=np.array([1e300] * 4), d=np.array([1e300] * 4))
    with pytest.raises(IntegrationDiverged):
        for _ in range(5):
            s, _ = step_dynamics(s, g, [1e200, 0, 0, 0], DT)


def test_bad_dt():
    with pytest.raises(ValueError):
        step_dynamics(free_state(), ImpedanceGains.critically_damped([100] * 4), [0, 0, 0.3, 0], 0.0)


def test_workspace_clamp():
    cfg = SimConfig()
    s = free_state((0.29, 0.0, 0.3))
    g = ImpedanceGains.critically_damped([500, 500, 500, 10])
    for _ in range(300):
        s, _ = step_dynamics(s, g, [1.0, 0, 0.3, 0], DT)
        assert s.ee_pos[0] <= cfg.workspace_hi[0] + 1e-12


# ----------------------------------------------------------------------------
# contact


def test_contact_above_table_is_zero():
    f, _ = contact_forces(free_state((0, 0, 0.01 + SimConfig().ee_radius)))
    assert np.all(f == 0)


def test_contact_normal_penalty():
    r = SimConfig().ee_radius
    f, _ = contact_forces(free_state((0, 0, r - 0.001)))
    assert f[2] == pytest.approx(5.0, abs=1e-9)
    assert f[0] == 0 and f[1] == 0


def test_contact_coulomb_cap():
    r = SimConfig().ee_radius
    s = SimState(ee_pos=np.array([0, 0, r - 0.001]), ee_vel=np.array([0.1, 0, 0]),
                 world=WorldParams(friction=0.5))
    f, _ = contact_forces(s, SimConfig(mu=0.5))
    assert f[2] == pytest.approx(5.0, abs=1e-9)
    assert f[0] == pytest.approx(-2.5, abs=1e-9)
    assert f[1] == pytest.approx(0.0, abs=1e-12)


@given(st.floats(-0.005, 0.02), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.3, 0.3),
       st.floats(0.0, 1.0))
def test_contact_complementarity(z, vx, vy, vz, mu):
    r = SimConfig().ee_radius
    s = SimState(ee_pos=np.array([0, 0, r + z]), ee_vel=np.array([vx, vy, vz]), world=WorldParams(friction=mu))
    f, _ = contact_forces(s, SimConfig(mu=mu))
    assert f[2] >= 0
    if z >= 0:
        assert np.all(f == 0)
    assert math.hypot(f[0], f[1]) <= mu * f[2] + 1e-9


# ----------------------------------------------------------------------------
# energy


def test_energy_zero_velocity():
    tel = StepTelemetry(f_cmd=np.array([10.0, 5, 3, 1]), f_contact=np.zeros(3), tracking_error=np.zeros(4),
                        velocity=np.zeros(4), power=0.0, table_normal=0.0)
    assert actuation_energy(tel, 0.05) == (0.0, 0.0)


def test_energy_example():
    tel = StepTelemetry(f_cmd=np.array([10.0, 0, 0, 0]), f_contact=np.zeros(3), tracking_error=np.zeros(4),
                        velocity=np.array([0.2, 0, 0, 0]), power=0.0, table_normal=0.0)
    e, p = actuation_energy(tel, 0.05)
    assert e == pytest.approx(0.1, abs=1e-15)
    assert p == pytest.approx(2.0, abs=1e-15)


def test_reach_energy_resummation():
    s = free_state((0.0, 0.0, 0.2))
    out = execute_primitive(s, PrimitiveCall(PrimitiveId.REACH, pos=[0.1, 0.05, 0.15]))
    per_tick = out.trace[:, kn.TR_POW] * SimConfig().dt
    assert math.isclose(out.energy, float(np.sum(per_tick)), rel_tol=1e-9)


# ----------------------------------------------------------------------------
# grasp and objects


def _cube_state():
    half = np.array([0.025] * 3)
    pos = np.array([0.0, 0.0, 0.025])
    cube = ObjectState(id="cube", pos=pos, yaw=0.0, half_extents=half, keypoint=pos + [0, 0, 0.025])
    return SimState(ee_pos=np.array([0.0, 0.0, 0.06]), objects=[cube])


def test_object_rests_on_table():
    s = _cube_state()
    g = ImpedanceGains.critically_damped([100] * 4)
    for _ in range(500):
        s, _ = step_dynamics(s, g, [*s.ee_pos, 0.0], DT)
    assert s.object("cube").pos[2] - 0.025 > -0.001


def test_held_only_while_closed():
    s = _cube_state()
    out = execute_primitive(s, PrimitiveCall(PrimitiveId.GRIPPER, gripper=True))
    assert out.terminal_state.held_object == "cube" and out.terminal_state.gripper_closed
    out2 = execute_primitive(out.terminal_state, PrimitiveCall(PrimitiveId.GRIPPER, gripper=False))
    assert out2.terminal_state.held_object is None and not out2.terminal_state.gripper_closed


def test_trace_csv(tmp_path):
    out = execute_primitive(free_state(), PrimitiveCall(PrimitiveId.ATOMIC, delta=[0.01, 0, 0]))
    p = tmp_path / "trace.csv"
    append_trace_csv(p, out.trace, "atomic")
    lines = p.read_text().splitlines()
    assert lines[0] == ("time,ee_x,ee_y,ee_z,set_x,set_y,set_z,k_x,k_y,k_z,k_yaw,fc_x,fc_y,fc_z,power,"
                        "primitive_id")
    assert len(lines) == 1 + out.ticks
