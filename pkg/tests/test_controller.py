import math

import numpy as np
import pytest

from uavcc.core import Aabb, CovMatrix, UavState, ValidationError, Vec3
from uavcc.controller import (
    ControlPacket,
    EtcTrigger,
    MpcWeights,
    PeriodicTrigger,
    PpcBuffer,
    StmpcTrigger,
    buffer_execute,
    etc_should_trigger,
    mpc_cost,
    solve_mpc,
    stmpc_length,
)
from uavcc.dynamics import MovingObstacle, PlantModel
from uavcc.planner import RefSegment


def model(dt=0.1, u_max=2.0, v_max=20.0, q=None):
    return PlantModel(dt=dt, q=q or CovMatrix.zeros(), u_max=u_max, v_max=v_max)


def constant_velocity_segment(p0, v, dt, horizon):
    pos = np.array([p0 + v * (l + 1) * dt for l in range(horizon)])
    vel = np.tile(v, (horizon, 1))
    return RefSegment(positions=pos, velocities=vel)


# ------------------------------------------------------------------ solve_mpc


def test_mpc_zero_input_on_reference():
    m = model(dt=0.1)
    p0 = np.array([1.0, -2.0, 5.0])
    v = np.array([1.0, 0.5, -0.2])
    ref = constant_velocity_segment(p0, v, m.dt, 8)
    x0 = UavState(Vec3.from_array(p0), Vec3.from_array(v), 0)
    pkt = solve_mpc(m, x0, ref, MpcWeights(horizon_max=8), horizon=8)
    assert max(u.norm() for u in pkt.inputs) <= 1e-9
    assert pkt.issue_slot == 0
    assert pkt.length == 8


def test_mpc_matches_scalar_grid_search():
    # one scalar-axis instance, L=2, dt=1: exhaustive search at 0.001 resolution
    m = model(dt=1.0, u_max=1.0)
    w = MpcWeights(q_pos=1.0, q_vel=0.2, r_u=0.1, horizon_max=2)
    x0 = UavState(Vec3(0.3, 0, 0), Vec3(-0.2, 0, 0), 0)
    ref = RefSegment(
        positions=np.array([[0.5, 0, 0], [0.6, 0, 0]]),
        velocities=np.array([[0.1, 0, 0], [0.1, 0, 0]]),
    )
    pkt = solve_mpc(m, x0, ref, w, horizon=2)

    grid = np.arange(-1.0, 1.0 + 1e-12, 0.001)
    u0, u1 = np.meshgrid(grid, grid, indexing="ij")
    # roll the scalar double integrator on the x axis
    p0, v0 = 0.3, -0.2
    v1 = v0 + 1.0 * u0
    p1 = p0 + v0 + 0.5 * u0
    v2 = v1 + u1
    p2 = p1 + v1 + 0.5 * u1
    cost = (
        w.q_pos * ((p1 - 0.5) ** 2 + (p2 - 0.6) ** 2)
        + w.q_vel * ((v1 - 0.1) ** 2 + (v2 - 0.1) ** 2)
        + w.r_u * (u0**2 + u1**2)
    )
    flat = np.argmin(cost)
    best_u0 = u0.ravel()[flat]
    best_u1 = u1.ravel()[flat]
    assert abs(pkt.inputs[0].x - best_u0) <= 0.001 + 1e-9
    assert abs(pkt.inputs[1].x - best_u1) <= 0.001 + 1e-9
    # off-axis components stay zero
    assert abs(pkt.inputs[0].y) < 1e-12 and abs(pkt.inputs[0].z) < 1e-12


def test_mpc_effort_decreases_with_input_weight():
    rng = np.random.default_rng(42)
    m = model(dt=0.2, u_max=5.0)
    for _ in range(20):
        x0 = UavState(Vec3.from_array(rng.normal(size=3)), Vec3.from_array(rng.normal(size=3)), 0)
        ref = constant_velocity_segment(rng.normal(size=3), rng.normal(size=3) * 0.5, m.dt, 5)
        w1 = MpcWeights(q_pos=1.0, q_vel=0.1, r_u=0.05, horizon_max=5)
        w2 = MpcWeights(q_pos=1.0, q_vel=0.1, r_u=0.10, horizon_max=5)
        e1 = sum(u.dot(u) for u in solve_mpc(m, x0, ref, w1, 5).inputs)
        e2 = sum(u.dot(u) for u in solve_mpc(m, x0, ref, w2, 5).inputs)
        assert e2 <= e1 + 1e-12


def test_mpc_first_order_optimality():
    rng = np.random.default_rng(7)
    m = model(dt=0.25, u_max=50.0)  # large limit: clamping inactive
    w = MpcWeights(q_pos=1.0, q_vel=0.2, r_u=0.1, horizon_max=4)
    for _ in range(10):
        x0 = UavState(Vec3.from_array(rng.normal(size=3)), Vec3.from_array(rng.normal(size=3)), 0)
        ref = constant_velocity_segment(rng.normal(size=3), rng.normal(size=3), m.dt, 4)
        pkt = solve_mpc(m, x0, ref, w, 4)
        u_star = np.array([u.as_array() for u in pkt.inputs])
        base = mpc_cost(m, x0, ref, w, u_star)
        for l in range(4):
            for ax in range(3):
                for sign in (+1.0, -1.0):
                    u_pert = u_star.copy()
                    u_pert[l, ax] += sign * 1e-3
                    assert mpc_cost(m, x0, ref, w, u_pert) >= base - 1e-12


def test_mpc_inputs_clamped():
    m = model(dt=0.5, u_max=0.3)
    ref = constant_velocity_segment(np.array([100.0, 0, 0]), np.zeros(3), m.dt, 3)
    x0 = UavState(Vec3.zero(), Vec3.zero(), 0)
    pkt = solve_mpc(m, x0, ref, MpcWeights(horizon_max=3), 3)
    for u in pkt.inputs:
        assert max(abs(u.x), abs(u.y), abs(u.z)) <= 0.3 + 1e-12


def test_mpc_rejects_short_reference():
    m = model()
    ref = constant_velocity_segment(np.zeros(3), np.zeros(3), m.dt, 2)
    x0 = UavState(Vec3.zero(), Vec3.zero(), 0)
    with pytest.raises(ValidationError):
        solve_mpc(m, x0, ref, MpcWeights(horizon_max=8), 5)


def test_mpc_rejects_horizon_beyond_max():
    m = model()
    ref = constant_velocity_segment(np.zeros(3), np.zeros(3), m.dt, 20)
    x0 = UavState(Vec3.zero(), Vec3.zero(), 0)
    with pytest.raises(ValidationError):
        solve_mpc(m, x0, ref, MpcWeights(horizon_max=8), 9)


# ------------------------------------------------------------------ triggers


def test_etc_boundary_rules():
    a = UavState(Vec3(0, 0, 0), Vec3.zero(), 5)
    predicted_same = UavState(Vec3(0, 0, 0), Vec3.zero(), 5)
    assert not etc_should_trigger(a, predicted_same, 0.5)
    at_threshold = UavState(Vec3(0.5, 0, 0), Vec3.zero(), 5)
    assert not etc_should_trigger(at_threshold, predicted_same, 0.5)
    beyond = UavState(Vec3(0.5 + 1e-6, 0, 0), Vec3.zero(), 5)
    assert etc_should_trigger(beyond, predicted_same, 0.5)


def test_etc_rejects_mismatched_slots():
    a = UavState(Vec3.zero(), Vec3.zero(), 5)
    b = UavState(Vec3.zero(), Vec3.zero(), 6)
    with pytest.raises(ValidationError):
        etc_should_trigger(a, b, 0.5)


def preview_line(n, y=5.0):
    return [Vec3(float(i), y, 5.0) for i in range(1, n + 1)]


def test_stmpc_no_obstacles_full_horizon():
    pol = StmpcTrigger(risk_kappa=3.0, safety_margin_m=0.5, horizon_max=12)
    m = model(q=CovMatrix.isotropic(0.5, 0.5))
    assert stmpc_length(m, CovMatrix.zeros(), preview_line(12), [], [], pol) == 12


def test_stmpc_zero_noise_full_horizon():
    pol = StmpcTrigger(risk_kappa=3.0, safety_margin_m=0.5, horizon_max=12)
    m = model(q=CovMatrix.zeros())
    wall = Aabb(Vec3(0, 10, 0), Vec3(12, 12, 10))
    assert stmpc_length(m, CovMatrix.zeros(), preview_line(12), [wall], [], pol) == 12


def test_stmpc_wall_hand_oracle():
    # y-position variance grows by q=2.7 per step; radius = sqrt(j*q);
    # the wall sits 5 m from the preview line, margin 0.5:
    # sqrt(7*2.7)=4.35 <= 4.5 but sqrt(8*2.7)=4.65 > 4.5, so L = 7
    q = np.zeros((6, 6))
    q[1, 1] = 2.7
    m = model(dt=1.0, q=CovMatrix(q))
    wall = Aabb(Vec3(-100, 10, -100), Vec3(100, 12, 100))
    pol = StmpcTrigger(risk_kappa=1.0, safety_margin_m=0.5, horizon_max=12)
    assert stmpc_length(m, CovMatrix.zeros(), preview_line(12), [wall], [], pol) == 7


def test_stmpc_floor_is_one():
    q = np.zeros((6, 6))
    q[1, 1] = 100.0
    m = model(dt=1.0, q=CovMatrix(q))
    wall = Aabb(Vec3(-100, 6, -100), Vec3(100, 8, 100))
    pol = StmpcTrigger(risk_kappa=3.0, safety_margin_m=0.5, horizon_max=12)
    assert stmpc_length(m, CovMatrix.zeros(), preview_line(12), [wall], [], pol) == 1


def test_stmpc_monotone_in_kappa_and_noise():
    wall = Aabb(Vec3(-100, 9, -100), Vec3(100, 11, 100))
    lengths_kappa = []
    for kappa in (0.5, 1.0, 2.0, 4.0):
        q = np.zeros((6, 6))
        q[1, 1] = 0.8
        pol = StmpcTrigger(risk_kappa=kappa, safety_margin_m=0.5, horizon_max=12)
        lengths_kappa.append(
            stmpc_length(model(dt=1.0, q=CovMatrix(q)), CovMatrix.zeros(), preview_line(12), [wall], [], pol)
        )
    assert all(b <= a for a, b in zip(lengths_kappa, lengths_kappa[1:]))

    lengths_q = []
    for scale in (0.2, 0.8, 3.0):
        q = np.zeros((6, 6))
        q[1, 1] = scale
        pol = StmpcTrigger(risk_kappa=2.0, safety_margin_m=0.5, horizon_max=12)
        lengths_q.append(
            stmpc_length(model(dt=1.0, q=CovMatrix(q)), CovMatrix.zeros(), preview_line(12), [wall], [], pol)
        )
    assert all(b <= a for a, b in zip(lengths_q, lengths_q[1:]))


def test_stmpc_sees_moving_obstacle_at_future_slots():
    # the mover crosses the preview line at slot 6; lengths shorten before then
    mover = MovingObstacle(
        keyframes=(
            (0, Aabb(Vec3(5, 20, 0), Vec3(7, 22, 10))),
            (6, Aabb(Vec3(5, 4, 0), Vec3(7, 6, 10))),
        ),
        inflation_m=0.5,
    )
    m = model(dt=1.0, q=CovMatrix.zeros())
    pol = StmpcTrigger(risk_kappa=1.0, safety_margin_m=0.5, horizon_max=12)
    out = stmpc_length(m, CovMatrix.zeros(), preview_line(12), [], [mover], pol, start_slot=0)
    assert out < 12


def test_stmpc_requires_long_preview():
    pol = StmpcTrigger(horizon_max=12)
    with pytest.raises(ValidationError):
        stmpc_length(model(), CovMatrix.zeros(), preview_line(5), [], [], pol)


# ------------------------------------------------------------------ buffer


def vec_inputs(*xs):
    return tuple(Vec3(x, 0, 0) for x in xs)


def test_buffer_fresh_packet_each_slot_is_plain_mpc():
    buf = PpcBuffer(u_max=2.0)
    for slot in range(5):
        pkt = ControlPacket(issue_slot=slot, inputs=vec_inputs(slot + 0.1, 99, 99))
        rec = buffer_execute(buf, slot, pkt, Vec3.zero())
        assert rec.from_packet and not rec.underrun
        assert rec.accel == Vec3(slot + 0.1, 0, 0)


def test_buffer_rides_out_three_losses():
    buf = PpcBuffer(u_max=2.0)
    pkt = ControlPacket(issue_slot=0, inputs=vec_inputs(0.0, 0.1, 0.2, 0.3, 0.4))
    first = buffer_execute(buf, 0, pkt, Vec3.zero())
    assert first.accel.x == 0.0
    got = [buffer_execute(buf, slot, None, Vec3.zero()).accel.x for slot in (1, 2, 3)]
    assert got == pytest.approx([0.1, 0.2, 0.3])


def test_buffer_underrun_applies_damped_hover():
    buf = PpcBuffer(u_max=2.0, fallback_gain=0.5)
    pkt = ControlPacket(issue_slot=0, inputs=vec_inputs(1.0, 1.0))
    buffer_execute(buf, 0, pkt, Vec3.zero())
    buffer_execute(buf, 1, None, Vec3.zero())
    rec = buffer_execute(buf, 2, None, Vec3(1.0, -6.0, 0.2))
    assert rec.underrun and not rec.from_packet
    assert rec.accel == Vec3(-0.5, 2.0, -0.1)  # -0.5*v clamped to u_max


def test_buffer_recovers_after_underrun():
    buf = PpcBuffer(u_max=2.0)
    buffer_execute(buf, 0, ControlPacket(0, vec_inputs(0.5)), Vec3.zero())
    assert buffer_execute(buf, 1, None, Vec3.zero()).underrun
    rec = buffer_execute(buf, 2, ControlPacket(2, vec_inputs(0.7)), Vec3.zero())
    assert not rec.underrun and rec.accel.x == 0.7


def test_buffer_slot_monotonicity_enforced():
    buf = PpcBuffer(u_max=2.0)
    buffer_execute(buf, 3, ControlPacket(3, vec_inputs(0.1, 0.2)), Vec3.zero())
    with pytest.raises(ValidationError):
        buffer_execute(buf, 3, None, Vec3.zero())


def test_packet_validation():
    with pytest.raises(ValidationError):
        ControlPacket(issue_slot=0, inputs=())
    with pytest.raises(ValidationError):
        MpcWeights(q_pos=0.0)
    with pytest.raises(ValidationError):
        PeriodicTrigger(period=0)
    with pytest.raises(ValidationError):
        EtcTrigger(threshold_m=0.0)
    with pytest.raises(ValidationError):
        StmpcTrigger(risk_kappa=0.0)
