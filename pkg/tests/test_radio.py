import math

import numpy as np
import pytest

from uavcc.core import Aabb, Rng, ValidationError, Vec3
from uavcc.radio import (
    SPEED_OF_LIGHT,
    BaseStation,
    Environment,
    LinkModel,
    OutOfDomainError,
    PathLossModel,
    RadioMap,
    build_radio_map,
    handover_count,
    packet_outcome,
    packet_outcome_batch,
    received_power_dbm,
    sinr_at,
)


def open_env(stations, bounds=None, buildings=(), noise=-96.0, res=1.0, pl=None):
    return Environment(
        bounds=bounds or Aabb(Vec3(0, 0, 0), Vec3(20, 20, 20)),
        buildings=tuple(buildings),
        base_stations=tuple(stations),
        noise_power_dbm=noise,
        grid_resolution_m=res,
        pathloss=pl or PathLossModel(),
    )


def test_received_power_reference_distance():
    # receiver 1 m below the antenna, tilt 90 deg puts it on boresight
    bs = BaseStation(id=0, position=Vec3(10, 10, 11), tx_power_dbm=30, tilt_deg=90)
    env = open_env([bs])
    got = received_power_dbm(bs, Vec3(10, 10, 10), env)
    fspl_1m = 20 * math.log10(4 * math.pi * 2.0e9 / SPEED_OF_LIGHT)
    assert got == pytest.approx(30.0 - fspl_1m, abs=1e-9)


def test_antenna_gain_minus_12db_at_one_beamwidth():
    bs = BaseStation(id=0, position=Vec3(0, 10, 15), tx_power_dbm=30, tilt_deg=0.0,
                     beamwidth_3db_deg=10.0)
    env = open_env([bs])
    d = 8.0
    boresight = Vec3(d, 10, 15)
    off = Vec3(d * math.cos(math.radians(10)), 10, 15 - d * math.sin(math.radians(10)))
    p_bore = received_power_dbm(bs, boresight, env)
    p_off = received_power_dbm(bs, off, env)
    assert p_bore - p_off == pytest.approx(12.0, abs=1e-9)


def test_gain_floors_at_max_attenuation():
    bs = BaseStation(id=0, position=Vec3(0, 10, 15), tilt_deg=10, beamwidth_3db_deg=5,
                     max_attenuation_db=30.0)
    env = open_env([bs])
    # straight above the antenna: far off the lobe, floor applies
    p_above = received_power_dbm(bs, Vec3(0.0, 10, 19), env)
    d = 4.0
    p_bore = received_power_dbm(
        bs,
        Vec3(d * math.cos(math.radians(10)), 10, 15 - d * math.sin(math.radians(10))),
        env,
    )
    assert p_bore - p_above == pytest.approx(30.0, abs=1e-9)


def test_nlos_penalty_matches_exponent_gap():
    pl = PathLossModel(n_los=2.2, n_nlos=3.5)
    bs = BaseStation(id=0, position=Vec3(0, 50, 50), tilt_deg=0)
    wall = Aabb(Vec3(40, 45, 40), Vec3(42, 55, 60))
    env_los = open_env([bs], bounds=Aabb(Vec3(0, 0, 0), Vec3(120, 100, 100)), pl=pl)
    env_nlos = open_env(
        [bs], bounds=Aabb(Vec3(0, 0, 0), Vec3(120, 100, 100)), buildings=[wall], pl=pl
    )
    p = Vec3(100, 50, 50)
    gap = received_power_dbm(bs, p, env_los) - received_power_dbm(bs, p, env_nlos)
    assert gap == pytest.approx(10 * (3.5 - 2.2) * math.log10(100), abs=1e-9)


def test_distance_clamped_to_reference():
    bs = BaseStation(id=0, position=Vec3(10, 10, 11), tilt_deg=90)
    env = open_env([bs])
    at_1m = received_power_dbm(bs, Vec3(10, 10, 10), env)
    at_03m = received_power_dbm(bs, Vec3(10, 10, 10.7), env)
    assert at_03m == pytest.approx(at_1m)


def test_receiver_inside_building_rejected():
    bs = BaseStation(id=0, position=Vec3(0, 0, 15))
    bld = Aabb(Vec3(4, 4, 0), Vec3(6, 6, 10))
    env = open_env([bs], buildings=[bld])
    with pytest.raises(ValidationError):
        received_power_dbm(bs, Vec3(5, 5, 5), env)


def test_build_map_single_station_sinr_is_snr():
    bs = BaseStation(id=0, position=Vec3(2, 2, 4), tilt_deg=45)
    env = open_env([bs], bounds=Aabb(Vec3(0, 0, 0), Vec3(4, 4, 4)), noise=-96.0, res=4.0)
    m = build_radio_map(env, gamma_th_db=0.0)
    assert m.shape == (1, 1, 1)
    p = m.cell_center(0, 0, 0)
    expected = received_power_dbm(bs, p, env) - (-96.0)
    assert m.sinr_db[0, 0, 0] == pytest.approx(expected, abs=1e-9)
    assert m.serving_bs[0, 0, 0] == 0


def test_build_map_two_equal_stations_zero_db():
    # both stations see the cell centers symmetrically; negligible noise
    b0 = BaseStation(id=0, position=Vec3(0, 5, 8), tilt_deg=20)
    b1 = BaseStation(id=1, position=Vec3(10, 5, 8), tilt_deg=20)
    env = open_env(
        [b0, b1], bounds=Aabb(Vec3(0, 0, 0), Vec3(10, 10, 10)), noise=-200.0, res=10.0
    )
    m = build_radio_map(env, gamma_th_db=0.0)
    assert -0.01 <= m.sinr_db[0, 0, 0] <= 0.01
    assert m.serving_bs[0, 0, 0] == 0  # tie broken by lowest id


def test_build_map_building_cells_are_sentinel():
    bs = BaseStation(id=0, position=Vec3(1, 1, 9), tilt_deg=30)
    bld = Aabb(Vec3(4, 4, 0), Vec3(8, 8, 10))
    env = open_env(
        [bs], bounds=Aabb(Vec3(0, 0, 0), Vec3(10, 10, 10)), buildings=[bld], res=2.0
    )
    m = build_radio_map(env, gamma_th_db=0.0)
    assert m.in_building[3, 3, 2]
    assert m.sinr_db[3, 3, 2] == float("-inf")
    assert m.serving_bs[3, 3, 2] == -1
    assert not m.feasible()[3, 3, 2]


def test_build_map_deterministic():
    bs = [
        BaseStation(id=0, position=Vec3(1, 1, 9), tilt_deg=30),
        BaseStation(id=1, position=Vec3(9, 9, 9), tilt_deg=30),
    ]
    env = open_env(bs, bounds=Aabb(Vec3(0, 0, 0), Vec3(10, 10, 10)), res=2.0)
    m1 = build_radio_map(env, 0.0)
    m2 = build_radio_map(env, 0.0)
    assert np.array_equal(m1.sinr_db, m2.sinr_db)
    assert np.array_equal(m1.serving_bs, m2.serving_bs)
    assert np.array_equal(m1.in_building, m2.in_building)


def test_sinr_never_exceeds_serving_snr():
    bs = [
        BaseStation(id=0, position=Vec3(2, 2, 9), tilt_deg=30),
        BaseStation(id=1, position=Vec3(14, 14, 9), tilt_deg=30),
        BaseStation(id=2, position=Vec3(2, 14, 9), tilt_deg=30),
    ]
    env = open_env(bs, bounds=Aabb(Vec3(0, 0, 0), Vec3(16, 16, 12)), res=4.0)
    m = build_radio_map(env, 0.0)
    stations = {b.id: b for b in bs}
    for ix in range(m.shape[0]):
        for iy in range(m.shape[1]):
            for iz in range(m.shape[2]):
                c = m.cell_center(ix, iy, iz)
                sid = int(m.serving_bs[ix, iy, iz])
                snr = received_power_dbm(stations[sid], c, env) - env.noise_power_dbm
                assert m.sinr_db[ix, iy, iz] <= snr + 1e-9


def test_adding_station_only_helps_new_server():
    base = [
        BaseStation(id=0, position=Vec3(2, 2, 9), tilt_deg=30),
        BaseStation(id=1, position=Vec3(14, 2, 9), tilt_deg=30),
    ]
    extra = BaseStation(id=2, position=Vec3(8, 14, 9), tilt_deg=30)
    bounds = Aabb(Vec3(0, 0, 0), Vec3(16, 16, 12))
    m_before = build_radio_map(open_env(base, bounds=bounds, res=4.0), 0.0)
    m_after = build_radio_map(open_env(base + [extra], bounds=bounds, res=4.0), 0.0)
    improved = m_after.sinr_db > m_before.sinr_db + 1e-12
    new_server = m_after.serving_bs == 2
    assert not np.any(improved & ~new_server)


def synthetic_map(values, res=1.0, gamma=0.0, in_building=None):
    values = np.asarray(values, dtype=float)
    if in_building is None:
        in_building = np.zeros_like(values, dtype=bool)
    serving = np.zeros_like(values, dtype=np.int64)
    nx, ny, nz = values.shape
    bounds = Aabb(Vec3(0, 0, 0), Vec3(nx * res, ny * res, nz * res))
    return RadioMap(Vec3(0, 0, 0), res, values.copy(), serving, in_building.copy(), gamma, bounds)


def test_sinr_at_cell_center_identity():
    vals = np.arange(27, dtype=float).reshape(3, 3, 3)
    m = synthetic_map(vals)
    assert sinr_at(m, m.cell_center(1, 2, 0)) == pytest.approx(vals[1, 2, 0])


def test_sinr_at_midpoint_between_two_cells():
    vals = np.full((2, 1, 1), 10.0)
    vals[1, 0, 0] = 20.0
    m = synthetic_map(vals)
    assert sinr_at(m, Vec3(1.0, 0.5, 0.5)) == pytest.approx(15.0)


def test_sinr_at_matches_trilinear_oracle():
    rng = np.random.default_rng(3)
    vals = np.zeros((4, 4, 4))
    for i in range(4):
        for j in range(4):
            for k in range(4):
                vals[i, j, k] = 2.0 * i - 1.5 * j + 0.7 * k + rng.normal(scale=0.1)
    m = synthetic_map(vals)

    def oracle(p):
        g = np.array([p.x - 0.5, p.y - 0.5, p.z - 0.5])
        i0 = np.clip(np.floor(g).astype(int), 0, 2)
        f = g - i0
        out = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1])
                         * (f[2] if dz else 1 - f[2]))
                    out += w * vals[i0[0] + dx, i0[1] + dy, i0[2] + dz]
        return out

    for _ in range(50):
        p = Vec3(*(0.5 + 3.0 * rng.random(3)))
        assert sinr_at(m, p) == pytest.approx(oracle(p), abs=1e-9)


def test_sinr_at_building_corner_falls_back_to_nearest_free():
    vals = np.full((3, 1, 1), 5.0)
    vals[1, 0, 0] = float("-inf")
    blocked = np.zeros((3, 1, 1), dtype=bool)
    blocked[1, 0, 0] = True
    vals[0, 0, 0] = 7.0
    m = synthetic_map(vals, in_building=blocked)
    # query point in cell 0 but between centers 0 and 1: corner 1 is a building
    assert sinr_at(m, Vec3(0.9, 0.5, 0.5)) == pytest.approx(7.0)


def test_sinr_at_outside_domain_raises():
    m = synthetic_map(np.zeros((2, 2, 2)))
    with pytest.raises(OutOfDomainError):
        sinr_at(m, Vec3(5, 0.5, 0.5))


def test_packet_outcome_midpoint_probability():
    link = LinkModel(gamma_th_db=3.0, steepness_per_db=0.5)
    assert link.success_probability(3.0) == pytest.approx(0.5)
    n = 40000
    hits = int(packet_outcome_batch(link, 3.0, Rng(11, 0), n).sum())
    assert hits / n == pytest.approx(0.5, abs=0.01)


def test_packet_outcome_saturates():
    link = LinkModel(gamma_th_db=0.0, steepness_per_db=0.5)
    assert link.success_probability(60.0) > 1 - 1e-9
    rng = Rng(5, 1)
    assert all(packet_outcome(link, 60.0, rng) for _ in range(200))


def test_packet_outcome_consumes_draw_at_extremes():
    link = LinkModel(gamma_th_db=0.0, steepness_per_db=0.5)
    a = Rng(9, 2)
    b = Rng(9, 2)
    packet_outcome(link, 1e6, a)   # certain success still consumes one uniform
    b.uniform()
    assert a.uniform() == b.uniform()


def test_success_probability_strictly_increasing():
    link = LinkModel(gamma_th_db=0.0, steepness_per_db=0.5)
    xs = np.linspace(-30, 30, 121)
    ps = [link.success_probability(x) for x in xs]
    assert all(b > a for a, b in zip(ps, ps[1:]))


def test_scalar_and_batch_draws_agree():
    link = LinkModel(gamma_th_db=0.0, steepness_per_db=0.5)
    xs = Rng(21, 7)
    singles = [packet_outcome(link, 2.0, xs) for _ in range(500)]
    batch = packet_outcome_batch(link, 2.0, Rng(21, 7), 500)
    assert np.array_equal(np.array(singles), batch)


def two_station_map(res=1.0):
    """Left half served by station 0, right half by station 1."""
    vals = np.full((10, 4, 1), 10.0)
    serving = np.zeros((10, 4, 1), dtype=np.int64)
    serving[5:, :, :] = 1
    blocked = np.zeros((10, 4, 1), dtype=bool)
    bounds = Aabb(Vec3(0, 0, 0), Vec3(10 * res, 4 * res, res))
    return RadioMap(Vec3(0, 0, 0), res, vals, serving, blocked, 0.0, bounds)


def test_handover_count_within_one_cell():
    m = two_station_map()
    assert handover_count(m, [Vec3(1.1, 1.1, 0.5), Vec3(1.4, 1.2, 0.5)]) == 0


def test_handover_count_single_crossing():
    m = two_station_map()
    assert handover_count(m, [Vec3(1, 2, 0.5), Vec3(9, 2, 0.5)]) == 1


def test_handover_count_zigzag():
    m = two_station_map()
    path = [
        Vec3(3, 2, 0.5), Vec3(7, 2, 0.5), Vec3(3, 2.2, 0.5),
        Vec3(7, 2.2, 0.5), Vec3(3, 2.4, 0.5), Vec3(7, 2.4, 0.5),
    ]
    assert handover_count(m, path) == 5


def test_handover_count_empty_path():
    m = two_station_map()
    assert handover_count(m, []) == 0
    assert handover_count(m, [Vec3(1, 1, 0.5)]) == 0


def test_link_model_validation():
    with pytest.raises(ValidationError):
        LinkModel(steepness_per_db=0.0)
    with pytest.raises(ValidationError):
        LinkModel(slot_duration_s=1.5)
    with pytest.raises(ValidationError):
        LinkModel(energy_per_packet_j=0.0)


def test_environment_validation():
    with pytest.raises(ValidationError):
        open_env([])  # no stations
    bs = BaseStation(id=0, position=Vec3(0, 0, 15))
    with pytest.raises(ValidationError):
        open_env([bs], buildings=[Aabb(Vec3(15, 15, 0), Vec3(25, 18, 5))])  # outside bounds
