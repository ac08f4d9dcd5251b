import numpy as np
import pytest

from gtrace.objectives import compute_o_res, make_race, make_scenario, make_scenario_set
from gtrace.planner import AgentParams
from gtrace.rollout import TTC_CAP, TTC_EPS, Agent, Race, cumulative_progress, ttc_from_scan
from gtrace.sim import ScanConfig, VehicleState, ray_march
from gtrace.track import OccupancyGrid, Raceline

RES = 0.05


def wall_grid(wall_x, size=30.0):
    n = int(size / RES)
    occ = np.zeros((n, n), dtype=bool)
    col = int(round((wall_x + size / 2) / RES))
    occ[:, col:col + 2] = True
    return OccupancyGrid.from_occupancy(occ, RES, (-size / 2, -size / 2, 0.0))


@pytest.mark.parametrize("d,v", [(3.0, 1.0), (6.0, 4.0), (2.0, 2.5)])
def test_head_on_wall_ttc(d, v):
    cfg = ScanConfig(n_beams=109)
    scan = ray_march((0.0, 0.0, 0.0), wall_grid(d), None, cfg)
    out = np.empty(cfg.n_beams)
    ttc_from_scan(scan.ranges, scan.angles, v, TTC_CAP, TTC_EPS, out)
    fwd = out[np.argmin(np.abs(scan.angles))]
    assert abs(fwd - d / v) / (d / v) < 0.02


def test_ttc_rules():
    angles = np.array([0.0, np.pi / 2, np.pi, np.pi / 3])
    ranges = np.array([2.0, 1.0, 1.0, 100.0])
    out = np.empty(4)
    ttc_from_scan(ranges, angles, 2.0, TTC_CAP, TTC_EPS, out)
    assert out[0] == 1.0
    assert out[1] == TTC_CAP  # perpendicular beam: no closing speed
    assert out[2] == TTC_CAP  # backward beam
    assert out[3] == TTC_CAP  # capped
    ttc_from_scan(ranges, angles, 0.0, TTC_CAP, TTC_EPS, out)
    assert np.all(out == TTC_CAP)


def test_fully_safe_episode_has_zero_res():
    # a stationary car never closes on anything
    out = np.empty((80, 108))
    angles = ScanConfig().angles()
    for f in range(80):
        ttc_from_scan(np.full(108, 1.0), angles, 0.0, TTC_CAP, TTC_EPS, out[f])
    assert compute_o_res(out.ravel()) == 0.0


def test_cumulative_progress_wraps():
    t = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    r = 10 / (2 * np.pi)
    line = Raceline.from_arrays(r * np.cos(t), r * np.sin(t), t, np.ones(100), True)
    L = line.total_length
    s = np.array([8.0, 9.5, 0.5, 2.0, 9.0])
    assert np.allclose(cumulative_progress(s, line), [0.0, 1.5, L - 7.5, L - 6.0, 1.0])


def test_segment_shapes_and_duration_errors(track_a):
    scs, opps = make_scenario_set(track_a, 1, seed=0)
    race = make_race(track_a, Agent(opps[0]), Agent(opps[0]), scs[0])
    seg = race.run(1.0)
    assert seg.n_frames == 10
    assert seg.states.shape == (11, 2, 7) and seg.s.shape == (11, 2) and seg.ttc.shape == (10, 2, 108)
    assert seg.t0 == 0.0 and race.t == pytest.approx(1.0)
    with pytest.raises(ValueError):
        race.run(0.05)
    with pytest.raises(ValueError):
        race.run(0.0)


def test_split_segments_equal_one_long_run(track_a):
    scs, opps = make_scenario_set(track_a, 1, seed=1)
    p = AgentParams.random(np.random.default_rng(0))
    whole = make_race(track_a, Agent(p), Agent(opps[0]), scs[0]).run(4.0)
    race = make_race(track_a, Agent(p), Agent(opps[0]), scs[0])
    a = race.run(2.0)
    b = race.copy().run(2.0)
    c = race.run(2.0)
    assert np.array_equal(b.states, c.states)
    assert np.array_equal(np.concatenate([a.states[:-1], c.states]), whole.states)
    assert np.array_equal(np.concatenate([a.ttc, c.ttc]), whole.ttc)


def test_copy_is_independent(track_a):
    scs, opps = make_scenario_set(track_a, 1, seed=2)
    race = make_race(track_a, Agent(opps[0]), Agent(opps[0]), scs[0])
    race.run(1.0)
    snap = race.copy()
    before = snap.states.copy()
    race.run(1.0)
    assert np.array_equal(snap.states, before)
    assert snap.t == pytest.approx(1.0)


def test_set_agent_changes_behaviour(track_a):
    scs, opps = make_scenario_set(track_a, 1, seed=3)
    slow = AgentParams(0.6, *[5.0] * 7)
    fast = AgentParams(1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 10.0, 1.0)
    race = make_race(track_a, Agent(slow), Agent(opps[0]), scs[0])
    race.run(1.0)
    other = race.copy()
    other.set_agent(0, Agent(fast))
    s_slow = cumulative_progress(race.run(3.0).s[:, 0], track_a.raceline)[-1]
    s_fast = cumulative_progress(other.run(3.0).s[:, 0], track_a.raceline)[-1]
    assert s_fast > s_slow


def test_lane_switcher_stays_on_track(track_a):
    sc = make_scenario(track_a, 10.0, 3.0, 0.0, 0.0)
    race = make_race(track_a, Agent.lane_switcher(), Agent(AgentParams(0.6, *[5.0] * 7)), sc)
    seg = race.run(8.0)
    assert not seg.frozen[0]
    assert cumulative_progress(seg.s[:, 0], track_a.raceline)[-1] > 5.0


def test_race_is_deterministic(track_a):
    scs, opps = make_scenario_set(track_a, 1, seed=4)
    p = AgentParams.random(np.random.default_rng(9))
    a = make_race(track_a, Agent(p), Agent(opps[0]), scs[0]).run(3.0)
    b = Race(track_a, scs[0].ego_state(), scs[0].opp_state(), Agent(p), Agent(opps[0])).run(3.0)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.ttc, b.ttc)


def test_rollout_collision_freezes_car(track_a):
    # opponent parked 0.12 m ahead; braking distance at 4 m/s is about 0.84 m
    line = track_a.raceline
    x, y, th, _ = line.pose_at(5.0)
    x2, y2, th2, _ = line.pose_at(5.7)
    ego = VehicleState(x=x, y=y, yaw=th, v=4.0)
    opp = VehicleState(x=x2, y=y2, yaw=th2)
    reckless = AgentParams(1.0, 1.0, 1.0, 1.0, 10.0, 1.0, 10.0, 1.0)
    race = Race(track_a, ego, opp, Agent(reckless), Agent(AgentParams(0.6, *[1.0] * 7)))
    seg = race.run(3.0)
    assert seg.ego_opp
    assert seg.frozen[0] and seg.frozen[1]
    assert race.states[0, 3] == 0.0 and race.states[1, 3] == 0.0
