import numpy as np
import pytest

from gtrace.evo import Explored
from gtrace.game import encode_infoset
from gtrace.objectives import ObjectivePoint, make_race, make_scenario, segment_result
from gtrace.pipeline import (OnlineState, choose_action, estimate_opponent, predict_regrets, replay_ttc,
                             run_online, snap_to_prototype)
from gtrace.planner import AgentParams
from gtrace.regret_model import MlpParams
from gtrace.rollout import Agent, cumulative_progress
from gtrace.track import progress_delta


def candidate_model(scores):
    """Linear model whose output is ``scores[a]`` for candidate ``a``."""
    W1 = np.zeros((4, 40))
    W1[np.arange(4), 36 + np.arange(4)] = 1.0
    return MlpParams(W1, np.zeros(4), np.array([scores], dtype=float), np.zeros(1))


def protos():
    rng = np.random.default_rng(0)
    pts = [(0.0, 10.0), (1.0, 10.0), (-1.0, 10.0), (0.0, 11.0), (0.0, 9.0)]
    return [Explored(AgentParams.random(rng), ObjectivePoint(*p), 0, i) for i, p in enumerate(pts)]


def test_choose_action_follows_model():
    st = OnlineState(candidate_model([0.1, -1.0, 3.0, 0.5]), protos(), 0)
    assert np.allclose(predict_regrets(st), [0.1, -1.0, 3.0, 0.5])
    assert choose_action(st) == 2
    st = OnlineState(candidate_model([1.0, 1.0, -2.0, 0.0]), protos(), 0)
    assert choose_action(st) == 0


def test_infoset_and_query_estimate():
    st = OnlineState(candidate_model([0, 0, 0, 1]), protos(), 3)
    assert st.ego_points == [ObjectivePoint(0.0, 11.0)]
    info = st.infoset()
    assert info.ego_points == ((0.0, 11.0),) and info.opp_points == () and info.ego_actions == ()
    est = ObjectivePoint(-2.0, 7.0)
    model = MlpParams.init(np.random.default_rng(1), 40, 8)
    st = OnlineState(model, protos(), 3)
    with_est = predict_regrets(st, est)
    st.opp_points.append(est)
    assert np.array_equal(with_est, predict_regrets(st))
    x = encode_infoset(st.infoset(), 1)
    assert x[8] == -2.0 and x[9] == 7.0


def test_snap_to_prototype():
    i, p = snap_to_prototype(ObjectivePoint(0.9, 10.1), protos())
    assert i == 1 and p.point == ObjectivePoint(1.0, 10.0)


def two_car_segment(track, seconds=3.0):
    rng = np.random.default_rng(3)
    sc = make_scenario(track, 20.0, 1.5, 0.2, -0.2)
    race = make_race(track, Agent(AgentParams.random(rng)), Agent(AgentParams.random(rng)), sc)
    return race.run(seconds)


def test_replayed_scans_match_recorded(track_a):
    seg = two_car_segment(track_a)
    assert np.array_equal(replay_ttc(seg, track_a, 1), seg.ttc[:, 1, :].ravel())
    assert np.array_equal(replay_ttc(seg, track_a, 0), seg.ttc[:, 0, :].ravel())


def test_opponent_estimate_equals_its_own_objectives(track_a):
    seg = two_car_segment(track_a)
    est, confident = estimate_opponent(seg, track_a, window=3.0)
    assert confident
    assert est == segment_result(seg, track_a.raceline, who=1).objectives
    _, confident = estimate_opponent(seg, track_a, window=8.0)
    assert not confident


def test_fixed_ego_matches_plain_race(track_a):
    rng = np.random.default_rng(5)
    p, q = AgentParams.random(rng), AgentParams.random(rng)
    sc = make_scenario(track_a, 30.0, -1.0, 0.2, -0.2)
    trace = run_online(track_a, sc, Agent(p), Agent(q), 2, segment=1.5)
    seg = make_race(track_a, Agent(p), Agent(q), sc).run(4.5)
    line = track_a.raceline
    lead = (progress_delta(line, seg.s[0, 1], seg.s[0, 0]) + cumulative_progress(seg.s[:, 0], line)[-1]
            - cumulative_progress(seg.s[:, 1], line)[-1])
    assert trace.final_lead == pytest.approx(lead, abs=1e-9)
    assert trace.decisions == [] and trace.operating == [-1, -1, -1]
    assert len(trace.frames) == 45 + 1


def test_game_theoretic_ego_moves_and_is_deterministic(track_a, tmp_path):
    sc = make_scenario(track_a, 30.0, -1.0, 0.2, -0.2)
    opp = Agent(AgentParams.random(np.random.default_rng(8)))
    traces = []
    for _ in range(2):
        st = OnlineState(candidate_model([0, 0, 0, 1]), protos(), 0)  # always lower restraint
        traces.append(run_online(track_a, sc, st, opp, 2, segment=1.5))
    t = traces[0]
    assert [d[1] for d in t.decisions] == [3, 3]
    assert t.operating == [0, 4, 4]
    assert [d[2] for d in t.decisions] == [4, 4]
    actions = [f[-1] for f in t.frames if f[-1] >= 0]
    assert actions == [3, 3]
    t.save(tmp_path / "a.csv")
    traces[1].save(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_more_aggressive_stub_and_decision_cadence(track_a):
    rng = np.random.default_rng(11)
    pts = np.column_stack([np.linspace(-6, 2, 9), rng.uniform(9.8, 10.2, 9)])
    prototypes = [Explored(AgentParams.random(rng), ObjectivePoint(*p), 0, i) for i, p in enumerate(pts)]
    sc = make_scenario(track_a, 30.0, -1.0, 0.2, -0.2)
    st = OnlineState(candidate_model([0, 1, 0, 0]), prototypes, 8)  # always "increase aggressiveness"
    trace = run_online(track_a, sc, st, Agent(AgentParams.random(rng)), 3)
    aggs = [prototypes[i].point.agg for i in trace.operating]
    assert all(b <= a for a, b in zip(aggs, aggs[1:])) and aggs[-1] < aggs[0]
    assert all(0 <= i < len(prototypes) for i in trace.operating)
    assert [d[0] for d in trace.decisions] == pytest.approx([8.0, 16.0, 24.0], abs=1e-9)
    marked = [k for k, f in enumerate(trace.frames) if f[-1] >= 0]
    assert marked == [80, 160, 240]


def test_zero_moves_is_a_plain_rollout(track_a):
    rng = np.random.default_rng(12)
    sc = make_scenario(track_a, 30.0, -1.0, 0.2, -0.2)
    st = OnlineState(candidate_model([1, 0, 0, 0]), protos(), 2)
    p = st.prototypes[2].params
    q = AgentParams.random(rng)
    trace = run_online(track_a, sc, st, Agent(q), 0)
    fixed = run_online(track_a, sc, Agent(p), Agent(q), 0)
    assert trace.decisions == [] and trace.operating == [2]
    assert trace.final_lead == fixed.final_lead
    assert [f[:9] for f in trace.frames] == [f[:9] for f in fixed.frames]
