"""Online objective-space planning during a race.

The ego drives fixed-length segments with one prototype's weights.  At each
decision point it measures the opponent's objective point over the last
segment, scores the four moves with the regret model, moves its own point,
and snaps to the nearest near-optimal prototype.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import N_ACTIONS, Infoset, apply_action, best_action, encode_infoset, snap
from .objectives import (CRASH_RES_PENALTY, ROLLOUT_SECONDS, ObjectivePoint, Scenario, compute_o_agg,
                         compute_o_res, make_race, overtook)
from .planner import PlannerConfig
from .regret_model import LEAKY_SLOPE, MlpParams, forward
from .rollout import R_INVALID, TTC_CAP, TTC_EPS, Agent, Segment, Track, cumulative_progress, ttc_from_scan
from .sim import S_V, S_X, S_Y, S_YAW, SimConfig, _scan
from .track import progress_delta


@dataclass
class OnlineState:
    """Decision-making state of a game-theoretic ego.

    ``operating`` indexes into ``prototypes``; the ego's point history holds
    the snapped prototype coordinates it has operated at.
    """

    model: MlpParams
    prototypes: list
    operating: int
    slope: float = LEAKY_SLOPE
    ego_points: list = field(default_factory=list)
    opp_points: list = field(default_factory=list)
    ego_actions: list = field(default_factory=list)

    def __post_init__(self):
        if not self.ego_points:
            self.ego_points = [self.point]

    @property
    def point(self) -> ObjectivePoint:
        return self.prototypes[self.operating].point

    def infoset(self) -> Infoset:
        return Infoset(tuple((p.agg, p.res) for p in self.ego_points),
                       tuple((p.agg, p.res) for p in self.opp_points), tuple(self.ego_actions))


def replay_ttc(seg: Segment, track: Track, who, sim=SimConfig()) -> np.ndarray:
    """Re-cast car ``who``'s scans from the recorded poses and return pooled iTTC samples."""
    angles = sim.scan.angles()
    veh = sim.vehicle
    other = 1 - who
    ranges = np.empty(angles.size)
    out = np.empty((seg.n_frames, angles.size))
    rect = np.array([0.0, 0.0, 0.0, veh.length, veh.width])
    for f in range(seg.n_frames):
        me, them = seg.states[f, who], seg.states[f, other]
        rect[:3] = them[S_X], them[S_Y], them[S_YAW]
        _scan(me[S_X], me[S_Y], me[S_YAW], *track.grid.kernel_args(), rect, True, angles,
              sim.scan.max_range, ranges)
        ttc_from_scan(ranges, angles, me[S_V], TTC_CAP, TTC_EPS, out[f])
    return out.ravel()


def estimate_opponent(seg: Segment, track: Track, sim=SimConfig(), window=ROLLOUT_SECONDS):
    """Opponent's objective point over an observed segment.

    Uses the recorded poses of both cars: progress along the raceline for the
    aggressiveness coordinate and re-cast opponent scans for restraint.
    Returns ``(point, confident)``; ``confident`` is False for windows
    shorter than ``window`` seconds.
    """
    line = track.raceline
    s = seg.s
    prog_opp = cumulative_progress(s[:, 1], line)
    prog_ego = cumulative_progress(s[:, 0], line)
    lead0 = progress_delta(line, s[0, 0], s[0, 1])
    crashed = seg.ego_opp or seg.invalid
    agg = compute_o_agg(prog_opp[-1], prog_ego[-1], overtook(lead0 + prog_opp - prog_ego), crashed)
    res = compute_o_res(replay_ttc(seg, track, 1, sim)) + (CRASH_RES_PENALTY if crashed else 0.0)
    confident = seg.n_frames * seg.frame_dt >= window - 1e-9
    return ObjectivePoint(agg, res), confident


def predict_regrets(state: OnlineState, opp_estimate: ObjectivePoint | None = None) -> np.ndarray:
    info = state.infoset()
    if opp_estimate is not None:
        info = Infoset(info.ego_points, info.opp_points + ((opp_estimate.agg, opp_estimate.res),), info.ego_actions)
    x = np.stack([encode_infoset(info, a) for a in range(N_ACTIONS)])
    return forward(state.model, x, state.slope)


def choose_action(state: OnlineState, opp_estimate: ObjectivePoint | None = None) -> int:
    """Action with the highest predicted regret; ties go to the lowest id.

    ``opp_estimate`` is appended to the opponent history for this query
    only; pass None when it is already recorded in ``state``.
    """
    return best_action(predict_regrets(state, opp_estimate))


def snap_to_prototype(target: ObjectivePoint, prototypes):
    """``(index, prototype)`` nearest to ``target``."""
    i = snap(target, prototypes)
    return i, prototypes[i]


@dataclass
class RaceTrace:
    """Planner-rate record of a race plus its decisions."""

    frames: list  # (t, ego x, y, yaw, v, opp x, y, yaw, v, ego agg, res, opp agg, res, action)
    decisions: list  # (t, action, prototype id)
    final_lead: float
    ego_crashed: bool
    opp_crashed: bool
    invalid: bool
    operating: list  # prototype id per segment

    TRACE_COLUMNS = ["t", "ego_x", "ego_y", "ego_yaw", "ego_v", "opp_x", "opp_y", "opp_yaw", "opp_v",
                     "ego_agg", "ego_res", "opp_agg", "opp_res", "action"]

    def save(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.TRACE_COLUMNS)
            for row in self.frames:
                w.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])


def run_online(track: Track, scenario: Scenario, ego, opp: Agent, total_moves, segment=ROLLOUT_SECONDS,
               sim=SimConfig(), planner=PlannerConfig(), d_move=1.0) -> RaceTrace:
    """Race ``(total_moves + 1)`` segments.

    ``ego`` is either an :class:`OnlineState` (game-theoretic, moves in O
    after every segment but the last) or a plain :class:`Agent` with fixed
    weights.
    """
    gt = isinstance(ego, OnlineState)
    ego_agent = Agent(ego.prototypes[ego.operating].params) if gt else ego
    race = make_race(track, ego_agent, opp, scenario, sim, planner)
    line = track.raceline
    lead = None
    frames, decisions, operating = [], [], []
    opp_est = ObjectivePoint(math.nan, math.nan)
    pending = -1
    for k in range(total_moves + 1):
        operating.append(ego.operating if gt else -1)
        seg = race.run(segment)
        if lead is None:
            lead = progress_delta(line, seg.s[0, 1], seg.s[0, 0])
        lead += cumulative_progress(seg.s[:, 0], line)[-1] - cumulative_progress(seg.s[:, 1], line)[-1]
        here = ego.point if gt else ObjectivePoint(math.nan, math.nan)
        for f in range(seg.n_frames):
            e, o = seg.states[f]
            frames.append([seg.t0 + f * seg.frame_dt, e[S_X], e[S_Y], e[S_YAW], e[S_V],
                           o[S_X], o[S_Y], o[S_YAW], o[S_V], here.agg, here.res, opp_est.agg, opp_est.res,
                           pending if f == 0 else -1])
        pending = -1
        if k == total_moves:
            e, o = seg.states[-1]
            frames.append([race.t, e[S_X], e[S_Y], e[S_YAW], e[S_V], o[S_X], o[S_Y], o[S_YAW], o[S_V],
                           here.agg, here.res, opp_est.agg, opp_est.res, -1])
            break
        opp_est, _ = estimate_opponent(seg, track, sim, segment)
        if gt:
            ego.opp_points.append(opp_est)
            a = choose_action(ego)
            ego.operating, proto = snap_to_prototype(apply_action(ego.point, a, d_move), ego.prototypes)
            ego.ego_actions.append(a)
            ego.ego_points.append(proto.point)
            race.set_agent(0, Agent(proto.params))
            decisions.append((race.t, a, ego.operating))
            pending = a
    return RaceTrace(frames, decisions, float(lead), bool(race.frozen[0]), bool(race.frozen[1]),
                     bool(race.status[R_INVALID]), operating)
