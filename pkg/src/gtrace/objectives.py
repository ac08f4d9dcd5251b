"""Objective-space coordinates of a rollout.

An agent is summarized by two numbers measured over a short race against an
opponent:

* ``agg``: negative progress advantage over the opponent (lower is more
  aggressive), nudged by 10% of its magnitude toward better when the ego
  overtakes and toward worse when it crashes into the opponent.
* ``res``: ``a * (b - mean iTTC)`` over every LiDAR beam of every planner
  frame, with each iTTC capped at ``b``.  A crash into the opponent adds 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .planner import WEIGHT_NAMES, AgentParams, PlannerConfig
from .rollout import TTC_CAP, Agent, Race, Segment, Track, cumulative_progress
from .sim import SimConfig, VehicleState, _collision_flags
from .track import progress_delta, project

RES_SCALE = 10.0
RES_OFFSET = TTC_CAP
EVENT_FRACTION = 0.1
CRASH_RES_PENALTY = 1.0
ROLLOUT_SECONDS = 8.0

GAP_RANGE = (0.5, 3.0)
LATERAL_RANGE = 0.6
START_SPEED_FRACTION = 0.5
MAX_SPAWN_TRIES = 1000


@dataclass(frozen=True)
class ObjectivePoint:
    agg: float
    res: float

    def as_array(self) -> np.ndarray:
        return np.array([self.agg, self.res])

    def distance(self, other: "ObjectivePoint") -> float:
        return math.hypot(self.agg - other.agg, self.res - other.res)


@dataclass(frozen=True)
class RolloutResult:
    s_ego_start: float
    s_ego_end: float
    s_opp_start: float
    s_opp_end: float
    progress_ego: float
    progress_opp: float
    overtake: bool
    ego_crashed_into_opp: bool
    any_collision: bool
    invalid: bool
    ttc_samples: np.ndarray
    objectives: ObjectivePoint
    lead_start: float

    @property
    def final_lead(self) -> float:
        """Signed curvilinear lead of the ego at the end (positive when ahead)."""
        return self.lead_start + self.progress_ego - self.progress_opp


@dataclass(frozen=True)
class Scenario:
    """Spawn poses plus the relative placement they were drawn from.

    Poses are ``(x, y, yaw, v)``.  ``gap`` is the signed arc-length lead of
    the ego over the opponent at spawn; ``ego_d``/``opp_d`` the lateral
    offsets from the raceline.
    """

    map_name: str
    ego_pose: tuple
    opp_pose: tuple
    station: float = 0.0
    gap: float = 0.0
    ego_d: float = 0.0
    opp_d: float = 0.0

    def ego_state(self) -> VehicleState:
        x, y, yaw, v = self.ego_pose
        return VehicleState(x=x, y=y, yaw=yaw, v=v)

    def opp_state(self) -> VehicleState:
        x, y, yaw, v = self.opp_pose
        return VehicleState(x=x, y=y, yaw=yaw, v=v)

    def swapped(self) -> "Scenario":
        return Scenario(self.map_name, self.opp_pose, self.ego_pose, self.station, -self.gap,
                        self.opp_d, self.ego_d)


def compute_o_agg(progress_ego, progress_opp, overtake=False, crashed=False) -> float:
    """Aggressiveness coordinate ``-(S_e - S_o)`` with event adjustments."""
    agg = -(progress_ego - progress_opp)
    if overtake:
        agg -= EVENT_FRACTION * abs(agg)
    if crashed:
        agg += EVENT_FRACTION * abs(agg)
    return float(agg)


def compute_o_res(ttc_samples, a=RES_SCALE, b=RES_OFFSET) -> float:
    """Restraint coordinate ``a * (b - mean(ttc))`` with samples clamped to ``[0, b]``.

    An empty sample list is treated as a fully safe episode and scores 0.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    t = np.asarray(ttc_samples, dtype=np.float64).ravel()
    if t.size == 0:
        return 0.0
    return float(a * (b - np.clip(t, 0.0, b).mean()))


def lead_trace(seg: Segment, raceline, who=0) -> np.ndarray:
    """Signed lead of car ``who`` over the other car at every recorded frame."""
    other = 1 - who
    lead0 = progress_delta(raceline, seg.s[0, other], seg.s[0, who])
    return lead0 + cumulative_progress(seg.s[:, who], raceline) - cumulative_progress(seg.s[:, other], raceline)


def overtook(lead: np.ndarray) -> bool:
    """True if the lead goes from negative to positive at some point."""
    behind = False
    for x in lead:
        if x < 0:
            behind = True
        elif x > 0 and behind:
            return True
    return False


def segment_result(seg: Segment, raceline, who=0) -> RolloutResult:
    """Objective bookkeeping of one segment from the point of view of car ``who``."""
    other = 1 - who
    prog_me = cumulative_progress(seg.s[:, who], raceline)[-1]
    prog_other = cumulative_progress(seg.s[:, other], raceline)[-1]
    lead = lead_trace(seg, raceline, who)
    overtake = overtook(lead)
    crashed = seg.ego_opp or seg.invalid
    ttc = seg.ttc[:, who, :].ravel()
    agg = compute_o_agg(prog_me, prog_other, overtake, crashed)
    res = compute_o_res(ttc) + (CRASH_RES_PENALTY if crashed else 0.0)
    return RolloutResult(
        s_ego_start=float(seg.s[0, who]), s_ego_end=float(seg.s[-1, who]),
        s_opp_start=float(seg.s[0, other]), s_opp_end=float(seg.s[-1, other]),
        progress_ego=float(prog_me), progress_opp=float(prog_other),
        overtake=overtake, ego_crashed_into_opp=bool(crashed), any_collision=seg.flags != 0,
        invalid=seg.invalid, ttc_samples=ttc, objectives=ObjectivePoint(agg, res),
        lead_start=float(lead[0]))


def make_race(track: Track, ego: Agent, opp: Agent, scenario: Scenario, sim=SimConfig(),
              planner=PlannerConfig()) -> Race:
    if scenario.map_name != track.name:
        raise ValueError(f"scenario is for map {scenario.map_name!r}, track is {track.name!r}")
    return Race(track, scenario.ego_state(), scenario.opp_state(), ego, opp, sim, planner)


def evaluate_rollout(ego_params: AgentParams, opp_params: AgentParams, scenario: Scenario,
                     track: Track, duration=ROLLOUT_SECONDS, seed=0, sim=SimConfig(),
                     planner=PlannerConfig()) -> RolloutResult:
    """Race both planners from ``scenario`` for ``duration`` seconds.

    The closed loop is deterministic; ``seed`` only exists so batch callers
    can thread their own seeds through and is not consumed.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    del seed
    race = make_race(track, Agent(ego_params), Agent(opp_params), scenario, sim, planner)
    return segment_result(race.run(duration), track.raceline)


def evaluate_batch(params: AgentParams, scenarios, opponents, track: Track, duration=ROLLOUT_SECONDS,
                   sim=SimConfig(), planner=PlannerConfig()):
    """Mean objective of ``params`` over every scenario/opponent pair, plus the raw results."""
    if len(scenarios) != len(opponents) or not scenarios:
        raise ValueError("need one opponent per scenario and at least one scenario")
    results = [evaluate_rollout(params, opp, sc, track, duration, sim=sim, planner=planner)
               for sc, opp in zip(scenarios, opponents)]
    pts = np.array([r.objectives.as_array() for r in results])
    mean = pts.mean(axis=0)
    return ObjectivePoint(float(mean[0]), float(mean[1])), results


def spawn_pose(raceline, s, d, speed_fraction=START_SPEED_FRACTION):
    """Pose ``(x, y, yaw, v)`` at station ``s`` shifted ``d`` meters left of the raceline."""
    x, y, th, v = raceline.pose_at(raceline.wrap(s))
    return (float(x - d * math.sin(th)), float(y + d * math.cos(th)), float(th), float(speed_fraction * v))


def spawn_is_clear(track: Track, ego_pose, opp_pose, sim=SimConfig()) -> bool:
    ego = VehicleState(x=ego_pose[0], y=ego_pose[1], yaw=ego_pose[2]).as_array()
    opp = VehicleState(x=opp_pose[0], y=opp_pose[1], yaw=opp_pose[2]).as_array()
    return _collision_flags(ego, opp, sim.vehicle.as_array(), *track.grid.kernel_args()) == 0


def make_scenario(track: Track, station, gap, ego_d, opp_d, sim=SimConfig()) -> Scenario:
    line = track.raceline
    ego_pose = spawn_pose(line, station + gap, ego_d)
    opp_pose = spawn_pose(line, station, opp_d)
    return Scenario(track.name, ego_pose, opp_pose, float(station), float(gap), float(ego_d), float(opp_d))


def make_scenario_set(track: Track, count, seed, sim=SimConfig()):
    """Draw ``count`` collision-free scenarios, each with a random opponent.

    The ego is placed a random 0.5 to 3 m ahead of or behind the opponent at a
    uniform raceline station, both with random lateral offsets.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    scenarios, opponents = [], []
    for _ in range(count):
        for _ in range(MAX_SPAWN_TRIES):
            station = rng.uniform(0.0, track.raceline.total_length)
            gap = rng.uniform(*GAP_RANGE) * rng.choice((-1.0, 1.0))
            ego_d, opp_d = rng.uniform(-LATERAL_RANGE, LATERAL_RANGE, size=2)
            sc = make_scenario(track, station, gap, ego_d, opp_d, sim)
            if spawn_is_clear(track, sc.ego_pose, sc.opp_pose, sim):
                break
        else:
            raise RuntimeError(f"no collision-free spawn after {MAX_SPAWN_TRIES} tries")
        scenarios.append(sc)
        opponents.append(AgentParams.random(rng))
    return scenarios, opponents


SCENARIO_COLUMNS = (["map", "station", "gap", "ego_d", "opp_d", "ego_x", "ego_y", "ego_yaw", "ego_v",
                     "opp_x", "opp_y", "opp_yaw", "opp_v"] + [f"opp_{n}" for n in WEIGHT_NAMES])


def save_scenarios(path, scenarios, opponents):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SCENARIO_COLUMNS)
        for sc, opp in zip(scenarios, opponents, strict=True):
            w.writerow([sc.map_name] + [repr(float(v)) for v in
                        (sc.station, sc.gap, sc.ego_d, sc.opp_d, *sc.ego_pose, *sc.opp_pose, *opp.as_array())])


def load_scenarios(path):
    scenarios, opponents = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCENARIO_COLUMNS:
            raise ValueError(f"{path}: unexpected scenario header")
        for row in reader:
            if not row:
                continue
            v = [float(c) for c in row[1:]]
            scenarios.append(Scenario(row[0], tuple(v[4:8]), tuple(v[8:12]), *v[:4]))
            opponents.append(AgentParams.from_array(v[12:]))
    return scenarios, opponents


def station_of(track: Track, pose) -> float:
    return project(track.raceline, pose[:2]).s
