"""Head-to-head race experiments and their statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .game import MAX_MOVES
from .objectives import ROLLOUT_SECONDS, Scenario, spawn_is_clear, spawn_pose
from .pipeline import OnlineState, RaceTrace, run_online
from .planner import PlannerConfig
from .rollout import Agent, Track
from .sim import SimConfig

EGO_KINDS = ("gt", "fixed")
OPPONENT_KINDS = ("fixed_dpp2", "random_explored", "lane_switcher")
START_OFFSET = 0.3


@dataclass(frozen=True)
class MatchSpec:
    ego: str = "gt"
    opponent: str = "fixed_dpp2"
    map_name: str = "A"
    starts: int = 5
    alternation: bool = True
    moves: int = MAX_MOVES
    segment: float = ROLLOUT_SECONDS

    def __post_init__(self):
        if self.ego not in EGO_KINDS:
            raise ValueError(f"ego must be one of {EGO_KINDS}")
        if self.opponent not in OPPONENT_KINDS:
            raise ValueError(f"opponent must be one of {OPPONENT_KINDS}")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")

    @property
    def sides(self) -> int:
        return 2 if self.alternation else 1


@dataclass(frozen=True)
class RaceOutcome:
    pairing: int
    start: int
    side: int
    winner: str  # "ego", "opp" or "draw"
    final_lead: float
    ego_crashed: bool
    opp_crashed: bool

    @property
    def credit(self) -> float:
        return {"ego": 1.0, "opp": 0.0, "draw": 0.5}[self.winner]


def judge(trace: RaceTrace) -> str:
    """Crashed cars lose; two crashes draw; otherwise the car further along wins."""
    if trace.ego_crashed and trace.opp_crashed:
        return "draw"
    if trace.ego_crashed:
        return "opp"
    if trace.opp_crashed:
        return "ego"
    if trace.final_lead > 0:
        return "ego"
    return "opp" if trace.final_lead < 0 else "draw"


def start_line(track: Track, station, side, sim=SimConfig()) -> Scenario:
    """Side-by-side grid slot at ``station``; ``side`` 0 puts the ego on the left."""
    d = START_OFFSET if side == 0 else -START_OFFSET
    line = track.raceline
    ego = spawn_pose(line, station, d)
    opp = spawn_pose(line, station, -d)
    if not spawn_is_clear(track, ego, opp, sim):
        raise ValueError(f"start line at s={station:.2f} is blocked")
    return Scenario(track.name, ego, opp, float(station), 0.0, d, -d)


def start_stations(track: Track, count, seed) -> list[float]:
    rng = np.random.default_rng(seed)
    return [float(s) for s in rng.uniform(0.0, track.raceline.total_length, count)]


def lane_switcher_policy(speed=0.9) -> Agent:
    """Baseline that follows the raceline and hops lanes around obstacles."""
    return Agent.lane_switcher(speed)


def opponents_for(kind, protos, n, seed) -> list[Agent]:
    """Opponent agents for a match: the second DPP set, random explored agents or the lane switcher."""
    if kind == "fixed_dpp2":
        return [Agent(protos.explored[i].params) for i in protos.dpp2]
    if kind == "random_explored":
        pool = [i for i, e in enumerate(protos.explored) if e is not None]
        pick = np.random.default_rng(seed).choice(len(pool), size=min(n, len(pool)), replace=False)
        return [Agent(protos.explored[pool[i]].params) for i in sorted(pick)]
    return [lane_switcher_policy()]


def run_match(spec: MatchSpec, track: Track, protos, model, slope, seed, sim=SimConfig(),
              planner=PlannerConfig(), progress=None) -> list[RaceOutcome]:
    """Every ego prototype against every opponent over ``starts`` lines and both sides.

    Ego prototypes are the first DPP set; they start at their own point in
    the near-optimal set, and the game-theoretic ego moves from there.
    """
    if spec.map_name != track.name:
        raise ValueError("spec map does not match track")
    no = list(protos.near_optimal)
    prototypes = [protos.explored[i] for i in no]
    opps = opponents_for(spec.opponent, protos, len(protos.dpp2), seed)
    stations = start_stations(track, spec.starts, seed)
    out = []
    pairing = 0
    for ego_id in protos.dpp1:
        for opp in opps:
            for k, station in enumerate(stations):
                for side in range(spec.sides):
                    sc = start_line(track, station, side, sim)
                    if spec.ego == "gt":
                        ego = OnlineState(model, prototypes, no.index(ego_id), slope)
                    else:
                        ego = Agent(protos.explored[ego_id].params)
                    trace = run_online(track, sc, ego, opp, spec.moves, spec.segment, sim, planner)
                    out.append(RaceOutcome(pairing, k, side, judge(trace), trace.final_lead,
                                           trace.ego_crashed, trace.opp_crashed))
                    if progress:
                        progress(out[-1])
            pairing += 1
    return out


def win_rates(outcomes) -> np.ndarray:
    """Mean win credit per pairing, in pairing order."""
    by = {}
    for o in outcomes:
        by.setdefault(o.pairing, []).append(o.credit)
    return np.array([np.mean(by[k]) for k in sorted(by)])


# ---------------------------------------------------------------- statistics


def _betacf(a, b, x, max_iter=300, eps=1e-16):
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc(a, b, x) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, dof) -> float:
    """Two-sided tail probability of Student's t."""
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    degenerate: bool = False


def paired_t_test(a, b) -> TTest:
    """Paired two-sided t-test of ``mean(a - b) = 0``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0 or sd < 1e-15 * max(1.0, abs(mean)):
        if mean == 0.0:
            return TTest(0.0, 1.0, True)
        return TTest(math.copysign(math.inf, mean), 0.0, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, t_sf_two_sided(t, n - 1))


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class ConditionSummary:
    win_rates: list
    mean: float
    std: float
    races: int
    crashes: int
    wins: int
    losses: int
    draws: int


def summarize(outcomes) -> ConditionSummary:
    if not outcomes:
        raise ValueError("no races to summarize")
    wr = win_rates(outcomes)
    w = sum(o.winner == "ego" for o in outcomes)
    l = sum(o.winner == "opp" for o in outcomes)
    return ConditionSummary([float(v) for v in wr], float(wr.mean()), float(wr.std()), len(outcomes),
                            sum(o.ego_crashed for o in outcomes), w, l, len(outcomes) - w - l)


def race_report(treatment, control, config=None) -> dict:
    """Table-style comparison of two race logs over the same pairings."""
    a, b = summarize(treatment), summarize(control)
    if len(a.win_rates) != len(b.win_rates):
        raise ValueError("conditions cover different pairings")
    test = paired_t_test(a.win_rates, b.win_rates)
    return {"config": config or {}, "treatment": asdict(a), "control": asdict(b),
            "t": test.t, "p": test.p, "degenerate": test.degenerate}


def write_report(path, report):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


LOG_COLUMNS = ["pairing", "start", "side", "winner", "final_lead", "ego_crashed", "opp_crashed"]


def save_race_log(path, outcomes):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for o in outcomes:
            w.writerow([o.pairing, o.start, o.side, o.winner, repr(float(o.final_lead)), int(o.ego_crashed),
                        int(o.opp_crashed)])


def load_race_log(path) -> list[RaceOutcome]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected race log header")
        return [RaceOutcome(int(r[0]), int(r[1]), int(r[2]), r[3], float(r[4]), r[5] == "1", r[6] == "1")
                for r in reader if r]
