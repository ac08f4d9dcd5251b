"""Two-player extensive game in objective space.

Both players sit at a point in ``O = (agg, res)``.  Every segment of driving
ends in a simultaneous decision: each player moves one axis by ``d_move``,
snaps to the nearest near-optimal prototype and drives the next segment with
its weights.  The ego's terminal utility is its final curvilinear lead; the
opponent receives the negation.

Regrets come from a single pass of counterfactual regret minimization: every
opponent action sequence is one iteration, the ego plays uniformly, and an
infoset groups the histories that share the ego's own actions and the
observed objective trajectory of the opponent.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objectives import ROLLOUT_SECONDS, ObjectivePoint, Scenario, make_race, segment_result
from .planner import PlannerConfig
from .rollout import Agent, Track
from .sim import SimConfig

log = logging.getLogger(__name__)

N_ACTIONS = 4
AGG_UP, AGG_DOWN, RES_UP, RES_DOWN = range(N_ACTIONS)
D_MOVE = 1.0
MAX_MOVES = 3

POINT_SLOTS = MAX_MOVES + 1
FEATURE_SIZE = 2 * POINT_SLOTS * 2 + 2 * POINT_SLOTS + MAX_MOVES * N_ACTIONS + N_ACTIONS  # 40


def apply_action(point: ObjectivePoint, action: int, d_move=D_MOVE) -> ObjectivePoint:
    """Shift one objective coordinate by ``+-d_move``."""
    if action == AGG_UP:
        return ObjectivePoint(point.agg + d_move, point.res)
    if action == AGG_DOWN:
        return ObjectivePoint(point.agg - d_move, point.res)
    if action == RES_UP:
        return ObjectivePoint(point.agg, point.res + d_move)
    if action == RES_DOWN:
        return ObjectivePoint(point.agg, point.res - d_move)
    raise ValueError(f"unknown action {action}")


def snap(point: ObjectivePoint, prototypes) -> int:
    """Index of the nearest prototype point; ties go to the lowest index."""
    if len(prototypes) == 0:
        raise ValueError("empty prototype set")
    pts = np.array([[p.point.agg, p.point.res] for p in prototypes])
    d2 = (pts[:, 0] - point.agg) ** 2 + (pts[:, 1] - point.res) ** 2
    return int(np.argmin(d2))


@dataclass(frozen=True)
class History:
    ego_points: tuple
    opp_points: tuple
    ego_actions: tuple
    opp_actions: tuple

    def __post_init__(self):
        if len(self.ego_points) != len(self.ego_actions) + 1 or len(self.opp_points) != len(self.opp_actions) + 1:
            raise ValueError("each player needs one more point than actions")

    def infoset(self) -> "Infoset":
        return Infoset(self.ego_points, self.opp_points, self.ego_actions)


@dataclass(frozen=True)
class Infoset:
    ego_points: tuple
    opp_points: tuple
    ego_actions: tuple


@dataclass(frozen=True)
class RegretSample:
    features: np.ndarray
    target: float

    def __post_init__(self):
        if self.features.shape != (FEATURE_SIZE,):
            raise ValueError(f"features must have length {FEATURE_SIZE}")


def sequences(moves) -> list[tuple]:
    """All action sequences of length ``moves`` in lexicographic (index) order."""
    return list(itertools.product(range(N_ACTIONS), repeat=moves))


def sequence_index(seq) -> int:
    i = 0
    for a in seq:
        i = i * N_ACTIONS + a
    return i


@dataclass
class UtilityTable:
    """Ego utilities over ego x opponent action sequences.

    ``ego_paths[i]`` / ``opp_paths[j]`` hold the operating points visited by
    sequence ``i`` / ``j`` (start point first), shape ``(moves + 1, 2)``.
    """

    utilities: np.ndarray
    valid: np.ndarray
    ego_paths: np.ndarray
    opp_paths: np.ndarray

    @property
    def moves(self) -> int:
        return self.ego_paths.shape[1] - 1

    def opponent_utilities(self) -> np.ndarray:
        return -self.utilities

    def __post_init__(self):
        n = N_ACTIONS ** self.moves
        if self.utilities.shape != (n, n) or self.valid.shape != (n, n):
            raise ValueError(f"utility table must be {n}x{n}")


@dataclass(frozen=True)
class GameConfig:
    moves: int = MAX_MOVES
    segment: float = ROLLOUT_SECONDS
    d_move: float = D_MOVE
    sim: SimConfig = SimConfig()
    planner: PlannerConfig = PlannerConfig()


def point_paths(start: int, prototypes, moves, d_move=D_MOVE):
    """Prototype ids and points visited by every action sequence from ``start``.

    Returns ``(ids[n, moves+1], points[n, moves+1, 2])`` in sequence order.
    """
    seqs = sequences(moves)
    ids = np.empty((len(seqs), moves + 1), dtype=np.int64)
    for i, seq in enumerate(seqs):
        cur = start
        ids[i, 0] = cur
        for d, a in enumerate(seq):
            cur = snap(apply_action(prototypes[cur].point, a, d_move), prototypes)
            ids[i, d + 1] = cur
    pts = np.array([[p.point.agg, p.point.res] for p in prototypes])
    return ids, pts[ids]


class _Tree:
    """Memoized segment runner keyed by the joint prototype path."""

    def __init__(self, track, scenario, prototypes, config):
        self.track, self.prototypes, self.config = track, prototypes, config
        self.scenario = scenario
        self.nodes = {}
        self.rollouts = 0

    def run(self, path):
        """Race state, lead and validity after driving every segment in ``path``."""
        if path in self.nodes:
            return self.nodes[path]
        e, o = path[-1]
        if len(path) == 1:
            race = make_race(self.track, Agent(self.prototypes[e].params), Agent(self.prototypes[o].params),
                             self.scenario, self.config.sim, self.config.planner)
            lead, ok = None, True
        else:
            parent, lead, ok = self.run(path[:-1])
            race = parent.copy()
            race.set_agent(0, Agent(self.prototypes[e].params))
            race.set_agent(1, Agent(self.prototypes[o].params))
        seg = race.run(self.config.segment)
        self.rollouts += 1
        r = segment_result(seg, self.track.raceline)
        if lead is None:
            lead = r.lead_start
        node = (race, lead + r.progress_ego - r.progress_opp, ok and not seg.invalid)
        self.nodes[path] = node
        return node


def play_out_table(ego_start: int, opp_start: int, prototypes, scenario: Scenario, track: Track,
                   config=GameConfig()) -> UtilityTable:
    """Fill the full utility table of one ego/opponent pair.

    ``ego_start``/``opp_start`` index into ``prototypes`` (the near-optimal
    set); segments shared between sequence pairs are simulated once.
    """
    m = config.moves
    e_ids, e_pts = point_paths(ego_start, prototypes, m, config.d_move)
    o_ids, o_pts = point_paths(opp_start, prototypes, m, config.d_move)
    tree = _Tree(track, scenario, prototypes, config)
    n = N_ACTIONS ** m
    u = np.empty((n, n))
    valid = np.empty((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            path = tuple((int(e_ids[i, d]), int(o_ids[j, d])) for d in range(m + 1))
            _, lead, ok = tree.run(path)
            u[i, j] = lead
            valid[i, j] = ok
    log.debug("utility table: %d segment rollouts for %d cells", tree.rollouts, n * n)
    return UtilityTable(u, valid, e_pts, o_pts)


def play_out_game(ego_start: int, opp_start: int, ego_seq, opp_seq, prototypes, scenario: Scenario,
                  track: Track, config=GameConfig()):
    """Ego utility of one sequence pair, or ``None`` if a rollout was invalid."""
    m = config.moves
    if len(ego_seq) != m or len(opp_seq) != m:
        raise ValueError(f"sequences must have length {m}")
    path = [(ego_start, opp_start)]
    e, o = ego_start, opp_start
    for a, b in zip(ego_seq, opp_seq):
        e = snap(apply_action(prototypes[e].point, a, config.d_move), prototypes)
        o = snap(apply_action(prototypes[o].point, b, config.d_move), prototypes)
        path.append((e, o))
    _, lead, ok = _Tree(track, scenario, prototypes, config).run(tuple(path))
    return lead if ok else None


# ---------------------------------------------------------------- CFR


@dataclass(frozen=True)
class InfosetRegrets:
    infoset: Infoset
    regrets: np.ndarray
    iterations: int


def exact_cfr(table: UtilityTable, atol=1e-9) -> list[InfosetRegrets]:
    """Counterfactual regrets of every ego infoset with uniform ego play.

    Each opponent sequence is one iteration.  At an infoset, only iterations
    whose opponent prefix produces the observed opponent points reach it; an
    iteration counts when every action has a valid continuation.  The regret
    is accumulated per iteration and checked against ``T * (v(I,a) - v(I))``.
    """
    m = table.moves
    if m < 1:
        raise ValueError("empty table")
    n = N_ACTIONS ** m
    u = np.where(table.valid, table.utilities, 0.0)
    cnt = table.valid.astype(np.float64)
    out = []
    for d in range(m):
        block = N_ACTIONS ** (m - d - 1)
        sums = u.reshape(N_ACTIONS ** (d + 1), block, n).sum(axis=1)
        cnts = cnt.reshape(N_ACTIONS ** (d + 1), block, n).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            v = sums / cnts  # v[prefix*4 + a, t]
        groups = {}
        for t in range(n):
            key = tuple(map(tuple, table.opp_paths[t, : d + 1]))
            groups.setdefault(key, []).append(t)
        for p in range(N_ACTIONS ** d):
            prefix = tuple(np.unravel_index(p, (N_ACTIONS,) * d)) if d else ()
            ego_seq = p * block * N_ACTIONS
            ego_pts = tuple(map(tuple, table.ego_paths[ego_seq, : d + 1]))
            va = v[p * N_ACTIONS:(p + 1) * N_ACTIONS]
            for key, ts in groups.items():
                ts = [t for t in ts if np.all(cnts[p * N_ACTIONS:(p + 1) * N_ACTIONS, t] > 0)]
                if not ts:
                    continue
                per_t = va[:, ts]
                r_iter = (per_t - per_t.mean(axis=0)).sum(axis=1)
                vbar = per_t.mean(axis=1)
                r_avg = len(ts) * (vbar - vbar.mean())
                if not np.allclose(r_iter, r_avg, rtol=1e-9, atol=atol * max(1.0, np.abs(per_t).max())):
                    raise AssertionError("per-iteration and averaged regret forms disagree")
                info = Infoset(ego_pts, key, tuple(int(a) for a in prefix))
                out.append(InfosetRegrets(info, r_iter, len(ts)))
    invalid = 1.0 - table.valid.mean()
    if invalid >= 0.1:
        log.warning("%.1f%% of utility cells invalid", 100 * invalid)
    return out


def regret_match(regrets) -> np.ndarray:
    """Strategy proportional to positive regrets; argmax pure strategy when none are positive."""
    r = np.asarray(regrets, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no actions")
    pos = np.maximum(r, 0.0)
    total = pos.sum()
    if total > 0:
        return pos / total
    out = np.zeros_like(r)
    out[int(np.argmax(r))] = 1.0
    return out


def best_action(regrets) -> int:
    """Highest-regret action; ties go to the lowest id."""
    return int(np.argmax(np.asarray(regrets, dtype=np.float64)))


# ---------------------------------------------------------------- features


def encode_infoset(info: Infoset, candidate: int, max_moves=MAX_MOVES) -> np.ndarray:
    """Fixed 40-wide feature vector for an infoset and a candidate action.

    Layout: ego points (4 x 2), opponent points (4 x 2), ego and opponent slot
    masks (4 each), ego action history one-hot (3 x 4), candidate one-hot (4).
    """
    if max_moves > MAX_MOVES:
        raise ValueError(f"at most {MAX_MOVES} moves fit the feature layout")
    if len(info.ego_points) > POINT_SLOTS or len(info.opp_points) > POINT_SLOTS or len(info.ego_actions) > MAX_MOVES:
        raise ValueError("history longer than the feature slots")
    if not 0 <= candidate < N_ACTIONS:
        raise ValueError(f"unknown action {candidate}")
    f = np.zeros(FEATURE_SIZE)
    for k, (a, r) in enumerate(info.ego_points):
        f[2 * k: 2 * k + 2] = a, r
        f[16 + k] = 1.0
    for k, (a, r) in enumerate(info.opp_points):
        f[8 + 2 * k: 8 + 2 * k + 2] = a, r
        f[20 + k] = 1.0
    for k, a in enumerate(info.ego_actions):
        f[24 + 4 * k + a] = 1.0
    f[36 + candidate] = 1.0
    return f


def table_samples(table: UtilityTable) -> list[RegretSample]:
    return [RegretSample(encode_infoset(node.infoset, a), float(node.regrets[a]))
            for node in exact_cfr(table) for a in range(N_ACTIONS)]


def build_dataset(pairs, prototypes, scenarios, track: Track, config=GameConfig(), out_dir=None, progress=None):
    """Self-play every ``(ego_start, opp_start)`` pair and collect regret samples.

    ``pairs`` index into ``prototypes``; pair ``k`` races from
    ``scenarios[k % len(scenarios)]``.  Utility tables are written to
    ``out_dir`` when given.
    """
    e_ids = {e for e, _ in pairs}
    o_ids = {o for _, o in pairs}
    if e_ids & o_ids:
        raise ValueError("ego and opponent prototype sets must be disjoint")
    samples, tables = [], []
    for k, (e, o) in enumerate(pairs):
        table = play_out_table(e, o, prototypes, scenarios[k % len(scenarios)], track, config)
        bad = int((~table.valid).sum())
        if bad:
            log.warning("pair %d: %d invalid utility cells", k, bad)
        tables.append(table)
        samples.extend(table_samples(table))
        if out_dir is not None:
            save_table(Path(out_dir) / f"utility_{k:03d}.csv", table)
        if progress:
            progress(k, table)
    return samples, tables


# ---------------------------------------------------------------- files

DATASET_COLUMNS = [f"f{i}" for i in range(FEATURE_SIZE)] + ["regret"]


def save_dataset(path, samples):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for s in samples:
            w.writerow([repr(float(v)) for v in s.features] + [repr(float(s.target))])


def load_dataset(path) -> list[RegretSample]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != DATASET_COLUMNS:
            raise ValueError(f"{path}: expected a {len(DATASET_COLUMNS)}-column dataset header")
        rows = [[float(c) for c in row] for row in reader if row]
    return [RegretSample(np.array(r[:FEATURE_SIZE]), r[FEATURE_SIZE]) for r in rows]


def save_table(path, table: UtilityTable):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row, ok in zip(table.utilities, table.valid):
            w.writerow([repr(float(v)) if k else "nan" for v, k in zip(row, ok)])
