"""Compiled closed-loop episode runner shared by every stage.

A :class:`Race` owns two cars (index 0 = ego, 1 = opponent), their planner
memories and the collision/freeze bookkeeping.  ``Race.run`` advances it by a
whole number of planner frames and returns a :class:`Segment` record.  Races
are mutable; use :meth:`Race.copy` to branch a game tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .planner import (C_NPTS, C_REPLAN, T_K, T_S, T_TH, T_V, T_X, T_Y, AgentParams,
                      PlannerConfig, _brake_trajectory, _plan_cycle, _pure_pursuit)
from .sim import (P_LENGTH, P_WIDTH, S_V, S_X, S_Y, S_YAW, SimConfig, _collision_flags, _scan,
                  _step_vehicle)
from .track import OccupancyGrid, Raceline, _progress_delta, _project

PLANNER = 0
LANE_SWITCHER = 1

TTC_CAP = 5.0
TTC_EPS = 0.01

LANE_OFFSETS = (0.0, -0.4, 0.4)
LANE_LOOKAHEAD = 2.5
LANE_RADIUS = 0.2
LANE_GUARD = 0.5

# per-agent integer memory slots
I_HAS_PREV, I_HINT, I_LANE, I_LAST_SWITCH, I_SWITCHES = range(5)
# race status slots
R_FLAGS, R_EGO_OPP_FRAME, R_INVALID, R_STEP = range(4)


@dataclass(frozen=True)
class Track:
    name: str
    grid: OccupancyGrid
    raceline: Raceline
    lanes_x: np.ndarray = field(repr=False)
    lanes_y: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, name, grid, raceline, lane_offsets=LANE_OFFSETS):
        lanes = [raceline.offset(d) for d in lane_offsets]
        return cls(name, grid, raceline, np.stack([ln.x for ln in lanes]), np.stack([ln.y for ln in lanes]))


def load_track(name) -> Track:
    from .maps import load_map

    grid, line = load_map(name)
    return Track.build(name, grid, line)


@dataclass(frozen=True)
class Agent:
    """Planner agent with weights, or the lane-switching baseline."""

    params: AgentParams | None = None
    kind: int = PLANNER
    lane_speed: float = 0.9

    @classmethod
    def lane_switcher(cls, speed=0.9):
        return cls(None, LANE_SWITCHER, speed)

    def weights(self) -> np.ndarray:
        if self.kind == LANE_SWITCHER:
            w = np.zeros(8)
            w[0] = self.lane_speed
            return w
        return self.params.as_array()


@dataclass
class Segment:
    """Planner-rate record of one stretch of driving.

    ``states[f, a]`` and ``s[f, a]`` are taken at the start of frame ``f``
    (plus one trailing entry after the last frame); ``ttc[f, a]`` holds the
    per-beam capped time-to-collision seen by car ``a`` at frame ``f``.
    """

    t0: float
    frame_dt: float
    states: np.ndarray
    s: np.ndarray
    ttc: np.ndarray
    flags: int
    ego_opp: bool
    frozen: np.ndarray
    invalid: bool

    @property
    def n_frames(self) -> int:
        return self.ttc.shape[0]


class Race:
    def __init__(self, track: Track, ego_state, opp_state, ego: Agent, opp: Agent,
                 sim: SimConfig = SimConfig(), planner: PlannerConfig = PlannerConfig()):
        self.track = track
        self.sim = sim
        self.planner = planner
        self.agents = [ego, opp]
        self.states = np.stack([ego_state.as_array(), opp_state.as_array()])
        self.frozen = np.zeros(2, dtype=np.int64)
        self.weights = np.stack([ego.weights(), opp.weights()])
        self.kinds = np.array([ego.kind, opp.kind], dtype=np.int64)
        n = planner.n_points
        self.traj = np.zeros((2, n, 6))
        self.prev = np.zeros((2, n, 6))
        self.warm = np.full((2, planner.n_goals, 4), np.nan)
        self.ints = np.zeros((2, 5), dtype=np.int64)
        self.ints[:, I_HINT] = -1
        self.ints[:, I_LAST_SWITCH] = -10 ** 9
        self.status = np.array([0, -1, 0, 0], dtype=np.int64)
        self.total_flags = 0
        self._veh = sim.vehicle.as_array()
        self._cfg = planner.as_array()
        self._angles = sim.scan.angles()

    @property
    def t(self) -> float:
        return self.status[R_STEP] * self.sim.dt

    def set_agent(self, index, agent: Agent):
        """Swap an agent's weights; planner memory carries over."""
        self.agents[index] = agent
        self.weights[index] = agent.weights()
        self.kinds[index] = agent.kind

    def copy(self) -> "Race":
        other = object.__new__(Race)
        other.__dict__.update(self.__dict__)
        other.agents = list(self.agents)
        for name in ("states", "frozen", "weights", "kinds", "traj", "prev", "warm", "ints", "status"):
            setattr(other, name, getattr(self, name).copy())
        return other

    def run(self, duration) -> Segment:
        replan = self.planner.replan_steps
        frame_dt = replan * self.sim.dt
        n_frames = int(round(duration / frame_dt))
        if n_frames < 1 or abs(n_frames * frame_dt - duration) > 1e-9:
            raise ValueError(f"duration {duration} is not a positive multiple of the planner period")
        t0 = self.t
        rec_states = np.empty((n_frames + 1, 2, 7))
        rec_s = np.empty((n_frames + 1, 2))
        rec_ttc = np.empty((n_frames, 2, self.sim.scan.n_beams))
        tr = self.track
        self.status[R_FLAGS] = 0
        _run(self.states, self.frozen, self.weights, self.kinds, self.traj, self.prev, self.warm,
             self.ints, self.status, tr.lanes_x, tr.lanes_y, self._veh, self._cfg, self._angles,
             self.sim.scan.max_range, self.sim.dt, TTC_CAP, TTC_EPS,
             *tr.grid.kernel_args(), *tr.raceline.kernel_args(),
             n_frames, rec_states, rec_s, rec_ttc)
        flags = int(self.status[R_FLAGS])
        self.total_flags |= flags
        return Segment(t0, frame_dt, rec_states, rec_s, rec_ttc, flags, bool(flags & 4),
                       self.frozen.copy().astype(bool), bool(self.status[R_INVALID]))


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def ttc_from_scan(ranges, angles, v, cap, eps, out):
    """Per-beam instantaneous time to collision, clamped to ``[0, cap]``."""
    for i in range(ranges.shape[0]):
        rdot = v * math.cos(angles[i])
        if rdot <= eps:
            out[i] = cap
        else:
            t = ranges[i] / rdot
            out[i] = cap if t > cap else (0.0 if t < 0.0 else t)


@njit(cache=True)
def _lane_cycle(state, ranges, angles, max_range, lanes_x, lanes_y, speed, ints, step, guard_steps,
                traj, veh, xs, ys, vs, cum_s, total, closed):
    """Lane-switching baseline: follow a lane, hop to the nearest free lane when blocked."""
    n_lanes = lanes_x.shape[0]
    npts = traj.shape[0]
    n_wp = xs.shape[0]
    _, _, seg = _project(xs, ys, cum_s, total, closed, state[S_X], state[S_Y], 0, -1)
    spacing = total / n_wp
    n_look = int(LANE_LOOKAHEAD / spacing) + 1
    occupied = np.zeros(n_lanes, dtype=np.bool_)
    c = math.cos(state[S_YAW])
    s = math.sin(state[S_YAW])
    for b in range(ranges.shape[0]):
        if ranges[b] >= max_range - 1e-9:
            continue
        hx = state[S_X] + ranges[b] * math.cos(state[S_YAW] + angles[b])
        hy = state[S_Y] + ranges[b] * math.sin(state[S_YAW] + angles[b])
        # only returns ahead of the car matter
        if (hx - state[S_X]) * c + (hy - state[S_Y]) * s <= 0.0:
            continue
        for ln in range(n_lanes):
            if occupied[ln]:
                continue
            for k in range(n_look):
                i = (seg + k) % n_wp
                if (lanes_x[ln, i] - hx) ** 2 + (lanes_y[ln, i] - hy) ** 2 < LANE_RADIUS ** 2:
                    occupied[ln] = True
                    break
    lane = ints[I_LANE]
    can_switch = step - ints[I_LAST_SWITCH] >= guard_steps
    if occupied[lane] and can_switch:
        best = -1
        best_gap = 1e9
        for ln in range(n_lanes):
            if occupied[ln]:
                continue
            gap = abs(_lane_pos(ln) - _lane_pos(lane))
            if gap < best_gap:
                best_gap = gap
                best = ln
        if best >= 0:
            lane = best
    elif lane != 0 and not occupied[0] and can_switch:
        lane = 0
    if lane != ints[I_LANE]:
        ints[I_LANE] = lane
        ints[I_LAST_SWITCH] = step
        ints[I_SWITCHES] += 1
    if occupied[lane]:
        _brake_trajectory(state, veh, traj)
        return
    stride = max(1, int(round(2.0 * LANE_LOOKAHEAD / (npts - 1) / spacing)))
    acc = 0.0
    for k in range(npts):
        i = (seg + k * stride) % n_wp
        traj[k, T_X] = lanes_x[lane, i]
        traj[k, T_Y] = lanes_y[lane, i]
        if k > 0:
            acc += math.sqrt((traj[k, T_X] - traj[k - 1, T_X]) ** 2 + (traj[k, T_Y] - traj[k - 1, T_Y]) ** 2)
        traj[k, T_S] = acc
        traj[k, T_V] = speed * vs[i]
        traj[k, T_K] = 0.0
        traj[k, T_TH] = 0.0


@njit(cache=True)
def _lane_pos(ln):
    # lane 0 is the raceline, 1 and 2 the right and left offsets
    if ln == 0:
        return 0.0
    return -1.0 if ln == 1 else 1.0


@njit(cache=True)
def _run(states, frozen, weights, kinds, traj, prev, warm, ints, status, lanes_x, lanes_y, veh, cfg,
         angles, max_range, dt, ttc_cap, ttc_eps, dist, res, ox, oy, oth, xs, ys, vs, cum_s, total,
         closed, n_frames, rec_states, rec_s, rec_ttc):
    replan = int(cfg[C_REPLAN])
    npts = int(cfg[C_NPTS])
    guard_steps = int(round(LANE_GUARD / dt))
    n_beams = angles.shape[0]
    ranges = np.empty(n_beams)
    rect = np.empty(5)
    rect[3] = veh[P_LENGTH]
    rect[4] = veh[P_WIDTH]
    for f in range(n_frames):
        for a in range(2):
            rec_states[f, a, :] = states[a]
            rec_s[f, a] = _project(xs, ys, cum_s, total, closed, states[a, S_X], states[a, S_Y], 0, -1)[0]
        for a in range(2):
            o = 1 - a
            rect[0] = states[o, S_X]
            rect[1] = states[o, S_Y]
            rect[2] = states[o, S_YAW]
            _scan(states[a, S_X], states[a, S_Y], states[a, S_YAW], dist, res, ox, oy, oth, rect, True,
                  angles, max_range, ranges)
            ttc_from_scan(ranges, angles, states[a, S_V], ttc_cap, ttc_eps, rec_ttc[f, a])
            if frozen[a]:
                continue
            if kinds[a] == LANE_SWITCHER:
                _lane_cycle(states[a], ranges, angles, max_range, lanes_x, lanes_y, weights[a, 0],
                            ints[a], status[R_STEP], guard_steps, traj[a], veh, xs, ys, vs, cum_s,
                            total, closed)
            else:
                _plan_cycle(states[a], states[o], weights[a], traj[a], prev[a], warm[a], ints[a], veh,
                            cfg, dist, res, ox, oy, oth, xs, ys, vs, cum_s, total, closed)
        for _ in range(replan):
            for a in range(2):
                if frozen[a]:
                    continue
                steer, accel = _pure_pursuit(states[a], traj[a], npts, veh, cfg)
                if not _step_vehicle(states[a], steer, accel, veh, dt):
                    status[R_INVALID] = 1
                    frozen[a] = 1
                    states[a, S_V] = 0.0
            status[R_STEP] += 1
            flags = _collision_flags(states[0], states[1], veh, dist, res, ox, oy, oth)
            if flags:
                status[R_FLAGS] |= flags
                if flags & 4 and status[R_EGO_OPP_FRAME] < 0:
                    status[R_EGO_OPP_FRAME] = status[R_STEP]
                if flags & 5:
                    frozen[0] = 1
                    states[0, S_V] = 0.0
                    states[0, 5] = 0.0
                if flags & 6:
                    frozen[1] = 1
                    states[1, S_V] = 0.0
                    states[1, 5] = 0.0
    for a in range(2):
        rec_states[n_frames, a, :] = states[a]
        rec_s[n_frames, a] = _project(xs, ys, cum_s, total, closed, states[a, S_X], states[a, S_Y], 0, -1)[0]


def cumulative_progress(s, raceline: Raceline) -> np.ndarray:
    """Wrap-aware cumulative progress for an ``s`` trace sampled at planner rate."""
    steps = [_progress_delta(a, b, raceline.total_length, raceline.closed) for a, b in zip(s[:-1], s[1:])]
    return np.concatenate([[0.0], np.cumsum(steps)])
