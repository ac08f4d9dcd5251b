"""Sampling-based lattice planner parameterized by an 8-element weight vector.

One planning cycle:

1. sample ``n`` goals laterally spread around the raceline at a fixed
   lookahead, each with ``m`` velocity scales,
2. connect the vehicle to each goal with a cubic curvature spiral,
3. score every (spiral, velocity scale) pair with seven costs,
4. pick the lowest weighted sum and track it with Pure Pursuit.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from numba import njit

from .sim import (P_LF, P_LR, P_MAX_ACCEL, P_WIDTH, S_SLIP, S_STEER, S_V, S_X, S_Y,
                  S_YAW, Control, VehicleParams, VehicleState)
from .track import OccupancyGrid, Raceline, _grid_distance, _pose_at, _project, _speed_at

N_COSTS = 7
COST_NAMES = ("c_mc", "c_al", "c_hys", "c_do", "c_co", "c_v1", "c_v2")
WEIGHT_NAMES = ("gamma", "p_mc", "p_al", "p_hys", "p_do", "p_co", "p_v1", "p_v2")
GAMMA_BOUNDS = (0.6, 1.0)
WEIGHT_BOUNDS = (1.0, 10.0)

# trajectory point columns
T_X, T_Y, T_TH, T_K, T_V, T_S = range(6)


@dataclass(frozen=True)
class AgentParams:
    """Planner weights ``[gamma, p_mc, p_al, p_hys, p_do, p_co, p_v1, p_v2]``."""

    gamma: float
    p_mc: float
    p_al: float
    p_hys: float
    p_do: float
    p_co: float
    p_v1: float
    p_v2: float

    def __post_init__(self):
        lo, hi = GAMMA_BOUNDS
        if not lo <= self.gamma <= hi:
            raise ValueError(f"gamma {self.gamma} outside [{lo}, {hi}]")
        lo, hi = WEIGHT_BOUNDS
        for name in WEIGHT_NAMES[1:]:
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name} {v} outside [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "AgentParams":
        return cls(*(float(v) for v in values))

    @classmethod
    def bounds(cls):
        lo = np.array([GAMMA_BOUNDS[0]] + [WEIGHT_BOUNDS[0]] * 7)
        hi = np.array([GAMMA_BOUNDS[1]] + [WEIGHT_BOUNDS[1]] * 7)
        return lo, hi

    @classmethod
    def random(cls, rng) -> "AgentParams":
        lo, hi = cls.bounds()
        return cls.from_array(rng.uniform(lo, hi))

    def to_text(self) -> str:
        return "".join(f"{name}: {getattr(self, name)!r}\n" for name in WEIGHT_NAMES)

    @classmethod
    def from_text(cls, text) -> "AgentParams":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = line.split(":", 1)
                kv[k.strip()] = float(v)
        missing = set(WEIGHT_NAMES) - set(kv)
        if missing:
            raise ValueError(f"agent params missing {sorted(missing)}")
        return cls(*(kv[n] for n in WEIGHT_NAMES))


@dataclass(frozen=True)
class PlannerConfig:
    n_goals: int = 7
    n_speeds: int = 3
    lookahead: float = 3.0
    lateral_span: float = 0.8
    n_points: int = 17
    v_max: float = 8.0
    kappa_ref: float = 1.0
    d_scale: float = 0.5
    spiral_tol: float = 1e-3
    spiral_iters: int = 25
    pp_kv: float = 0.3
    pp_lmin: float = 0.6
    pp_lmax: float = 1.8
    pp_kp: float = 4.0
    speed_lo: float = 0.5
    speed_hi: float = 1.0
    replan_steps: int = 10

    def __post_init__(self):
        if self.n_goals < 1 or self.n_speeds < 1:
            raise ValueError("lattice needs n >= 1 and m >= 1")
        if (self.n_points - 1) % 2:
            raise ValueError("n_points - 1 must be even (Simpson pairs)")

    def as_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f.name)) for f in fields(self)])


C_N, C_M, C_LOOK, C_SPAN, C_NPTS, C_VMAX, C_KREF, C_DSCALE, C_TOL, C_ITERS = range(10)
C_PP_KV, C_PP_LMIN, C_PP_LMAX, C_PP_KP, C_SLO, C_SHI, C_REPLAN = range(10, 17)


@dataclass(frozen=True)
class SpiralCoeffs:
    """Curvature ``kappa(s) = a0 + a1 s + a2 s^2 + a3 s^3`` for ``s`` in ``[0, length]``."""

    a0: float
    a1: float
    a2: float
    a3: float
    length: float

    def kappa(self, s):
        return self.a0 + self.a1 * s + self.a2 * s ** 2 + self.a3 * s ** 3


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    goal_index: int = -1
    velocity_scale: float = 1.0

    @property
    def arc_length(self) -> float:
        return float(self.points[-1, T_S])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CostVector:
    c_mc: float
    c_al: float
    c_hys: float
    c_do: float
    c_co: float
    c_v1: float
    c_v2: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))

    @property
    def feasible(self) -> bool:
        return bool(np.isfinite(self.as_array()).all())


@dataclass(frozen=True)
class GoalSet:
    poses: np.ndarray
    offsets: np.ndarray
    scales: np.ndarray

    def __len__(self):
        return len(self.poses) * len(self.scales)


def sample_goals(ego: VehicleState, raceline: Raceline, n, m, lookahead, lateral_span,
                 speed_range=(0.5, 1.0)) -> GoalSet:
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    s_ego, _, _ = _project(raceline.x, raceline.y, raceline.cum_s, raceline.total_length,
                           raceline.closed, ego.x, ego.y, 0, -1)
    s_goal = s_ego + lookahead
    if not raceline.closed and s_goal > raceline.cum_s[-1]:
        raise ValueError("lookahead runs past the end of an open raceline")
    offsets = np.linspace(-lateral_span, lateral_span, n) if n > 1 else np.zeros(1)
    scales = np.linspace(speed_range[0], speed_range[1], m) if m > 1 else np.array([speed_range[1]])
    poses = np.empty((n, 3))
    _goal_poses(*raceline.kernel_args(), s_goal, offsets, poses)
    return GoalSet(poses, offsets, scales)


class SpiralFailure(RuntimeError):
    pass


def solve_spiral(start, goal, max_iters=25, tol=1e-3, guess=None) -> SpiralCoeffs:
    """Cubic spiral from ``start = (x, y, theta, kappa)`` to ``goal = (x, y, theta)`` ending at zero curvature.

    Raises :class:`SpiralFailure` if Newton's method does not converge.
    """
    q = np.empty(4)
    if guess is not None:
        q[:] = guess
        have_guess = True
    else:
        have_guess = False
    lx, ly, lth = _to_local(start[0], start[1], start[2], goal[0], goal[1], goal[2])
    ok = _solve_local(start[3], lx, ly, lth, 0.0, q, have_guess, max_iters, tol)
    if not ok:
        raise SpiralFailure(f"no spiral to {goal} within {max_iters} iterations")
    return SpiralCoeffs(*_knots_to_poly(start[3], q[0], q[1], q[2], q[3]), q[3])


def integrate_spiral(start, coeffs: SpiralCoeffs, n_points=17):
    """Sample ``n_points`` poses ``(x, y, theta, kappa, s)`` along a spiral."""
    pts = np.empty((n_points, 6))
    _sample_spiral(start[0], start[1], start[2], coeffs.a0, coeffs.a1, coeffs.a2, coeffs.a3,
                   coeffs.length, pts)
    return pts[:, [T_X, T_Y, T_TH, T_K, T_S]]


def make_trajectory(start, coeffs: SpiralCoeffs, raceline: Raceline, velocity_scale=1.0,
                    gamma=1.0, n_points=17, goal_index=-1) -> Trajectory:
    pts = np.empty((n_points, 6))
    _sample_spiral(start[0], start[1], start[2], coeffs.a0, coeffs.a1, coeffs.a2, coeffs.a3,
                   coeffs.length, pts)
    ds = _project(raceline.x, raceline.y, raceline.cum_s, raceline.total_length, raceline.closed,
                  pts[0, 0], pts[0, 1], 0, -1)
    _assign_speed(pts, n_points, *raceline.kernel_args(), gamma * velocity_scale, ds[2], -1)
    return Trajectory(pts, goal_index, velocity_scale)


def evaluate_costs(traj: Trajectory, prev: Trajectory | None, raceline: Raceline, opp: VehicleState,
                   grid: OccupancyGrid, vehicle: VehicleParams = VehicleParams(),
                   config: PlannerConfig = PlannerConfig()) -> CostVector:
    out = np.empty(N_COSTS)
    prev_pts = prev.points if prev is not None else np.zeros((1, 6))
    _traj_costs(traj.points, len(traj), prev_pts, len(prev_pts) if prev is not None else 0,
                *raceline.kernel_args(), 0, -1, opp.as_array(), vehicle.as_array(),
                config.as_array(), *grid.kernel_args(), out)
    return CostVector(*out)


def weighted_cost(params: AgentParams, costs: CostVector) -> float:
    return float(_weighted(params.as_array(), costs.as_array()))


def select_trajectory(params: AgentParams, candidates, state: VehicleState | None = None,
                      vehicle: VehicleParams = VehicleParams(), n_points=17):
    """Lowest weighted-cost candidate from ``[(Trajectory, CostVector), ...]``.

    Returns ``(index, trajectory)``; index is -1 for the emergency-brake
    trajectory used when every candidate is infeasible.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    costs = np.array([c.as_array() for _, c in candidates])
    idx = _argmin_weighted(params.as_array(), costs)
    if idx >= 0:
        return idx, candidates[idx][0]
    start = state if state is not None else VehicleState(*candidates[0][0].points[0, [0, 1, 2]])
    pts = np.empty((n_points, 6))
    _brake_trajectory(start.as_array(), vehicle.as_array(), pts)
    return -1, Trajectory(pts)


def pure_pursuit(state: VehicleState, traj: Trajectory, params: VehicleParams = VehicleParams(),
                 config: PlannerConfig = PlannerConfig()) -> Control:
    steer, accel = _pure_pursuit(state.as_array(), traj.points, len(traj), params.as_array(),
                                 config.as_array())
    return Control(steer, accel)


class Planner:
    """One agent's planner with its memory (previous selection, spiral warm starts)."""

    def __init__(self, params: AgentParams, raceline: Raceline, grid: OccupancyGrid,
                 vehicle: VehicleParams = VehicleParams(), config: PlannerConfig = PlannerConfig()):
        self.params = params
        self.raceline = raceline
        self.grid = grid
        self.vehicle = vehicle
        self.config = config
        self.memory = PlannerMemory.empty(config)

    def plan(self, ego: VehicleState, opp: VehicleState) -> Trajectory:
        mem = self.memory
        idx = plan_cycle(ego.as_array(), opp.as_array(), self.params.as_array(), mem,
                         self.vehicle.as_array(), self.config.as_array(), self.grid, self.raceline)
        n = self.config.n_points
        m = self.config.n_speeds
        return Trajectory(mem.traj[:n].copy(), idx // m if idx >= 0 else -1,
                          -1.0 if idx < 0 else float(_scale(self.config.as_array(), idx % m)))

    def control(self, state: VehicleState) -> Control:
        steer, accel = _pure_pursuit(state.as_array(), self.memory.traj, self.config.n_points,
                                     self.vehicle.as_array(), self.config.as_array())
        return Control(steer, accel)


@dataclass
class PlannerMemory:
    """Mutable per-agent planner state: selected trajectory, previous selection, warm starts."""

    traj: np.ndarray
    prev: np.ndarray
    warm: np.ndarray
    ints: np.ndarray  # [has_prev, raceline segment hint]

    @classmethod
    def empty(cls, config: PlannerConfig):
        n = config.n_points
        return cls(np.zeros((n, 6)), np.zeros((n, 6)), np.full((config.n_goals, 4), np.nan),
                   np.array([0, -1], dtype=np.int64))

    def copy(self):
        return PlannerMemory(self.traj.copy(), self.prev.copy(), self.warm.copy(), self.ints.copy())


def plan_cycle(state, opp, weights, mem: PlannerMemory, veh, cfg, grid, raceline):
    return _plan_cycle(state, opp, weights, mem.traj, mem.prev, mem.warm, mem.ints, veh, cfg,
                       *grid.kernel_args(), *raceline.kernel_args())


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _scale(cfg, j):
    m = int(cfg[C_M])
    if m == 1:
        return cfg[C_SHI]
    return cfg[C_SLO] + (cfg[C_SHI] - cfg[C_SLO]) * j / (m - 1)


@njit(cache=True)
def _goal_poses(xs, ys, vs, cum_s, total, closed, s_goal, offsets, out):
    gx, gy, gth, _ = _pose_at(xs, ys, vs, cum_s, total, closed, s_goal)
    c = math.cos(gth)
    s = math.sin(gth)
    for i in range(offsets.shape[0]):
        out[i, 0] = gx - offsets[i] * s
        out[i, 1] = gy + offsets[i] * c
        out[i, 2] = gth


@njit(cache=True)
def _wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


@njit(cache=True)
def _to_local(x0, y0, th0, x, y, th):
    c = math.cos(th0)
    s = math.sin(th0)
    dx = x - x0
    dy = y - y0
    return c * dx + s * dy, -s * dx + c * dy, _wrap(th - th0)


@njit(cache=True)
def _knots_to_poly(k0, k1, k2, k3, length):
    L = length
    a0 = k0
    a1 = -(11.0 * k0 - 18.0 * k1 + 9.0 * k2 - 2.0 * k3) / (2.0 * L)
    a2 = 9.0 * (2.0 * k0 - 5.0 * k1 + 4.0 * k2 - k3) / (2.0 * L * L)
    a3 = -9.0 * (k0 - 3.0 * k1 + 3.0 * k2 - k3) / (2.0 * L * L * L)
    return a0, a1, a2, a3


@njit(cache=True)
def _theta(a0, a1, a2, a3, s):
    return s * (a0 + s * (a1 / 2.0 + s * (a2 / 3.0 + s * a3 / 4.0)))


@njit(cache=True)
def _endpoint(k0, q, n_int):
    """Endpoint (x, y, theta) of the local-frame spiral by composite Simpson."""
    L = q[3]
    a0, a1, a2, a3 = _knots_to_poly(k0, q[0], q[1], q[2], L)
    h = L / n_int
    sx = 0.0
    sy = 0.0
    for i in range(n_int + 1):
        th = _theta(a0, a1, a2, a3, i * h)
        w = 1.0 if (i == 0 or i == n_int) else (4.0 if i % 2 == 1 else 2.0)
        sx += w * math.cos(th)
        sy += w * math.sin(th)
    return sx * h / 3.0, sy * h / 3.0, _theta(a0, a1, a2, a3, L)


@njit(cache=True)
def _residual(k0, gx, gy, gth, gk, q, out):
    x, y, th = _endpoint(k0, q, 32)
    out[0] = x - gx
    out[1] = y - gy
    out[2] = _wrap(th - gth)
    out[3] = q[2] - gk


@njit(cache=True)
def _initial_guess(k0, gx, gy, gth, q):
    d = math.sqrt(gx * gx + gy * gy)
    q[3] = d * (gth * gth / 5.0 + 1.0) + 2.0 * abs(gth) / 5.0
    # curvature of the circle through start and goal, tangent at start
    k = 2.0 * gy / (d * d) if d > 0 else 0.0
    q[0] = k
    q[1] = k
    q[2] = 0.0


@njit(cache=True)
def _solve4(A, b, x):
    """Gaussian elimination with partial pivoting on copies of a 4x4 system."""
    M = A.copy()
    y = b.copy()
    n = 4
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(M[r, c]) > abs(M[p, c]):
                p = r
        if abs(M[p, c]) < 1e-14:
            return False
        if p != c:
            for k in range(n):
                M[c, k], M[p, k] = M[p, k], M[c, k]
            y[c], y[p] = y[p], y[c]
        for r in range(c + 1, n):
            f = M[r, c] / M[c, c]
            for k in range(c, n):
                M[r, k] -= f * M[c, k]
            y[r] -= f * y[c]
    for r in range(n - 1, -1, -1):
        acc = y[r]
        for k in range(r + 1, n):
            acc -= M[r, k] * x[k]
        x[r] = acc / M[r, r]
    return True


@njit(cache=True)
def _solve_local(k0, gx, gy, gth, gk, q, have_guess, max_iters, tol):
    """Damped Newton shooting on unknowns ``q = (k1, k2, k3, L)``; ``q`` is updated in place."""
    if not have_guess or not (q[3] > 0.0):
        _initial_guess(k0, gx, gy, gth, q)
    r = np.empty(4)
    rp = np.empty(4)
    rm = np.empty(4)
    J = np.empty((4, 4))
    trial = np.empty(4)
    step = np.empty(4)
    _residual(k0, gx, gy, gth, gk, q, r)
    norm = math.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2 + r[3] ** 2)
    for _ in range(max_iters):
        if math.sqrt(r[0] ** 2 + r[1] ** 2) < tol and abs(r[2]) < tol and abs(r[3]) < tol:
            return True
        for j in range(4):
            h = 1e-6 * max(1.0, abs(q[j]))
            qj = q[j]
            q[j] = qj + h
            _residual(k0, gx, gy, gth, gk, q, rp)
            q[j] = qj - h
            _residual(k0, gx, gy, gth, gk, q, rm)
            q[j] = qj
            for i in range(4):
                J[i, j] = (rp[i] - rm[i]) / (2.0 * h)
        if not _solve4(J, r, step):
            return False
        alpha = 1.0
        accepted = False
        for _ls in range(12):
            for i in range(4):
                trial[i] = q[i] - alpha * step[i]
            if trial[3] > 1e-3:
                _residual(k0, gx, gy, gth, gk, trial, rp)
                nn = math.sqrt(rp[0] ** 2 + rp[1] ** 2 + rp[2] ** 2 + rp[3] ** 2)
                if nn < norm:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return False
        for i in range(4):
            q[i] = trial[i]
            r[i] = rp[i]
        norm = nn
    return math.sqrt(r[0] ** 2 + r[1] ** 2) < tol and abs(r[2]) < tol and abs(r[3]) < tol


@njit(cache=True)
def _sample_spiral(x0, y0, th0, a0, a1, a2, a3, L, pts):
    """Fill ``pts[:, x/y/theta/kappa/s]`` with equally spaced samples (Simpson pairs between samples)."""
    n = pts.shape[0]
    ds = L / (n - 1)
    h = ds / 2.0
    x = x0
    y = y0
    for i in range(n):
        s = i * ds
        if i > 0:
            sa = s - ds
            t0 = th0 + _theta(a0, a1, a2, a3, sa)
            t1 = th0 + _theta(a0, a1, a2, a3, sa + h)
            t2 = th0 + _theta(a0, a1, a2, a3, s)
            x += h / 3.0 * (math.cos(t0) + 4.0 * math.cos(t1) + math.cos(t2))
            y += h / 3.0 * (math.sin(t0) + 4.0 * math.sin(t1) + math.sin(t2))
        pts[i, T_X] = x
        pts[i, T_Y] = y
        pts[i, T_TH] = _wrap(th0 + _theta(a0, a1, a2, a3, s))
        pts[i, T_K] = a0 + s * (a1 + s * (a2 + s * a3))
        pts[i, T_S] = s


@njit(cache=True)
def _assign_speed(pts, n, xs, ys, vs, cum_s, total, closed, factor, hint, window):
    """Set point speeds to ``factor`` times the raceline speed at each point's projection."""
    for i in range(n):
        s, _, seg = _project(xs, ys, cum_s, total, closed, pts[i, T_X], pts[i, T_Y], hint, window)
        if window >= 0:
            hint = seg
        pts[i, T_V] = factor * _speed_at(vs, cum_s, total, closed, s)


@njit(cache=True)
def _traj_costs(pts, n, prev, prev_n, xs, ys, vs, cum_s, total, closed, hint, window,
                opp, veh, cfg, dist, res, ox, oy, oth, out):
    """Seven planner costs for one sampled trajectory; all +inf if it touches the map."""
    half_w = 0.5 * veh[P_WIDTH]
    for i in range(n):
        if _grid_distance(dist, res, ox, oy, oth, pts[i, T_X], pts[i, T_Y]) < half_w:
            for k in range(N_COSTS):
                out[k] = np.inf
            return
    v_max = cfg[C_VMAX]
    c_mc = 0.0
    c_do = 0.0
    v_sum = 0.0
    v2k = 0.0
    for i in range(n):
        k = abs(pts[i, T_K])
        if k > c_mc:
            c_mc = k
        _, d, seg = _project(xs, ys, cum_s, total, closed, pts[i, T_X], pts[i, T_Y], hint, window)
        if window >= 0:
            hint = seg
        c_do += abs(d)
        v_sum += pts[i, T_V]
        v2k += pts[i, T_V] * pts[i, T_V] * k
    c_do /= n
    c_al = pts[n - 1, T_S]
    c_hys = 0.0
    if prev_n > 1:
        j = 0
        for i in range(n):
            s = pts[i, T_S]
            while j < prev_n - 2 and prev[j + 1, T_S] < s:
                j += 1
            seg = prev[j + 1, T_S] - prev[j, T_S]
            t = (s - prev[j, T_S]) / seg if seg > 0 else 0.0
            if t > 1.0:
                t = 1.0
            elif t < 0.0:
                t = 0.0
            px = prev[j, T_X] + t * (prev[j + 1, T_X] - prev[j, T_X])
            py = prev[j, T_Y] + t * (prev[j + 1, T_Y] - prev[j, T_Y])
            c_hys += math.sqrt((pts[i, T_X] - px) ** 2 + (pts[i, T_Y] - py) ** 2)
        c_hys /= n
    # closing speed to a constant-velocity opponent, discounted by separation
    ovx = opp[S_V] * math.cos(opp[S_YAW] + opp[S_SLIP])
    ovy = opp[S_V] * math.sin(opp[S_YAW] + opp[S_SLIP])
    d_scale = cfg[C_DSCALE]
    c_co = 0.0
    t = 0.0
    for i in range(n):
        if i > 0:
            v_avg = 0.5 * (pts[i, T_V] + pts[i - 1, T_V])
            if v_avg < 0.1:
                v_avg = 0.1
            t += (pts[i, T_S] - pts[i - 1, T_S]) / v_avg
        rx = pts[i, T_X] - (opp[S_X] + ovx * t)
        ry = pts[i, T_Y] - (opp[S_Y] + ovy * t)
        dd = math.sqrt(rx * rx + ry * ry)
        if dd < 1e-9:
            dd = 1e-9
        wx = pts[i, T_V] * math.cos(pts[i, T_TH]) - ovx
        wy = pts[i, T_V] * math.sin(pts[i, T_TH]) - ovy
        closing = -(rx * wx + ry * wy) / dd
        if closing > 0.0:
            c_co += closing * math.exp(-dd / d_scale)
    out[0] = c_mc
    out[1] = c_al
    out[2] = c_hys
    out[3] = c_do
    out[4] = c_co
    out[5] = (v_max - v_sum / n) / v_max
    out[6] = (v2k / n) / (v_max * v_max * cfg[C_KREF])
    if out[5] < 0.0:
        out[5] = 0.0


@njit(cache=True)
def _weighted(w, c):
    total = 0.0
    for j in range(N_COSTS):
        total += w[j + 1] * c[j]
    return total


@njit(cache=True)
def _argmin_weighted(w, costs):
    best = -1
    best_c = np.inf
    for i in range(costs.shape[0]):
        feasible = True
        for j in range(N_COSTS):
            if not math.isfinite(costs[i, j]):
                feasible = False
                break
        if not feasible:
            continue
        c = _weighted(w, costs[i])
        if c < best_c:
            best_c = c
            best = i
    return best


@njit(cache=True)
def _brake_trajectory(state, veh, pts):
    n = pts.shape[0]
    v0 = state[S_V]
    a = veh[P_MAX_ACCEL]
    L = max(v0 * v0 / (2.0 * a), 0.5)
    c = math.cos(state[S_YAW])
    s = math.sin(state[S_YAW])
    for i in range(n):
        d = L * i / (n - 1)
        pts[i, T_X] = state[S_X] + d * c
        pts[i, T_Y] = state[S_Y] + d * s
        pts[i, T_TH] = state[S_YAW]
        pts[i, T_K] = 0.0
        pts[i, T_V] = math.sqrt(max(v0 * v0 - 2.0 * a * d, 0.0))
        pts[i, T_S] = d


@njit(cache=True)
def _plan_cycle(state, opp, w, traj, prev, warm, ints, veh, cfg,
                dist, res, ox, oy, oth, xs, ys, vs, cum_s, total, closed):
    """One planning cycle.  Writes the selection into ``traj`` and returns its candidate index (-1 = brake)."""
    n_goals = int(cfg[C_N])
    m = int(cfg[C_M])
    npts = int(cfg[C_NPTS])
    nseg = xs.shape[0] if closed else xs.shape[0] - 1
    spacing = total / nseg
    window = int(1.5 * cfg[C_LOOK] / spacing) + 4
    hint = ints[1]
    if hint < 0:
        s_ego, _, seg_ego = _project(xs, ys, cum_s, total, closed, state[S_X], state[S_Y], 0, -1)
    else:
        s_ego, _, seg_ego = _project(xs, ys, cum_s, total, closed, state[S_X], state[S_Y], hint, window)
    ints[1] = seg_ego
    s_goal = s_ego + cfg[C_LOOK]
    if not closed and s_goal > cum_s[xs.shape[0] - 1]:
        s_goal = cum_s[xs.shape[0] - 1]
    offsets = np.empty(n_goals)
    span = cfg[C_SPAN]
    for i in range(n_goals):
        offsets[i] = 0.0 if n_goals == 1 else -span + 2.0 * span * i / (n_goals - 1)
    goals = np.empty((n_goals, 3))
    _goal_poses(xs, ys, vs, cum_s, total, closed, s_goal, offsets, goals)

    k0 = math.tan(state[S_STEER]) / (veh[P_LF] + veh[P_LR])
    x0 = state[S_X]
    y0 = state[S_Y]
    th0 = state[S_YAW]
    gamma = w[0]
    pts = np.empty((npts, 6))
    best = np.empty((npts, 6))
    costs = np.empty(N_COSTS)
    q = np.empty(4)
    best_idx = -1
    best_c = np.inf
    mid_hint = seg_ego + window // 3
    for g in range(n_goals):
        gx, gy, gth = _to_local(x0, y0, th0, goals[g, 0], goals[g, 1], goals[g, 2])
        have = math.isfinite(warm[g, 3])
        for i in range(4):
            q[i] = warm[g, i]
        ok = _solve_local(k0, gx, gy, gth, 0.0, q, have, int(cfg[C_ITERS]), cfg[C_TOL])
        if not ok and have:
            ok = _solve_local(k0, gx, gy, gth, 0.0, q, False, int(cfg[C_ITERS]), cfg[C_TOL])
        if not ok:
            warm[g, 3] = np.nan
            continue
        for i in range(4):
            warm[g, i] = q[i]
        a0, a1, a2, a3 = _knots_to_poly(k0, q[0], q[1], q[2], q[3])
        _sample_spiral(x0, y0, th0, a0, a1, a2, a3, q[3], pts)
        _assign_speed(pts, npts, xs, ys, vs, cum_s, total, closed, 1.0, seg_ego, window)
        base_v = pts[:, T_V].copy()
        for j in range(m):
            f = gamma * _scale(cfg, j)
            for i in range(npts):
                pts[i, T_V] = f * base_v[i]
            _traj_costs(pts, npts, prev, npts if ints[0] else 0, xs, ys, vs, cum_s, total, closed,
                        mid_hint, window, opp, veh, cfg, dist, res, ox, oy, oth, costs)
            feasible = True
            for k in range(N_COSTS):
                if not math.isfinite(costs[k]):
                    feasible = False
            if not feasible:
                continue
            c = _weighted(w, costs)
            if c < best_c:
                best_c = c
                best_idx = g * m + j
                best[:, :] = pts
    if best_idx < 0:
        _brake_trajectory(state, veh, best)
    traj[:, :] = best
    prev[:, :] = best
    ints[0] = 1
    return best_idx


@njit(cache=True)
def _pure_pursuit(state, pts, n, veh, cfg):
    lr = veh[P_LR]
    wb = veh[P_LF] + lr
    yaw = state[S_YAW]
    rx = state[S_X] - lr * math.cos(yaw)
    ry = state[S_Y] - lr * math.sin(yaw)
    v = state[S_V]
    ld = cfg[C_PP_KV] * v
    if ld < cfg[C_PP_LMIN]:
        ld = cfg[C_PP_LMIN]
    elif ld > cfg[C_PP_LMAX]:
        ld = cfg[C_PP_LMAX]
    near = 0
    best = np.inf
    for i in range(n):
        d2 = (pts[i, T_X] - rx) ** 2 + (pts[i, T_Y] - ry) ** 2
        if d2 < best:
            best = d2
            near = i
    target = n - 1
    for i in range(near, n):
        if pts[i, T_S] - pts[near, T_S] >= ld:
            target = i
            break
    tx = pts[target, T_X] - rx
    ty = pts[target, T_Y] - ry
    dist_t = math.sqrt(tx * tx + ty * ty)
    if dist_t < 1e-6:
        steer = 0.0
    else:
        alpha = math.atan2(ty, tx) - yaw
        steer = math.atan(wb * 2.0 * math.sin(alpha) / dist_t)
    accel = cfg[C_PP_KP] * (pts[target, T_V] - v)
    a_max = veh[P_MAX_ACCEL]
    if accel > a_max:
        accel = a_max
    elif accel < -a_max:
        accel = -a_max
    return steer, accel
