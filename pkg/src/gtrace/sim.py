"""Deterministic two-vehicle simulation.

Vehicles follow the single-track model with side slip (CommonRoad ST
equations), integrated with classical RK4.  Below ``v_switch`` the kinematic
single-track equations take over, since the slip equations divide by ``v``.

State vectors used by the kernels are laid out as
``[x, y, steer, v, yaw, yaw_rate, slip]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from numba import njit

from .track import OccupancyGrid, _grid_distance, read_keyvalue, write_keyvalue

G = 9.81

# indices into the packed vehicle-parameter array
P_MU, P_CSF, P_CSR, P_LF, P_LR, P_H, P_M, P_I = range(8)
P_MAX_STEER, P_MAX_STEER_RATE, P_MAX_ACCEL, P_V_MAX = range(8, 12)
P_LENGTH, P_WIDTH, P_V_SWITCH = range(12, 15)

S_X, S_Y, S_STEER, S_V, S_YAW, S_YAW_RATE, S_SLIP = range(7)


@dataclass(frozen=True)
class VehicleParams:
    """1/10-scale race car defaults (F1TENTH class)."""

    lf: float = 0.15875
    lr: float = 0.17145
    mass: float = 3.74
    yaw_inertia: float = 0.04712
    cornering_stiffness_front: float = 4.718
    cornering_stiffness_rear: float = 5.4562
    friction_mu: float = 1.0489
    cg_height: float = 0.074
    max_steer: float = 0.4189
    max_steer_rate: float = 3.2
    max_accel: float = 9.51
    v_max: float = 10.0
    length: float = 0.58
    width: float = 0.31
    v_switch: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"vehicle parameter {f.name} must be positive, got {v}")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr

    def as_array(self) -> np.ndarray:
        return np.array([
            self.friction_mu, self.cornering_stiffness_front, self.cornering_stiffness_rear,
            self.lf, self.lr, self.cg_height, self.mass, self.yaw_inertia,
            self.max_steer, self.max_steer_rate, self.max_accel, self.v_max,
            self.length, self.width, self.v_switch,
        ])


@dataclass(frozen=True)
class ScanConfig:
    n_beams: int = 108
    fov: float = 1.5 * math.pi
    max_range: float = 10.0

    def angles(self) -> np.ndarray:
        return np.linspace(-0.5 * self.fov, 0.5 * self.fov, self.n_beams)


@dataclass(frozen=True)
class SimConfig:
    vehicle: VehicleParams = VehicleParams()
    scan: ScanConfig = ScanConfig()
    dt: float = 0.01


def load_sim_config(path) -> SimConfig:
    """Read vehicle and scan parameters from a ``key: value`` file.

    Vehicle keys use the :class:`VehicleParams` field names, scan keys are
    ``n_beams``, ``fov``, ``max_range``; ``dt`` sets the physics step.
    Unknown keys are rejected.
    """
    kv = read_keyvalue(path)
    veh_names = {f.name for f in fields(VehicleParams)}
    scan_names = {f.name for f in fields(ScanConfig)}
    veh, scan, dt = {}, {}, SimConfig.dt
    for key, value in kv.items():
        if key in veh_names:
            veh[key] = float(value)
        elif key in scan_names:
            scan[key] = int(value) if key == "n_beams" else float(value)
        elif key == "dt":
            dt = float(value)
        else:
            raise ValueError(f"unknown sim config key {key!r}")
    return SimConfig(VehicleParams(**veh), ScanConfig(**scan), dt)


def save_sim_config(config: SimConfig, path):
    write_keyvalue(path, {**asdict(config.vehicle), **asdict(config.scan), "dt": config.dt})


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    steer: float = 0.0
    v: float = 0.0
    yaw_rate: float = 0.0
    slip: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.steer, self.v, self.yaw, self.yaw_rate, self.slip])

    @classmethod
    def from_array(cls, a) -> "VehicleState":
        return cls(x=float(a[0]), y=float(a[1]), yaw=float(a[4]), steer=float(a[2]),
                   v=float(a[3]), yaw_rate=float(a[5]), slip=float(a[6]))


@dataclass(frozen=True)
class Control:
    steer_target: float = 0.0
    accel: float = 0.0


@dataclass(frozen=True)
class Scan:
    angles: np.ndarray
    ranges: np.ndarray


class InvalidDynamics(RuntimeError):
    """Raised when integration produces a non-finite state."""


def step_dynamics(state: VehicleState, ctrl: Control, params: VehicleParams, dt: float) -> VehicleState:
    if not 0 < dt <= 0.05:
        raise ValueError("dt must lie in (0, 0.05]")
    if not (math.isfinite(ctrl.steer_target) and math.isfinite(ctrl.accel)):
        raise ValueError("control must be finite")
    x = state.as_array()
    ok = _step_vehicle(x, ctrl.steer_target, ctrl.accel, params.as_array(), dt)
    if not ok:
        raise InvalidDynamics("non-finite state after integration")
    return VehicleState.from_array(x)


def ray_march(pose, grid: OccupancyGrid, other=None, config: ScanConfig = ScanConfig()) -> Scan:
    """Simulate a planar LiDAR at ``pose = (x, y, yaw)``.

    ``other`` is an oriented rectangle ``(cx, cy, yaw, length, width)`` or None.
    A pose outside the map returns all-zero ranges.
    """
    angles = config.angles()
    ranges = np.empty(config.n_beams)
    rect = np.array(other if other is not None else (0.0, 0.0, 0.0, 0.0, 0.0), dtype=np.float64)
    _scan(pose[0], pose[1], pose[2], *grid.kernel_args(), rect, other is not None,
          angles, config.max_range, ranges)
    return Scan(angles, ranges)


class Collision(enum.IntEnum):
    NONE = 0
    EGO_MAP = 1
    OPP_MAP = 2
    EGO_OPP = 4


@dataclass(frozen=True)
class SimWorld:
    grid: OccupancyGrid
    ego: VehicleState
    opp: VehicleState
    params: VehicleParams = VehicleParams()
    t: float = 0.0
    dt: float = 0.01
    rng_seed: int = 0
    ego_frozen: bool = False
    opp_frozen: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def footprint(state: VehicleState, params: VehicleParams):
    return (state.x, state.y, state.yaw, params.length, params.width)


def collision_flags(world: SimWorld) -> int:
    p = world.params.as_array()
    return _collision_flags(world.ego.as_array(), world.opp.as_array(), p, *world.grid.kernel_args())


def check_collision(world: SimWorld) -> Collision:
    """Most severe collision in ``world``: vehicle-vehicle before ego-map before opponent-map."""
    flags = collision_flags(world)
    for kind in (Collision.EGO_OPP, Collision.EGO_MAP, Collision.OPP_MAP):
        if flags & kind:
            return kind
    return Collision.NONE


def step_world(world: SimWorld, ego_ctrl: Control, opp_ctrl: Control):
    """Advance both vehicles by ``dt`` and freeze any vehicle involved in a collision.

    Returns ``(new_world, flags)`` where ``flags`` is the :class:`Collision`
    bitmask observed after the step.
    """
    p = world.params
    ego, opp = world.ego, world.opp
    if not world.ego_frozen:
        ego = step_dynamics(ego, ego_ctrl, p, world.dt)
    if not world.opp_frozen:
        opp = step_dynamics(opp, opp_ctrl, p, world.dt)
    new = replace(world, ego=ego, opp=opp, t=world.t + world.dt)
    flags = collision_flags(new)
    ego_hit = bool(flags & (Collision.EGO_MAP | Collision.EGO_OPP))
    opp_hit = bool(flags & (Collision.OPP_MAP | Collision.EGO_OPP))
    if ego_hit and not new.ego_frozen:
        new = replace(new, ego=replace(new.ego, v=0.0, yaw_rate=0.0), ego_frozen=True)
    if opp_hit and not new.opp_frozen:
        new = replace(new, opp=replace(new.opp, v=0.0, yaw_rate=0.0), opp_frozen=True)
    return new, flags


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _rhs(x, steer_vel, accel, p, kinematic, out):
    lf = p[P_LF]
    lr = p[P_LR]
    lwb = lf + lr
    v = x[S_V]
    delta = x[S_STEER]
    out[S_STEER] = steer_vel
    out[S_V] = accel
    if kinematic:
        beta = math.atan(lr * math.tan(delta) / lwb)
        out[S_X] = v * math.cos(x[S_YAW] + beta)
        out[S_Y] = v * math.sin(x[S_YAW] + beta)
        out[S_YAW] = v * math.tan(delta) / lwb
        out[S_YAW_RATE] = 0.0
        out[S_SLIP] = 0.0
        return
    mu = p[P_MU]
    csf = p[P_CSF]
    csr = p[P_CSR]
    h = p[P_H]
    m = p[P_M]
    inertia = p[P_I]
    r = x[S_YAW_RATE]
    beta = x[S_SLIP]
    front = G * lr - accel * h
    rear = G * lf + accel * h
    out[S_X] = v * math.cos(beta + x[S_YAW])
    out[S_Y] = v * math.sin(beta + x[S_YAW])
    out[S_YAW] = r
    out[S_YAW_RATE] = (-mu * m / (v * inertia * lwb) * (lf * lf * csf * front + lr * lr * csr * rear) * r
                       + mu * m / (inertia * lwb) * (lr * csr * rear - lf * csf * front) * beta
                       + mu * m / (inertia * lwb) * lf * csf * front * delta)
    out[S_SLIP] = ((mu / (v * v * lwb) * (csr * rear * lr - csf * front * lf) - 1.0) * r
                   - mu / (v * lwb) * (csr * rear + csf * front) * beta
                   + mu / (v * lwb) * csf * front * delta)


@njit(cache=True)
def _constrain_inputs(x, steer_target, accel, p, dt):
    max_steer = p[P_MAX_STEER]
    rate = p[P_MAX_STEER_RATE]
    if steer_target > max_steer:
        steer_target = max_steer
    elif steer_target < -max_steer:
        steer_target = -max_steer
    steer_vel = (steer_target - x[S_STEER]) / dt
    if steer_vel > rate:
        steer_vel = rate
    elif steer_vel < -rate:
        steer_vel = -rate
    # friction circle: lateral demand eats into longitudinal grip
    a_lat = x[S_V] * x[S_YAW_RATE]
    grip = p[P_MU] * G
    a_lim = math.sqrt(max(grip * grip - a_lat * a_lat, 0.0))
    if a_lim > p[P_MAX_ACCEL]:
        a_lim = p[P_MAX_ACCEL]
    if accel > a_lim:
        accel = a_lim
    elif accel < -a_lim:
        accel = -a_lim
    if x[S_V] <= 0.0 and accel < 0.0:
        accel = 0.0
    if x[S_V] >= p[P_V_MAX] and accel > 0.0:
        accel = 0.0
    return steer_vel, accel


@njit(cache=True)
def _rk4(x, steer_vel, accel, p, dt, kinematic):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    _rhs(x, steer_vel, accel, p, kinematic, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _rhs(tmp, steer_vel, accel, p, kinematic, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _rhs(tmp, steer_vel, accel, p, kinematic, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    _rhs(tmp, steer_vel, accel, p, kinematic, k4)
    for i in range(n):
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _step_vehicle(x, steer_target, accel, p, dt):
    """Advance state ``x`` in place by one step. Returns False on a non-finite result."""
    steer_vel, accel = _constrain_inputs(x, steer_target, accel, p, dt)
    kinematic = x[S_V] < p[P_V_SWITCH]
    _rk4(x, steer_vel, accel, p, dt, kinematic)
    max_steer = p[P_MAX_STEER]
    if x[S_STEER] > max_steer:
        x[S_STEER] = max_steer
    elif x[S_STEER] < -max_steer:
        x[S_STEER] = -max_steer
    if x[S_V] < 0.0:
        x[S_V] = 0.0
    elif x[S_V] > p[P_V_MAX]:
        x[S_V] = p[P_V_MAX]
    if kinematic:
        lwb = p[P_LF] + p[P_LR]
        x[S_YAW_RATE] = x[S_V] * math.tan(x[S_STEER]) / lwb
        x[S_SLIP] = math.atan(p[P_LR] * math.tan(x[S_STEER]) / lwb)
    x[S_YAW] = math.atan2(math.sin(x[S_YAW]), math.cos(x[S_YAW]))
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def _ray_rect(px, py, dx, dy, rect):
    """Distance along unit ray ``(dx, dy)`` to oriented rectangle ``rect``; inf if missed."""
    cx, cy, yaw, length, width = rect[0], rect[1], rect[2], rect[3], rect[4]
    c = math.cos(yaw)
    s = math.sin(yaw)
    ox = c * (px - cx) + s * (py - cy)
    oy = -s * (px - cx) + c * (py - cy)
    rx = c * dx + s * dy
    ry = -s * dx + c * dy
    half = (0.5 * length, 0.5 * width)
    o = (ox, oy)
    r = (rx, ry)
    tmin = -np.inf
    tmax = np.inf
    for k in range(2):
        if abs(r[k]) < 1e-12:
            if abs(o[k]) > half[k]:
                return np.inf
        else:
            t1 = (-half[k] - o[k]) / r[k]
            t2 = (half[k] - o[k]) / r[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
    if tmax < tmin or tmax < 0.0:
        return np.inf
    if tmin < 0.0:
        return 0.0
    return tmin


@njit(cache=True)
def _scan(x, y, yaw, dist, res, ox, oy, oth, rect, has_rect, angles, max_range, out):
    if _grid_distance(dist, res, ox, oy, oth, x, y) < 0.5 * res:
        for i in range(angles.shape[0]):
            out[i] = 0.0
        return False
    half_res = 0.5 * res
    for i in range(angles.shape[0]):
        a = yaw + angles[i]
        dx = math.cos(a)
        dy = math.sin(a)
        t = 0.0
        hit = max_range
        while t < max_range:
            d = _grid_distance(dist, res, ox, oy, oth, x + t * dx, y + t * dy)
            if d < half_res:
                hit = t
                break
            t += d if d > half_res else half_res
        if has_rect:
            tv = _ray_rect(x, y, dx, dy, rect)
            if tv < hit:
                hit = tv
        if hit > max_range:
            hit = max_range
        out[i] = hit
    return True


@njit(cache=True)
def _map_hit(x, p, dist, res, ox, oy, oth):
    """True when any of 8 footprint boundary samples lies in an occupied cell."""
    c = math.cos(x[S_YAW])
    s = math.sin(x[S_YAW])
    hl = 0.5 * p[P_LENGTH]
    hw = 0.5 * p[P_WIDTH]
    for i in range(-1, 2):
        for j in range(-1, 2):
            if i == 0 and j == 0:
                continue
            lx = i * hl
            ly = j * hw
            wx = x[S_X] + c * lx - s * ly
            wy = x[S_Y] + s * lx + c * ly
            if _grid_distance(dist, res, ox, oy, oth, wx, wy) < 0.5 * res:
                return True
    return False


@njit(cache=True)
def _rect_overlap(ax, ay, ayaw, bx, by, byaw, length, width):
    """Separating-axis test for two equal oriented rectangles; touching counts as separate."""
    hl = 0.5 * length
    hw = 0.5 * width
    axes = np.empty((4, 2))
    axes[0, 0] = math.cos(ayaw)
    axes[0, 1] = math.sin(ayaw)
    axes[1, 0] = -math.sin(ayaw)
    axes[1, 1] = math.cos(ayaw)
    axes[2, 0] = math.cos(byaw)
    axes[2, 1] = math.sin(byaw)
    axes[3, 0] = -math.sin(byaw)
    axes[3, 1] = math.cos(byaw)
    tx = bx - ax
    ty = by - ay
    for k in range(4):
        nx = axes[k, 0]
        ny = axes[k, 1]
        ra = hl * abs(axes[0, 0] * nx + axes[0, 1] * ny) + hw * abs(axes[1, 0] * nx + axes[1, 1] * ny)
        rb = hl * abs(axes[2, 0] * nx + axes[2, 1] * ny) + hw * abs(axes[3, 0] * nx + axes[3, 1] * ny)
        if abs(tx * nx + ty * ny) >= ra + rb:
            return False
    return True


@njit(cache=True)
def _collision_flags(ego, opp, p, dist, res, ox, oy, oth):
    flags = 0
    if _map_hit(ego, p, dist, res, ox, oy, oth):
        flags |= 1
    if _map_hit(opp, p, dist, res, ox, oy, oth):
        flags |= 2
    if _rect_overlap(ego[S_X], ego[S_Y], ego[S_YAW], opp[S_X], opp[S_Y], opp[S_YAW],
                     p[P_LENGTH], p[P_WIDTH]):
        flags |= 4
    return flags
