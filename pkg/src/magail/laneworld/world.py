from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..numerics import stream
from .track import TrackSpec

A_MAX = 4.0
B_MAX = 8.0
DRAG = 0.02
V_MAX = 60.0
STEER_GAIN = 0.2
DT = 0.1
HARD_BRAKE = -3.0
COLLISION_LONG = 4.0
COLLISION_LAT = 2.0
COLLISION_DAMAGE = 100.0
MIN_GAP = 20.0

N_RAYS = 19
RAY_ANGLES = np.deg2rad(np.linspace(-90.0, 90.0, N_RAYS))
RANGE_MAX = 200.0
FRONT_MAX = 200.0
BACK_MAX = 50.0
NO_LEADER_GAP = 1e6

FEATURE_DIM = 25
ACTION_DIM = 3
# angle, track position, speed x, speed y, 19 ranges, front, back
IDX_ANGLE, IDX_TRACKPOS, IDX_SPEED_X, IDX_SPEED_Y = 0, 1, 2, 3
IDX_RANGES = slice(4, 4 + N_RAYS)
IDX_FRONT, IDX_BACK = 4 + N_RAYS, 5 + N_RAYS
FEATURE_LOW = np.array([-math.pi, -np.inf, -np.inf, -np.inf] + [0.0] * N_RAYS + [0.0, 0.0])
FEATURE_HIGH = np.array([math.pi, np.inf, np.inf, np.inf] + [RANGE_MAX] * N_RAYS
                        + [FRONT_MAX, BACK_MAX])
# Typical magnitudes, used by the state embedding to normalise inputs.
FEATURE_SCALE = np.array([0.5, 1.0, 80.0, 10.0] + [50.0] * N_RAYS + [100.0, 25.0])

EVENTS = ("lane_change", "collision", "offroad", "hard_brake")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Action:
    steering: float
    acceleration: float
    braking: float

    def __post_init__(self):
        object.__setattr__(self, "steering", float(np.clip(self.steering, -1.0, 1.0)))
        object.__setattr__(self, "acceleration", float(np.clip(self.acceleration, 0.0, 1.0)))
        object.__setattr__(self, "braking", float(np.clip(self.braking, 0.0, 1.0)))

    @classmethod
    def from_array(cls, a) -> "Action":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def to_array(self) -> np.ndarray:
        return np.array([self.steering, self.acceleration, self.braking])


@dataclass(frozen=True)
class NPC:
    lane: int
    s: float
    speed: float


@dataclass(frozen=True)
class WorldState:
    spec: TrackSpec
    s: float
    d: float
    psi: float
    v_x: float
    v_y: float
    npcs: tuple
    damage: float = 0.0
    step: int = 0
    dt: float = DT
    contacts: frozenset = frozenset()

    @property
    def lane(self) -> int:
        return self.spec.lane_index(self.d)


def _wrap(x: float, length: float) -> float:
    """Signed distance in ``(-L/2, L/2]`` on a loop of length ``L``."""
    return (x + length / 2.0) % length - length / 2.0


def reset(spec: TrackSpec, seed: int) -> WorldState:
    rng = stream(seed, "laneworld", "reset")
    L = spec.total_length
    ego_lane = int(rng.integers(spec.lanes))
    v0 = float(rng.uniform(5.0, 15.0))
    lo, hi = spec.npc_speed_range
    npcs = []
    for lane in range(spec.lanes):
        lane_speed = float(rng.uniform(lo, hi))
        # lane-wide speed keeps NPCs of one lane from running into each other
        taken = [0.0] if lane == ego_lane else []
        tries = 0
        while sum(1 for n in npcs if n.lane == lane) < spec.npcs_per_lane:
            tries += 1
            if tries > 10_000:
                raise ValueError("track too short for the requested traffic density")
            cand = float(rng.uniform(0.0, L))
            if all(abs(_wrap(cand - t, L)) >= MIN_GAP for t in taken) and abs(_wrap(cand, L)) >= MIN_GAP:
                taken.append(cand)
                npcs.append(NPC(lane, cand, lane_speed))
    npcs.sort(key=lambda n: (n.lane, n.s))
    return WorldState(spec, 0.0, spec.lane_center(ego_lane), 0.0, v0, 0.0, tuple(npcs))


def step(w: WorldState, a: Action):
    """Advance one ``dt``. Returns ``(next_state, events)``."""
    spec, dt = w.spec, w.dt
    L = spec.total_length
    v0 = w.v_x
    accel = a.acceleration * A_MAX - a.braking * B_MAX - DRAG * v0
    v1 = min(max(v0 + accel * dt, 0.0), V_MAX)
    kappa = spec.curvature_at(w.s)
    psi_dot = STEER_GAIN * a.steering * v0 - kappa * v0 * math.cos(w.psi) / (1.0 - kappa * w.d)
    psi1 = _wrap(w.psi + psi_dot * dt, 2.0 * math.pi)
    d1 = w.d + v1 * math.sin(psi1) * dt
    s1 = (w.s + v1 * math.cos(psi1) * dt / (1.0 - kappa * w.d)) % L
    if not all(math.isfinite(x) for x in (s1, d1, psi1, v1)):
        raise SimulationError(f"non-finite world state at step {w.step + 1}")
    npcs = tuple(replace(n, s=(n.s + n.speed * dt) % L) for n in w.npcs)

    events = set()
    damage = w.damage
    contacts = set()
    for j, n in enumerate(npcs):
        if (abs(_wrap(n.s - s1, L)) < COLLISION_LONG
                and abs(d1 - spec.lane_center(n.lane)) < COLLISION_LAT):
            contacts.add(j)
            if j not in w.contacts:
                events.add("collision")
                damage += COLLISION_DAMAGE
                v1 = n.speed
    if (v1 - v0) / dt < HARD_BRAKE:
        events.add("hard_brake")
    if spec.lane_index(d1) != spec.lane_index(w.d):
        events.add("lane_change")
    if abs(d1) > spec.half_width + 1.0:
        events.add("offroad")

    nxt = WorldState(spec, s1, d1, psi1, v1, v1 * math.sin(psi1), npcs, damage,
                     w.step + 1, dt, frozenset(contacts))
    return nxt, frozenset(events)


def lane_traffic(w: WorldState, lane: int):
    """``(gap_ahead, speed_ahead, gap_behind, speed_behind)`` for one lane.

    Gaps are centre-to-centre along the track; a missing car gives
    ``NO_LEADER_GAP`` and speed 0.
    """
    L = w.spec.total_length
    ahead, behind = (NO_LEADER_GAP, 0.0), (NO_LEADER_GAP, 0.0)
    for n in w.npcs:
        if n.lane != lane:
            continue
        fwd = (n.s - w.s) % L
        back = (w.s - n.s) % L
        if fwd < ahead[0]:
            ahead = (fwd, n.speed)
        if back < behind[0]:
            behind = (back, n.speed)
    return ahead[0], ahead[1], behind[0], behind[1]


def _ray_ranges(spec: TrackSpec, d: float, psi: float, kappa: float) -> np.ndarray:
    """Distances from the car to the road edges along 19 rays spanning +-90 degrees.

    The road is treated as locally constant-curvature: edges are straight
    lines for ``kappa == 0`` and concentric circles otherwise.
    """
    W = spec.half_width
    phi = psi + RAY_ANGLES
    uy = np.sin(phi)
    out = np.full(N_RAYS, RANGE_MAX)
    if abs(d) >= W:
        return np.zeros(N_RAYS)
    if abs(kappa) < 1e-9:
        left = np.where(uy > 1e-12, (W - d) / np.where(uy > 1e-12, uy, 1.0), np.inf)
        right = np.where(uy < -1e-12, (W + d) / np.where(uy < -1e-12, -uy, 1.0), np.inf)
        out = np.minimum(out, np.minimum(left, right))
        return np.clip(out, 0.0, RANGE_MAX)
    sign = 1.0 if kappa > 0 else -1.0
    R = 1.0 / abs(kappa)
    # mirror right turns onto left turns; centre of curvature at (0, R - d')
    dd, uy = sign * d, sign * uy
    cy = R - dd
    proj = uy * cy
    c2 = cy * cy
    for radius in (R - W, R + W):
        disc = proj * proj - c2 + radius * radius
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t1 = proj - root
        t2 = proj + root
        t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
        out = np.minimum(out, np.where(ok, t, np.inf))
    return np.clip(out, 0.0, RANGE_MAX)


def features(w: WorldState) -> np.ndarray:
    spec = w.spec
    f = np.empty(FEATURE_DIM)
    f[IDX_ANGLE] = min(max(w.psi, -math.pi), math.pi)
    f[IDX_TRACKPOS] = w.d / spec.lane_width
    f[IDX_SPEED_X] = w.v_x * 3.6
    f[IDX_SPEED_Y] = w.v_y * 3.6
    f[IDX_RANGES] = _ray_ranges(spec, w.d, w.psi, spec.curvature_at(w.s))
    front, _, back, _ = lane_traffic(w, w.lane)
    f[IDX_FRONT] = min(front, FRONT_MAX)
    f[IDX_BACK] = min(back, BACK_MAX)
    return f


def raw_record(w: WorldState) -> tuple:
    """Raw quantities needed by the evaluation metrics, in ``RAW_FIELDS`` order."""
    front, front_speed, _, _ = lane_traffic(w, w.lane)
    return (w.s, w.d, w.psi, w.v_x, front, front_speed, w.damage)


RAW_FIELDS = ("s", "d", "psi", "v_x", "front_gap", "front_speed", "damage")
