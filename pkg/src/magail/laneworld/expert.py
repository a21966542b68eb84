"""Scripted expert drivers standing in for human demonstrators.

Each persona runs the same rule set with different parameters: PD lane
keeping, speed tracking with car following, and an overtaking rule. The
yielding persona brakes early behind slower traffic; the aggressive persona
tailgates and overtakes through the left lane, then returns to the right.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import (A_MAX, B_MAX, DRAG, IDX_ANGLE, IDX_FRONT, IDX_SPEED_X,
                    IDX_TRACKPOS, STEER_GAIN, Action, WorldState, lane_traffic)

K_PSI = 3.0          # heading-error feedback, 1/s
K_LAT = 0.8          # lateral-offset feedback, 1/s
PSI_MAX = 0.08       # heading used for lane changes, rad (scaled by persona gain)
K_SPEED = 0.8        # speed tracking, 1/s
K_GAP = 0.4          # gap tracking, 1/s
ACCEL_LIMIT = 2.0    # m/s^2
DECEL_LIMIT = -2.8   # m/s^2, comfortable braking stays above the hard-brake line
EMERGENCY_GAP = 8.0  # m


@dataclass(frozen=True)
class Persona:
    name: str
    target_speed: float
    yield_gap: float
    overtake_threshold: float
    lane_change_gain: float
    yields: bool = False

    def __post_init__(self):
        for field_name in ("target_speed", "yield_gap", "overtake_threshold", "lane_change_gain"):
            if getattr(self, field_name) <= 0:
                raise ValueError(f"persona {self.name}: {field_name} must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "target_speed": self.target_speed,
                "yield_gap": self.yield_gap, "overtake_threshold": self.overtake_threshold,
                "lane_change_gain": self.lane_change_gain, "yields": self.yields}


AGGRESSIVE = Persona("aggressive", target_speed=22.0, yield_gap=12.0,
                     overtake_threshold=45.0, lane_change_gain=1.3)
YIELDING = Persona("yielding", target_speed=17.0, yield_gap=30.0,
                   overtake_threshold=15.0, lane_change_gain=0.8, yields=True)
PERSONAS = {p.name: p for p in (AGGRESSIVE, YIELDING)}


@dataclass(frozen=True)
class ExpertState:
    target_lane: int | None = None
    home_lane: int | None = None


def _clear(w: WorldState | None, lane: int, v: float) -> bool:
    if w is None:
        return True
    ahead, v_ahead, behind, v_behind = lane_traffic(w, lane)
    need_ahead = 25.0 + 2.0 * max(0.0, v - v_ahead)
    need_behind = 15.0 + 3.0 * max(0.0, v_behind - v)
    return ahead > need_ahead and behind > need_behind


def _accel_to_action(a_des: float, v: float) -> tuple[float, float]:
    net = a_des + DRAG * v
    if net >= 0:
        return min(net / A_MAX, 1.0), 0.0
    return 0.0, min(-net / B_MAX, 1.0)


def expert_action(p: Persona, f: np.ndarray, ctrl: ExpertState | None = None,
                  world: WorldState | None = None) -> tuple[Action, ExpertState]:
    """One control decision from a feature vector.

    ``world`` grants the privileged look at adjacent lanes (and road
    curvature) that a human driver gets from mirrors and sight; without it the
    adjacent lane is assumed clear and the road straight.
    """
    ctrl = ctrl or ExpertState()
    lane_width = world.spec.lane_width if world is not None else 4.0
    lanes = world.spec.lanes if world is not None else 2
    half = lanes * lane_width / 2.0
    d = float(f[IDX_TRACKPOS]) * lane_width
    psi = float(f[IDX_ANGLE])
    v = float(f[IDX_SPEED_X]) / 3.6
    front = float(f[IDX_FRONT])
    lane = min(max(int(math.floor((d + half) / lane_width)), 0), lanes - 1)
    center = lambda j: -half + (j + 0.5) * lane_width  # noqa: E731

    target = ctrl.target_lane if ctrl.target_lane is not None else lane
    home = ctrl.home_lane if ctrl.home_lane is not None else (0 if not p.yields else lane)
    settled = abs(d - center(target)) < 0.5
    if settled and front < p.overtake_threshold and target + 1 < lanes and _clear(world, target + 1, v):
        target += 1
    elif settled and target > home and front >= p.overtake_threshold and _clear(world, target - 1, v):
        target -= 1
    ctrl = ExpertState(target, home)

    # lateral: heading reference from offset error, heading loop, curvature feed-forward
    psi_max = PSI_MAX * p.lane_change_gain
    psi_ref = float(np.clip(K_LAT * (center(target) - d) / max(v, 5.0), -psi_max, psi_max))
    kappa = world.spec.curvature_at(world.s) if world is not None else 0.0
    yaw = K_PSI * (psi_ref - psi) + kappa * v * math.cos(psi) / (1.0 - kappa * d)
    steer = yaw / (STEER_GAIN * max(v, 1.0))

    # longitudinal: follow the leader of the target lane, never ignore a close one ahead
    v_des = p.target_speed
    if world is not None:
        lead_gap, lead_v, _, _ = lane_traffic(world, target)
        if target != lane:
            cur_gap, cur_v, _, _ = lane_traffic(world, lane)
            if cur_gap < lead_gap and cur_gap < EMERGENCY_GAP + 4.0:
                lead_gap, lead_v = cur_gap, cur_v
    else:
        # no view of traffic speeds: assume the leader matches our speed
        lead_gap, lead_v = front, v
        if target != lane and front >= EMERGENCY_GAP + 4.0:
            lead_gap = math.inf
    if lead_gap < 150.0:
        v_des = min(v_des, lead_v + K_GAP * (lead_gap - (p.yield_gap + 5.0)))
    a_des = float(np.clip(K_SPEED * (v_des - v), DECEL_LIMIT, ACCEL_LIMIT))
    if lead_gap < EMERGENCY_GAP:
        a_des = -B_MAX
    if p.yields and front < p.yield_gap:
        a_des = min(a_des, -(0.5 + DRAG * v) - 2.0 * (1.0 - front / p.yield_gap))
    accel, brake = _accel_to_action(a_des, v)
    return Action(steer, accel, brake), ctrl
