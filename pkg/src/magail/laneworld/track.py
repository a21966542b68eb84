from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TrackSpec:
    """A closed loop of constant-curvature segments, driven in Frenet coordinates.

    ``segments`` holds ``(length_m, curvature_per_m)`` pairs; positive curvature
    turns left. Lane 0 is the rightmost lane; lateral offset ``d`` is measured
    from the road centre line, positive to the left.
    """

    segments: tuple = ((300.0, 0.0), (160.0, 1 / 160), (260.0, 0.0),
                       (160.0, -1 / 160), (320.0, 0.0), (200.0, 1 / 250))
    lanes: int = 2
    lane_width: float = 4.0
    npcs_per_lane: int = 5
    npc_speed_range: tuple = (8.0, 13.0)
    _cum: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        if not segs or any(length <= 0 for length, _ in segs):
            raise ValueError("track segments need positive lengths")
        if self.lanes < 2:
            raise ValueError("at least two lanes are required")
        if self.lane_width <= 0:
            raise ValueError("lane width must be positive")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "npc_speed_range", tuple(float(v) for v in self.npc_speed_range))
        object.__setattr__(self, "_cum", tuple(np.cumsum([length for length, _ in segs])))

    @property
    def total_length(self) -> float:
        return float(self._cum[-1])

    @property
    def half_width(self) -> float:
        return self.lanes * self.lane_width / 2.0

    def curvature_at(self, s: float) -> float:
        s = s % self.total_length
        i = bisect.bisect_right(self._cum, s)
        return self.segments[min(i, len(self.segments) - 1)][1]

    def lane_index(self, d: float) -> int:
        i = int(np.floor((d + self.half_width) / self.lane_width))
        return min(max(i, 0), self.lanes - 1)

    def lane_center(self, lane: int) -> float:
        return -self.half_width + (lane + 0.5) * self.lane_width

    def to_dict(self) -> dict:
        return {"segments": [list(s) for s in self.segments], "lanes": self.lanes,
                "lane_width": self.lane_width, "npcs_per_lane": self.npcs_per_lane,
                "npc_speed_range": list(self.npc_speed_range),
                "total_length": self.total_length}

    @classmethod
    def from_dict(cls, data: dict) -> "TrackSpec":
        kw = {k: data[k] for k in ("lanes", "lane_width", "npcs_per_lane") if k in data}
        if "segments" in data:
            kw["segments"] = tuple(tuple(s) for s in data["segments"])
        if "npc_speed_range" in data:
            kw["npc_speed_range"] = tuple(data["npc_speed_range"])
        return cls(**kw)
