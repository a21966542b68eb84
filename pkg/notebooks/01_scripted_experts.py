"""
Scripted experts on the two-lane loop
=====================================

Two personas drive the same track. The aggressive one overtakes slow cars,
the yielding one stays behind them. Both are collision-free by construction,
which the counts below confirm.
"""
import numpy as np

from magail.evaluation import derive, emergent
from magail.laneworld import PERSONAS, TrackSpec, run_expert

track = TrackSpec()
print(f"track length {track.total_length:.0f} m, {track.lanes} lanes of {track.lane_width} m")

# %% one episode per persona from the same seed
for name, persona in PERSONAS.items():
    traj = run_expert(track, persona, 500, seed=4)
    kin = derive(traj)
    print(f"{name:>10}: mean speed {kin.speed.mean():5.2f} m/s, "
          f"max |turn rate| {np.abs(kin.turn_rate).max():.3f} rad/s, "
          f"lane changes {traj.count('lane_change')}, collisions {traj.count('collision')}")

# %% the emergent metrics over a handful of seeds
for name, persona in PERSONAS.items():
    runs = [run_expert(track, persona, 500, seed=s) for s in range(10)]
    print(name, {k: round(v, 3) for k, v in emergent(runs).items()})
