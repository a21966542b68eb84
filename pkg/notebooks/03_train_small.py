"""
A short adversarial imitation run
=================================

Behavioural cloning first, then a few adversarial iterations with the
dispersion penalty on. Sizes are cut down so this finishes in about a minute.
"""
import numpy as np

from magail.laneworld import PERSONAS, TrackSpec, record_demos
from magail.training import TrainConfig, train

track = TrackSpec()
demos = record_demos(track, list(PERSONAS.values()), 6, 50, seed=0).trajectories

cfg = TrainConfig(iterations=10, batch_size=4, episode_len=50, bc_epochs=40, embed_dim=16,
                  hidden=32, seed=1)
result = train(cfg, demos, track)
print(f"BC loss {result.bc_losses[0]:.4f} -> {result.bc_losses[-1]:.4f}")

# %% per-iteration log: mean critic score and mean local-memory dispersion
metrics = np.array(result.metrics)
for row in metrics:
    print(f"iter {int(row[0]):3d}  score {row[1]: .4f}  dispersion {row[2]:.2e}  off-road {int(row[4])}")

# %% trust-region bookkeeping
for it, obj, kl, steps, reverted, backtracked, surr, vloss in result.updates:
    print(f"iter {it:3d}  critic gap {obj:.4f}  kl {kl:.4f}  inner steps {steps}")
