"""
Evaluating a policy against the demonstrations
==============================================

The evaluation compares pooled kinematic distributions with histogram KL
divergences and counts emergent events. The same tools applied to a fresh
expert run give a small baseline.
"""
from magail.evaluation import report
from magail.laneworld import PERSONAS, TrackSpec, record_demos
from magail.training import Policy, TrainConfig, simulate, train

track = TrackSpec()
demos = record_demos(track, list(PERSONAS.values()), 6, 50, seed=0).trajectories

# %% the same experts on unseen seeds
again = record_demos(track, list(PERSONAS.values()), 6, 50, seed=1).trajectories
print(report(again, demos).to_table("expert"))

# %% a behaviourally cloned policy
cfg = TrainConfig(iterations=0, batch_size=4, episode_len=50, bc_epochs=60, embed_dim=16,
                  hidden=32, seed=2)
res = train(cfg, demos, track)
policy = Policy(cfg, res.params, res.global_state)
runs = simulate(policy, track, episodes=8, steps=50, seed=0, greedy=True)
print(report(runs, demos).to_table("bc"))
