"""
Reading and writing an attention memory
=======================================

A memory holds ``k`` slots of width ``l``. A read controller turns the input
into a query, soft attention over the slots gives the weights ``alpha`` and
the readout is the weighted row mix. A write controller then blends its
output into every slot in proportion to ``alpha``.
"""
import numpy as np

from magail import memory as mem
from magail.numerics import ParamStore

rng = np.random.default_rng(0)

# %% attention is a softmax of slot-query dot products
M = rng.normal(size=(5, 3))
q = rng.normal(size=3)
alpha = mem.attend(M, q)
print("alpha", np.round(alpha, 3), "sum", alpha.sum())
print("readout", np.round(mem.output(M, alpha), 3))

# %% a one-hot write replaces exactly one slot
one_hot = np.eye(5)[2]
w = np.array([9.0, 9.0, 9.0])
print(mem.convex_update(M, one_hot, w))

# %% a fresh memory starts at zero, so the first read is uniform
store = ParamStore()
mem.init_params(store, "demo", 3, rng)
state = mem.zero_state(mem.MemoryConfig(slots=5, embed_dim=3))
for t in range(4):
    readout, state = mem.step(state, rng.normal(size=3), store.view(), "demo")
    print(t, "entropy", round(float(mem.entropy(readout.alpha)), 4), "ln k", round(np.log(5), 4))

# Every slot is written with the same vector and starts equal, so the slots
# never separate and the weights stay uniform. The memory then acts as a
# running average of the write controller's output.
