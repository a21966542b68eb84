"""Wasserstein critic over (augmented state, action) pairs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import affine
from .numerics import OptState, ParamStore, ad, clip_params, forward_backward, rmsprop_step

CLIP = 0.01


def init_critic(store: ParamStore, in_dim: int, rng, hidden=(64, 64), clip: float = CLIP) -> None:
    sizes = (in_dim, *hidden, 1)
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        store.add(f"critic/l{i}/w", np.clip(w, -clip, clip))
        store.add(f"critic/l{i}/b", np.zeros(n_out))


def critic_names(p) -> list[str]:
    return [n for n in p if n.startswith("critic/")]


def critic_score(p, s_aug, a):
    """Scalar score per (state, action) pair; batched over leading axes."""
    x = ad.concat([s_aug, a], axis=-1)
    n_layers = sum(1 for n in p if n.startswith("critic/") and n.endswith("/w"))
    width = np.shape(ad.value(p["critic/l1/w"]))[0]
    if np.shape(ad.value(x))[-1] != width:
        raise ad.ShapeError(f"critic_score: expected input width {width}, got {np.shape(ad.value(x))}")
    for i in range(1, n_layers):
        x = ad.tanh(affine(p, f"critic/l{i}", x))
    out = affine(p, f"critic/l{n_layers}", x)
    return ad.reshape(out, np.shape(ad.value(out))[:-1])


@dataclass
class CriticBatch:
    s_aug: np.ndarray
    actions: np.ndarray
    source: str

    def __post_init__(self):
        self.s_aug = np.asarray(self.s_aug, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.s_aug.shape[:-1] != self.actions.shape[:-1]:
            raise ValueError("critic batch: states and actions are not matched")
        if self.s_aug.size == 0:
            raise ValueError(f"empty {self.source} critic batch")

    def flat(self):
        return (self.s_aug.reshape(-1, self.s_aug.shape[-1]),
                self.actions.reshape(-1, self.actions.shape[-1]))


def wasserstein_objective(p, expert: CriticBatch, policy: CriticBatch):
    se, ae = expert.flat()
    sp, ap = policy.flat()
    return ad.sub(ad.mean(critic_score(p, se, ae)), ad.mean(critic_score(p, sp, ap)))


def critic_update(params: ParamStore, expert: CriticBatch, policy: CriticBatch,
                  opt: OptState, clip: float = CLIP) -> float:
    """One RMSprop ascent step on ``E_expert[D] - E_policy[D]`` then weight clipping.

    Returns the objective evaluated before the step.
    """
    names = critic_names(params)
    params.zero_grad()
    objective = forward_backward(lambda q: ad.neg(wasserstein_objective(q, expert, policy)), params)
    rmsprop_step(params, opt, names)
    clip_params(params, clip, names)
    return -float(objective)
