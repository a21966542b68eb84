"""State embedding, memory-augmented state, Gaussian policy, BC and the SG baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import memory as mem
from .laneworld import world as lw
from .numerics import AdamState, ParamStore, ad, adam_step, forward_backward

LOG_STD_MIN = math.log(1e-3)
LOG_STD_MAX = 0.0
SIGMA_MIN = 1e-3
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Network sizes and which memories are active."""

    embed_dim: int = 32
    hidden: int = 64
    feature_dim: int = lw.FEATURE_DIM
    action_dim: int = lw.ACTION_DIM
    local_slots: int = 100
    global_slots: int = 800
    use_local: bool = True
    use_global: bool = True

    @property
    def aug_dim(self) -> int:
        return 3 * self.embed_dim

    def local_config(self) -> mem.MemoryConfig:
        return mem.MemoryConfig(self.local_slots, self.embed_dim)

    def global_config(self) -> mem.MemoryConfig:
        return mem.MemoryConfig(self.global_slots, self.embed_dim)


def _dense(store, name, n_in, n_out, rng, scale=1.0):
    bound = scale / math.sqrt(n_in)
    store.add(f"{name}/w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{name}/b", np.zeros(n_out))


def affine(p, name, x):
    return ad.add(ad.matmul(x, p[f"{name}/w"]), p[f"{name}/b"])


def init_embed(store: ParamStore, spec: ModelSpec, rng) -> None:
    _dense(store, "embed/l1", spec.feature_dim, spec.hidden, rng)
    _dense(store, "embed/l2", spec.hidden, spec.embed_dim, rng)


INIT_STD = (0.02, 0.25, 0.25)


def init_policy(store: ParamStore, spec: ModelSpec, rng, std=INIT_STD) -> None:
    """``std`` is the initial per-dimension exploration scale before squashing."""
    _dense(store, "policy/l1", spec.aug_dim, spec.hidden, rng)
    _dense(store, "policy/l2", spec.hidden, spec.hidden, rng)
    _dense(store, "policy/mean", spec.hidden, spec.action_dim, rng, scale=0.1)
    store.add("policy/log_std", np.log(np.broadcast_to(np.asarray(std, dtype=np.float64),
                                                       (spec.action_dim,))))
    _dense(store, "policy/value/l1", spec.aug_dim, spec.hidden, rng)
    _dense(store, "policy/value/out", spec.hidden, 1, rng, scale=0.1)


def init_memories(store: ParamStore, spec: ModelSpec, rng) -> None:
    mem.init_params(store, "memL", spec.embed_dim, rng)
    mem.init_params(store, "memG", spec.embed_dim, rng)


def embed(p, f):
    """Feature vectors ``[..., 25]`` to state embeddings ``[..., l]`` in ``(-1, 1)``."""
    if np.shape(ad.value(f))[-1] != lw.FEATURE_DIM:
        raise ad.ShapeError(f"embed: expected {lw.FEATURE_DIM} features, got {np.shape(ad.value(f))}")
    if not np.all(np.isfinite(ad.value(f))):
        raise ValueError("embed: non-finite features")
    x = ad.div(f, lw.FEATURE_SCALE)
    h = ad.tanh(affine(p, "embed/l1", x))
    return ad.tanh(affine(p, "embed/l2", h))


def augment(s_embed, m_local, m_global):
    dims = {np.shape(ad.value(v))[-1] for v in (s_embed, m_local, m_global)}
    if len(dims) != 1:
        raise ad.ShapeError(
            f"augment: parts have different sizes {[np.shape(ad.value(v)) for v in (s_embed, m_local, m_global)]}")
    return ad.concat([s_embed, m_local, m_global], axis=-1)


def split_augmented(s_aug, embed_dim: int):
    return tuple(ad.getitem(s_aug, (Ellipsis, slice(i * embed_dim, (i + 1) * embed_dim)))
                 for i in range(3))


def log_std(p):
    return ad.clip(p["policy/log_std"], LOG_STD_MIN, LOG_STD_MAX)


def policy_mean(p, s_aug):
    h = ad.tanh(affine(p, "policy/l1", s_aug))
    h = ad.tanh(affine(p, "policy/l2", h))
    return affine(p, "policy/mean", h)


def value_head(p, s_aug):
    h = ad.tanh(affine(p, "policy/value/l1", s_aug))
    out = affine(p, "policy/value/out", h)
    return ad.reshape(out, np.shape(ad.value(out))[:-1])


def policy_forward(p, s_aug):
    """``(mean, std, value)`` for augmented states of width ``3l``."""
    width = np.shape(ad.value(p["policy/l1/w"]))[0]
    if np.shape(ad.value(s_aug))[-1] != width:
        raise ad.ShapeError(f"policy_forward: expected width {width}, got {np.shape(ad.value(s_aug))}")
    return policy_mean(p, s_aug), ad.exp(log_std(p)), value_head(p, s_aug)


def gaussian_log_prob(u, mean, logstd):
    """Diagonal Gaussian log density of the pre-squash sample ``u`` (summed over dims)."""
    z = ad.mul(ad.sub(u, mean), ad.exp(ad.neg(logstd)))
    per_dim = ad.sub(ad.mul(ad.square(z), -0.5), ad.add(logstd, HALF_LOG_2PI))
    return ad.sum(per_dim, axis=-1)


def squash(u):
    """Map unbounded samples onto ``[steer in [-1,1], accel in [0,1], brake in [0,1]]``."""
    steer = ad.tanh(ad.getitem(u, (Ellipsis, slice(0, 1))))
    pedals = ad.sigmoid(ad.getitem(u, (Ellipsis, slice(1, 3))))
    return ad.concat([steer, pedals], axis=-1)


def sample_action(mean, std, rng):
    """Draw ``u ~ N(mean, std)``; returns ``(action, log_prob, u)``.

    ``log_prob`` is the Gaussian density of ``u`` before squashing; the same
    convention is used by every ratio computed during policy updates.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    u = mean + std * rng.standard_normal(mean.shape)
    lp = gaussian_log_prob(u, mean, np.log(std))
    return squash(u), lp, u


# ---------------------------------------------------------------------------
# memory-augmented encoding of a batch of state sequences


@dataclass
class Context:
    """Recurrent context of a batch of episodes: local memory and global read controller."""

    local: mem.MemoryState
    glob: mem.MemoryState | None


def new_context(spec: ModelSpec, batch: int, global_M=None) -> Context:
    local = mem.zero_state(spec.local_config(), batch)
    glob = None
    if spec.use_global and global_M is not None:
        z = np.zeros((batch, spec.embed_dim))
        glob = mem.MemoryState(np.asarray(global_M), z, z.copy(), z.copy(), z.copy(),
                               mem.MemoryConfig(np.shape(global_M)[0], spec.embed_dim))
    return Context(local, glob)


def context_step(p, spec: ModelSpec, ctx: Context, e):
    """Advance the memories by one state embedding ``e`` of shape ``[B, l]``.

    Returns ``(s_aug, m_local, local_alpha, ctx')``. The local memory is read
    and written; the global memory is only read.
    """
    zeros = np.zeros(np.shape(ad.value(e)))
    if spec.use_local:
        ro, local = mem.step(ctx.local, e, p, "memL")
        m_local, alpha = ro.m, ro.alpha
    else:
        local, m_local, alpha = ctx.local, zeros, None
    if ctx.glob is not None:
        gro, glob = mem.read(ctx.glob, e, p, "memG")
        m_global = gro.m
    else:
        glob, m_global = None, zeros
    return augment(e, m_local, m_global), m_local, alpha, Context(local, glob)


def encode(p, spec: ModelSpec, features, global_M=None, keep_alpha=False):
    """Teacher-force ``features [B, T, 25]`` through embedding and memories.

    Returns ``(s_aug [B, T, 3l], m_local [B, T, l], alphas)``; ``alphas`` is a
    list of local attention arrays when ``keep_alpha`` is set.
    """
    B, T = np.shape(features)[:2]
    p = mem.with_fused_gates(p, ("memL", "memG"))
    e_all = embed(p, features)
    ctx = new_context(spec, B, global_M)
    augs, mls, alphas = [], [], []
    for t in range(T):
        e = ad.getitem(e_all, (slice(None), t))
        s_aug, m_local, alpha, ctx = context_step(p, spec, ctx, e)
        augs.append(s_aug)
        mls.append(m_local)
        if keep_alpha:
            alphas.append(None if alpha is None else np.array(ad.value(alpha)))
    return ad.stack(augs, axis=1), ad.stack(mls, axis=1), alphas


def preload_global(state: mem.MemoryState, trajectories, p, spec: ModelSpec) -> mem.MemoryState:
    """Write a batch of expert trajectories, in order, into the global memory."""
    if not trajectories:
        return state
    n = sum(len(t) for t in trajectories)
    if n != state.config.slots:
        raise ValueError(f"global memory has {state.config.slots} slots but the batch has {n} steps")
    pv = mem.with_fused_gates(p.view() if isinstance(p, ParamStore) else p, ("memG",))
    for traj in trajectories:
        e_all = embed(pv, traj.features)
        for e in e_all:
            _, state = mem.step(state, e, pv, "memG")
    return state


# ---------------------------------------------------------------------------
# behavioural cloning and the static Gaussian baseline

BC_PREFIXES = ("embed/", "memL/", "memG/read/", "policy/l1/", "policy/l2/", "policy/mean/")


def bc_names(p: ParamStore) -> list[str]:
    return [n for n in p if n.startswith(BC_PREFIXES)]


def bc_loss(p, spec: ModelSpec, features, actions, global_M=None):
    s_aug, _, _ = encode(p, spec, features, global_M)
    pred = squash(policy_mean(p, s_aug))
    return ad.mean(ad.square(ad.sub(pred, actions)))


def stack_trajectories(trajs):
    T = {len(t) for t in trajs}
    if len(T) != 1:
        raise ValueError("trajectories must share one length to be batched")
    return np.stack([t.features for t in trajs]), np.stack([t.actions for t in trajs])


def bc_train(trajectories, params: ParamStore, spec: ModelSpec, epochs: int, lr: float = 1e-3,
             global_M=None, opt: AdamState | None = None):
    """Full-batch regression of squashed policy means onto expert actions.

    Memories are teacher-forced on the expert states; the local memory starts
    empty for every trajectory. Returns ``(params, losses)`` where
    ``losses[0]`` is the loss before any update and ``losses[-1]`` after the last.
    """
    if epochs <= 0:
        return params, []
    if not trajectories:
        raise ValueError("behavioural cloning needs a non-empty dataset")
    feats, acts = stack_trajectories(trajectories)
    opt = opt or AdamState(lr=lr)
    names = bc_names(params)
    losses = []
    for _ in range(epochs):
        params.zero_grad()
        loss = forward_backward(lambda q: bc_loss(q, spec, feats, acts, global_M), params)
        losses.append(float(loss))
        adam_step(params, opt, names)
    losses.append(float(bc_loss(params.view(), spec, feats, acts, global_M)))
    return params, losses


@dataclass(frozen=True)
class StaticGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def sample(self, rng, size=None) -> np.ndarray:
        shape = (self.mu.size,) if size is None else (size, self.mu.size)
        a = self.mu + self.sigma * rng.standard_normal(shape)
        lo = np.array([-1.0, 0.0, 0.0])
        return np.clip(a, lo, 1.0)


def static_gaussian_fit(trajectories) -> StaticGaussian:
    """Maximum-likelihood diagonal Gaussian over all expert actions."""
    rows = [t.actions for t in trajectories if len(t.actions)]
    if not rows:
        raise ValueError("static Gaussian fit needs at least one action record")
    a = np.concatenate(rows)
    return StaticGaussian(a.mean(axis=0), np.maximum(a.std(axis=0), SIGMA_MIN))
