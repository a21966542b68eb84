"""Adversarial imitation loop with local/global memories and reward augmentation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import agents, evaluation
from . import memory as mem
from .adversary import CriticBatch, critic_score, critic_update, init_critic
from .agents import ModelSpec
from .laneworld import Action, TrackSpec, Trajectory
from .laneworld import world as lw
from .numerics import (AdamState, OptState, ParamStore, ad, adam_step, derive_seed,
                       forward_backward, load_checkpoint, save_checkpoint, stream)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_RA", "no_local", "no_global", "plain_gail", "bc_only", "sg_only")
ABLATION_VARIANTS = ("full", "no_RA", "no_local", "no_global")
METRICS_HEADER = ("iteration", "mean_score", "mean_dispersion", "lane_changes",
                  "offroad_steps", "hard_brakes", "collisions", "traverse_m")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class TrainConfig:
    iterations: int = 200
    batch_size: int = 8
    episode_len: int = 100
    discount: float = 0.99
    gae_lambda: float = 0.95
    penalty_weight: float = 0.1
    critic_steps: int = 5
    clip: float = 0.01
    critic_lr: float = 5e-4
    policy_lr: float = 3e-4
    bc_lr: float = 1e-3
    bc_epochs: int = 200
    kl_budget: float = 0.01
    ratio_clip: float = 0.2
    policy_epochs: int = 5
    value_coef: float = 0.5
    init_std: tuple = agents.INIT_STD
    embed_dim: int = 32
    hidden: int = 64
    checkpoint_every: int = 10
    seed: int = 0
    ablation: str = "full"

    def validate(self) -> "TrainConfig":
        positive_ints = ("batch_size", "episode_len", "critic_steps", "policy_epochs",
                         "embed_dim", "hidden", "checkpoint_every")
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        for name in ("iterations", "bc_epochs", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {v!r}")
        for name in ("clip", "critic_lr", "policy_lr", "bc_lr", "kl_budget", "ratio_clip"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(name, f"must be positive, got {v!r}")
        if not (isinstance(self.discount, (int, float)) and 0.0 < self.discount < 1.0):
            raise ConfigError("discount", f"must lie in (0, 1), got {self.discount!r}")
        if not (isinstance(self.gae_lambda, (int, float)) and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gae_lambda", f"must lie in [0, 1], got {self.gae_lambda!r}")
        for name in ("penalty_weight", "value_coef"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigError(name, f"must be non-negative, got {v!r}")
        std = np.asarray(self.init_std, dtype=np.float64) if isinstance(self.init_std, (list, tuple)) else None
        if std is None or std.shape != (lw.ACTION_DIM,) or not np.all((std >= agents.SIGMA_MIN) & (std <= 1.0)):
            raise ConfigError("init_std", f"needs {lw.ACTION_DIM} values in [{agents.SIGMA_MIN}, 1], got {self.init_std!r}")
        self.init_std = tuple(float(v) for v in std)
        if self.ablation not in ABLATIONS:
            raise ConfigError("ablation", f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        return self

    @property
    def local_slots(self) -> int:
        return self.episode_len

    @property
    def global_slots(self) -> int:
        return self.episode_len * self.batch_size

    @property
    def effective_penalty(self) -> float:
        if self.ablation in ("no_RA", "no_local", "plain_gail"):
            return 0.0
        return float(self.penalty_weight)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(embed_dim=self.embed_dim, hidden=self.hidden,
                         local_slots=self.local_slots, global_slots=self.global_slots,
                         use_local=self.ablation not in ("no_local", "plain_gail"),
                         use_global=self.ablation not in ("no_global", "plain_gail"))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown training field")
        return cls(**data).validate()


def build_params(cfg: TrainConfig, spec: ModelSpec | None = None) -> ParamStore:
    spec = spec or cfg.model_spec()
    store = ParamStore(cfg.seed)
    agents.init_embed(store, spec, stream(cfg.seed, "init", "embed"))
    agents.init_memories(store, spec, stream(cfg.seed, "init", "memory"))
    agents.init_policy(store, spec, stream(cfg.seed, "init", "policy"), cfg.init_std)
    init_critic(store, spec.aug_dim + spec.action_dim, stream(cfg.seed, "init", "critic"),
                (cfg.hidden, cfg.hidden), cfg.clip)
    return store


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutBuffer:
    """Per-step records of ``B`` episodes, every array shaped ``[B, T, ...]``."""

    features: np.ndarray
    s_embed: np.ndarray
    m_local: np.ndarray
    m_global: np.ndarray
    s_aug: np.ndarray
    actions: np.ndarray
    u: np.ndarray
    log_prob: np.ndarray
    value: np.ndarray
    dispersion: np.ndarray
    score: np.ndarray | None = None
    reward: np.ndarray | None = None
    advantage: np.ndarray | None = None
    ret: np.ndarray | None = None
    alpha_local: list = field(default_factory=list)
    last_value: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.features.shape[1]


def _trajectory_from(feats, acts, raws, events, seed, tag, dt) -> Trajectory:
    raw = dict(zip(lw.RAW_FIELDS, np.array(raws).T))
    return Trajectory(np.array(feats), np.array(acts), tag, seed, raw, events, dt)


def rollout(params, spec: ModelSpec, track: TrackSpec, global_M, T: int, seeds, rng,
            greedy: bool = False, keep_alpha: bool = False):
    """Run ``len(seeds)`` closed-loop episodes of ``T`` steps in lock-step.

    The local memory starts empty for every episode; the global memory matrix
    ``global_M`` is only read. Returns ``(buffer, trajectories)``.
    """
    p = params.view() if isinstance(params, ParamStore) else params
    p = mem.with_fused_gates(p, ("memL", "memG"))
    B = len(seeds)
    worlds = [lw.reset(track, s) for s in seeds]
    ctx = agents.new_context(spec, B, global_M)
    cols = {k: [] for k in ("features", "s_embed", "m_local", "m_global", "s_aug",
                            "actions", "u", "log_prob", "value")}
    alphas = []
    raws = [[] for _ in range(B)]
    events = [[] for _ in range(B)]
    last = [frozenset()] * B
    for _ in range(T):
        f = np.stack([lw.features(w) for w in worlds])
        for b, w in enumerate(worlds):
            raws[b].append(lw.raw_record(w))
            events[b].append(sorted(last[b]))
        e = agents.embed(p, f)
        s_aug, m_local, alpha, ctx = agents.context_step(p, spec, ctx, e)
        mean, std, value = agents.policy_forward(p, s_aug)
        if greedy:
            u = mean
            a = agents.squash(u)
            lp = agents.gaussian_log_prob(u, mean, np.log(std))
        else:
            a, lp, u = agents.sample_action(mean, std, rng)
        for b in range(B):
            worlds[b], last[b] = lw.step(worlds[b], Action.from_array(a[b]))
        _, _, m_global = agents.split_augmented(s_aug, spec.embed_dim)
        for k, v in (("features", f), ("s_embed", e), ("m_local", m_local),
                     ("m_global", m_global), ("s_aug", s_aug), ("actions", a), ("u", u),
                     ("log_prob", lp), ("value", value)):
            cols[k].append(v)
        if keep_alpha:
            alphas.append(alpha)
    # episodes are cut at T on an endless loop, so returns bootstrap from the state reached
    f = np.stack([lw.features(w) for w in worlds])
    s_aug, _, _, _ = agents.context_step(p, spec, ctx, agents.embed(p, f))
    last_value = np.asarray(agents.value_head(p, s_aug))
    data = {k: np.stack(v, axis=1) for k, v in cols.items()}
    buf = RolloutBuffer(dispersion=dispersion_series(data["m_local"]), alpha_local=alphas,
                        last_value=last_value, **data)
    trajs = [_trajectory_from(data["features"][b], data["actions"][b], raws[b], events[b],
                              int(seeds[b]), "policy", worlds[b].dt) for b in range(B)]
    return buf, trajs


def dispersion_series(m_local) -> np.ndarray:
    """Per-step penalty for local outputs ``[B, T, l]``; the first step has no predecessor."""
    m = np.asarray(ad.value(m_local))
    disp = np.zeros(m.shape[:2])
    if m.shape[1] > 1:
        disp[:, 1:] = mem.dispersion(m[:, :-1], m[:, 1:])
    return disp


def sg_rollout(sg: agents.StaticGaussian, track: TrackSpec, T: int, seeds, rng):
    """Closed-loop episodes of the static Gaussian baseline."""
    trajs = []
    for seed in seeds:
        w = lw.reset(track, seed)
        feats, acts, raws, events, last = [], [], [], [], frozenset()
        for _ in range(T):
            feats.append(lw.features(w))
            raws.append(lw.raw_record(w))
            events.append(sorted(last))
            a = sg.sample(rng)
            acts.append(a)
            w, last = lw.step(w, Action.from_array(a))
        trajs.append(_trajectory_from(feats, acts, raws, events, int(seed), "sg", w.dt))
    return trajs


def compute_rewards(buffer: RolloutBuffer, penalty_weight: float) -> RolloutBuffer:
    """``r_t = D(s_t, a_t) - penalty_weight * dispersion_t`` (first-step penalty is 0)."""
    if buffer.score is None:
        raise ValueError("critic scores missing from buffer")
    buffer.reward = buffer.score - penalty_weight * buffer.dispersion
    return buffer


def gae(rewards, values, discount: float, lam: float, last_value=None) -> np.ndarray:
    """Generalised advantage estimates along the last axis.

    ``last_value`` is the value of the state after the final step; 0 treats
    the end of the episode as terminal.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[-1]
    tail = np.zeros(rewards.shape[:-1]) if last_value is None else np.asarray(last_value, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    for t in range(T - 1, -1, -1):
        next_v = values[..., t + 1] if t + 1 < T else tail
        delta = rewards[..., t] + discount * next_v - values[..., t]
        running = delta + discount * lam * running
        adv[..., t] = running
    return adv


def advantages(buffer: RolloutBuffer, discount: float, lam: float, normalize: bool = True) -> RolloutBuffer:
    adv = gae(buffer.reward, buffer.value, discount, lam, buffer.last_value)
    buffer.ret = adv + buffer.value
    if normalize:
        std = adv.std()
        adv = adv - adv.mean()
        if std ** 2 >= 1e-12:
            adv = adv / std
    buffer.advantage = adv
    return buffer


# ---------------------------------------------------------------------------
# policy update


def policy_names(p) -> list[str]:
    return [n for n in p if n.startswith(("embed/", "memL/", "memG/read/", "policy/"))]


def _policy_log_probs(p, spec, features, u, global_M):
    s_aug, _, _ = agents.encode(p, spec, features, global_M)
    mean = agents.policy_mean(p, s_aug)
    return agents.gaussian_log_prob(u, mean, agents.log_std(p)), s_aug


@dataclass
class UpdateStats:
    approx_kl: float
    inner_steps: int
    surrogate: float
    value_loss: float
    reverted: bool = False
    backtracked: bool = False


def _backtrack(params, names, backup, kl_fn, kl_budget, max_halvings):
    """Halve the last step until its KL is within ``kl_budget``; ``None`` if it never is."""
    step = {n: params[n] - backup[n] for n in names}
    scale = 1.0
    for _ in range(max_halvings):
        scale *= 0.5
        for n in names:
            params[n] = backup[n] + scale * step[n]
        kl = kl_fn()
        if kl <= kl_budget:
            return kl
    return None


def policy_update(params: ParamStore, spec: ModelSpec, buffer: RolloutBuffer, opt: AdamState,
                  kl_budget: float = 0.01, ratio_clip: float = 0.2, epochs: int = 5,
                  value_coef: float = 0.5, global_M=None, backtrack: int = 10) -> UpdateStats:
    """Clipped-ratio surrogate ascent with a KL stopping rule.

    Gradients reach the embedding and the memory controllers through the
    teacher-forced re-encoding of the rollout states. An inner step whose
    approximate KL exceeds ``2 * kl_budget`` is shrunk by successive halving
    until it fits ``kl_budget``, or undone after ``backtrack`` halvings.
    """
    names = policy_names(params)
    feats, u = buffer.features, buffer.u
    adv, ret = buffer.advantage, buffer.ret
    logp_old, _ = _policy_log_probs(params.view(), spec, feats, u, global_M)
    lo, hi = 1.0 - ratio_clip, 1.0 + ratio_clip

    def graph(q):
        logp, s_aug = _policy_log_probs(q, spec, feats, u, global_M)
        log_ratio = ad.value(logp) - logp_old
        with np.errstate(over="ignore"):
            bad = np.argwhere(~np.isfinite(np.exp(log_ratio)))
        if bad.size:
            raise FloatingPointError(f"non-finite probability ratio at step {int(bad[0][-1])}")
        ratio = ad.exp(ad.sub(logp, logp_old))
        surr = ad.mean(ad.minimum(ad.mul(ratio, adv), ad.mul(ad.clip(ratio, lo, hi), adv)))
        v = agents.value_head(q, ad.detach(s_aug))
        vloss = ad.mean(ad.square(ad.sub(v, ret)))
        kl = float(np.mean(-log_ratio))
        return ad.add(ad.neg(surr), ad.mul(vloss, value_coef)), surr, vloss, kl

    def kl_fn():
        logp_new, _ = _policy_log_probs(params.view(), spec, feats, u, global_M)
        return float(np.mean(logp_old - logp_new))

    # The forward pass of each inner step also measures the KL of the previous
    # step, so a step that overshoots is undone before any further update.
    stats = UpdateStats(0.0, 0, 0.0, 0.0)
    backup = opt_backup = None
    for k in range(epochs + 1):
        params.zero_grad()
        if k == epochs:
            kl = kl_fn()
        else:
            _, surr, vloss, kl = forward_backward(graph, params)
        if k > 0:
            if kl > 2.0 * kl_budget:
                kl = _backtrack(params, names, backup, kl_fn, kl_budget, backtrack)
                if kl is None:
                    params.load(backup)
                    opt.m, opt.v, opt.step = opt_backup.m, opt_backup.v, opt_backup.step
                    stats.reverted = True
                else:
                    stats.approx_kl, stats.inner_steps = kl, k
                stats.backtracked = True
                break
            stats.approx_kl, stats.inner_steps = kl, k
            if kl > kl_budget or k == epochs:
                break
        stats.surrogate, stats.value_loss = float(surr), float(vloss)
        backup = {n: params[n].copy() for n in names}
        opt_backup = opt.copy()
        adam_step(params, opt, names)
    return stats


# ---------------------------------------------------------------------------
# main loop


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def expert_batch(demos, B: int, T: int, rng):
    idx = rng.choice(len(demos), size=B, replace=len(demos) < B)
    batch = []
    for i in idx:
        t = demos[int(i)]
        if len(t) < T:
            raise ValueError(f"demo trajectory {int(i)} has {len(t)} records, need {T}")
        batch.append(truncate(t, T))
    return batch


def truncate(t: Trajectory, T: int) -> Trajectory:
    if len(t) == T:
        return t
    return Trajectory(t.features[:T], t.actions[:T], t.persona, t.seed,
                      {k: v[:T] for k, v in t.raw.items()}, t.events[:T], t.dt)


def preload(params, spec: ModelSpec, batch):
    """Fresh global memory filled with ``batch``; ``None`` when the global memory is off."""
    if not spec.use_global:
        return None
    return agents.preload_global(mem.zero_state(spec.global_config()), batch, params, spec)


@dataclass
class TrainResult:
    params: ParamStore
    metrics: list
    updates: list
    global_state: mem.MemoryState | None
    run_dir: Path | None
    bc_losses: list
    sg: agents.StaticGaussian | None = None


def _checkpoint(path, params, cfg, global_state, iteration, extra=None):
    tensors = dict(params.items())
    if global_state is not None:
        tensors.update(global_state.snapshot("memG_state"))
    if extra:
        tensors.update(extra)
    meta = {"config": cfg.to_dict(), "iteration": iteration,
            "model": asdict(cfg.model_spec())}
    save_checkpoint(path, tensors, meta)


def _event_row(trajs):
    counts = {ev: sum(t.count(ev) for t in trajs) for ev in lw.EVENTS}
    traverse = np.mean([np.sum(t.raw["v_x"] * np.cos(t.raw["psi"]) * t.dt) for t in trajs])
    return counts, traverse


def train(cfg: TrainConfig, demos, track: TrackSpec, run_dir=None, dataset_path=None) -> TrainResult:
    """BC initialisation followed by ``cfg.iterations`` adversarial iterations."""
    cfg.validate()
    if not demos:
        raise ValueError("training needs a non-empty demo dataset")
    spec = cfg.model_spec()
    T, B = cfg.episode_len, cfg.batch_size
    demos = [truncate(t, T) if len(t) >= T else t for t in demos]
    params = build_params(cfg, spec)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        ref = {"path": str(dataset_path) if dataset_path else None}
        if dataset_path is not None and Path(dataset_path).exists():
            ref["sha256"] = hashlib.sha256(Path(dataset_path).read_bytes()).hexdigest()
        (run_dir / "demos.json").write_text(json.dumps(ref, indent=2, sort_keys=True) + "\n")

    if cfg.ablation == "sg_only":
        sg = agents.static_gaussian_fit(demos)
        if run_dir is not None:
            _checkpoint(run_dir / "checkpoints" / "final.ckpt", params, cfg, None, 0,
                        {"sg/mu": sg.mu, "sg/sigma": sg.sigma})
            _write_metrics(run_dir, [], [])
        return TrainResult(params, [], [], None, run_dir, [], sg)

    batch_rng = stream(cfg.seed, "expert-batch")
    bc_batch = expert_batch(demos, B, T, batch_rng) if spec.use_global else []
    global_state = preload(params, spec, bc_batch)
    global_M = None if global_state is None else global_state.M
    bc_set = [t for t in demos if len(t) == T]
    params, bc_losses = agents.bc_train(bc_set, params, spec, cfg.bc_epochs, cfg.bc_lr, global_M)
    log.info("BC done: loss %.5f -> %.5f", bc_losses[0] if bc_losses else float("nan"),
             bc_losses[-1] if bc_losses else float("nan"))
    if run_dir is not None:
        _checkpoint(run_dir / "checkpoints" / "bc.ckpt", params, cfg, global_state, 0)

    metrics, updates = [], []
    iterations = 0 if cfg.ablation == "bc_only" else cfg.iterations
    critic_opt = OptState(lr=cfg.critic_lr)
    policy_opt = AdamState(lr=cfg.policy_lr)
    penalty = cfg.effective_penalty
    for it in range(1, iterations + 1):
        batch = expert_batch(demos, B, T, batch_rng)
        global_state = preload(params, spec, batch)
        global_M = None if global_state is None else global_state.M
        seeds = [derive_seed(cfg.seed, "rollout", it, b) for b in range(B)]
        buf, trajs = rollout(params, spec, track, global_M, T, seeds,
                             stream(cfg.seed, "policy-noise", it))
        ex_feats, ex_acts = agents.stack_trajectories(batch)
        ex_aug, _, _ = agents.encode(params.view(), spec, ex_feats, global_M)
        expert = CriticBatch(ex_aug, ex_acts, "expert")
        policy = CriticBatch(buf.s_aug, buf.actions, "policy")
        objective = 0.0
        for _ in range(cfg.critic_steps):
            objective = critic_update(params, expert, policy, critic_opt, cfg.clip)
        buf.score = critic_score(params.view(), buf.s_aug, buf.actions)
        compute_rewards(buf, penalty)
        advantages(buf, cfg.discount, cfg.gae_lambda)
        stats = policy_update(params, spec, buf, policy_opt, cfg.kl_budget, cfg.ratio_clip,
                              cfg.policy_epochs, cfg.value_coef, global_M)
        counts, traverse = _event_row(trajs)
        metrics.append((it, float(buf.score.mean()), float(buf.dispersion[:, 1:].mean()) if T > 1 else 0.0,
                        counts["lane_change"], counts["offroad"], counts["hard_brake"],
                        counts["collision"], float(traverse)))
        updates.append((it, objective, stats.approx_kl, stats.inner_steps, int(stats.reverted),
                        int(stats.backtracked), stats.surrogate, stats.value_loss))
        if run_dir is not None and it % cfg.checkpoint_every == 0:
            _checkpoint(run_dir / "checkpoints" / f"iter_{it:05d}.ckpt", params, cfg, global_state, it)
        log.debug("iter %d score %.5f disp %.5f kl %.5f", it, metrics[-1][1], metrics[-1][2],
                  stats.approx_kl)

    if run_dir is not None:
        _checkpoint(run_dir / "checkpoints" / "final.ckpt", params, cfg, global_state, iterations)
        _write_metrics(run_dir, metrics, updates)
    return TrainResult(params, metrics, updates, global_state, run_dir, bc_losses)


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for row in metrics:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _write_metrics(run_dir: Path, metrics, updates) -> None:
    (run_dir / "metrics.csv").write_text(metrics_csv(metrics))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "critic_objective", "approx_kl", "inner_steps", "reverted", "backtracked",
                "surrogate", "value_loss"))
    for row in updates:
        w.writerow([_fmt(x) for x in row])
    (run_dir / "updates.csv").write_text(buf.getvalue())


def run_dir_root(default) -> Path:
    return Path(os.environ.get("MAGAIL_RUN_DIR", default))


def ablation_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATIONS:
        raise ConfigError("ablation", f"unknown variant {variant!r}")
    return replace(cfg, ablation=variant)


# ---------------------------------------------------------------------------
# restoring runs, closed-loop evaluation and ablations


@dataclass
class Policy:
    """Everything needed to drive the simulator from a checkpoint."""

    config: TrainConfig
    params: ParamStore
    global_state: mem.MemoryState | None = None
    sg: agents.StaticGaussian | None = None

    @property
    def spec(self) -> ModelSpec:
        return self.config.model_spec()


def load_policy(path) -> Policy:
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    params = ParamStore(cfg.seed)
    for name, value in tensors.items():
        if not name.startswith(("memG_state/", "sg/")):
            params.add(name, value)
    glob = mem.MemoryState.from_snapshot(tensors, "memG_state") if "memG_state/M" in tensors else None
    sg = agents.StaticGaussian(tensors["sg/mu"], tensors["sg/sigma"]) if "sg/mu" in tensors else None
    return Policy(cfg, params, glob, sg)


def check_dimensions(policy: Policy, feature_dim: int, action_dim: int) -> None:
    """Raise ``ShapeError`` when the checkpoint does not fit the dataset's dimensions."""
    if policy.sg is not None:
        if policy.sg.mu.shape != (action_dim,):
            raise ad.ShapeError(f"checkpoint action dim {policy.sg.mu.shape} != dataset {action_dim}")
        return
    n_in = policy.params["embed/l1/w"].shape[0]
    n_out = policy.params["policy/mean/w"].shape[1]
    if n_in != feature_dim or n_out != action_dim:
        raise ad.ShapeError(f"checkpoint expects {n_in} features / {n_out} actions, "
                            f"dataset has {feature_dim} / {action_dim}")
    if policy.global_state is not None:
        k = policy.global_state.config.slots
        if k != policy.config.global_slots:
            raise ad.ShapeError(f"checkpoint global memory has {k} slots, config needs "
                                f"{policy.config.global_slots}")


def simulate(policy: Policy, track: TrackSpec, episodes: int, steps: int, seed: int,
             greedy: bool = False, batch: int | None = None):
    """Closed-loop episodes of a trained policy; ``episodes`` trajectories of ``steps`` records."""
    seeds = [derive_seed(seed, "eval", i) for i in range(episodes)]
    if policy.sg is not None:
        return sg_rollout(policy.sg, track, steps, seeds, stream(seed, "eval-noise"))
    batch = batch or policy.config.batch_size
    global_M = None if policy.global_state is None else policy.global_state.M
    trajs = []
    for start in range(0, episodes, batch):
        chunk = seeds[start:start + batch]
        _, out = rollout(policy.params, policy.spec, track, global_M, steps, chunk,
                         stream(seed, "eval-noise", start), greedy=greedy)
        trajs.extend(out)
    return trajs


class AblationError(RuntimeError):
    def __init__(self, variant: str, cause: Exception):
        super().__init__(f"ablation variant {variant!r} failed: {cause}")
        self.variant = variant


def ablate(cfg: TrainConfig, demos, track: TrackSpec, out_dir, episodes: int = 20,
           steps: int | None = None, eval_seed: int | None = None, dataset_path=None,
           variants=ABLATION_VARIANTS) -> dict:
    """Train and evaluate each variant with identical seeds; writes per-variant reports
    and ``ablation.csv``. Returns ``{variant: MetricsReport}``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = steps or cfg.episode_len
    eval_seed = cfg.seed if eval_seed is None else eval_seed
    results = {}
    for variant in variants:
        try:
            vcfg = ablation_config(cfg, variant)
            res = train(vcfg, demos, track, out_dir / variant, dataset_path)
            policy = Policy(vcfg, res.params, res.global_state, res.sg)
            trajs = simulate(policy, track, episodes, steps, eval_seed)
            rep = evaluation.report(trajs, demos)
            rep.meta.update({"variant": variant, "seed": vcfg.seed, "eval_seed": eval_seed})
            write_report(out_dir / variant, rep, variant)
        except Exception as exc:  # re-raised with the variant attached
            raise AblationError(variant, exc) from exc
        results[variant] = rep
    (out_dir / "ablation.csv").write_text(evaluation.combined_table(results))
    return results


def write_report(out_dir, rep, label: str = "model") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(rep.to_csv())
    (out_dir / "report.txt").write_text(rep.to_table(label))
    (out_dir / "report.json").write_text(rep.to_json())
