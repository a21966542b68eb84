import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magail import agents, training
from magail import memory as mem
from magail.laneworld import PERSONAS, TrackSpec, record_demos
from magail.numerics import AdamState, load_checkpoint

TRACK = TrackSpec()


def tiny(**kw):
    base = dict(iterations=2, batch_size=2, episode_len=6, bc_epochs=2, embed_dim=4, hidden=6,
                critic_steps=2, policy_epochs=2, checkpoint_every=1, seed=3)
    base.update(kw)
    return training.TrainConfig(**base).validate()


@pytest.fixture(scope="module")
def demos():
    return record_demos(TRACK, list(PERSONAS.values()), 2, 6, 11).trajectories


def fresh_buffer(cfg, T=None, seeds=(1, 2), global_M=None):
    spec = cfg.model_spec()
    p = training.build_params(cfg, spec)
    buf, trajs = training.rollout(p, spec, TRACK, global_M, T or cfg.episode_len, list(seeds),
                                  np.random.default_rng(0))
    return p, spec, buf, trajs


# --- config ------------------------------------------------------------------------

def test_config_defaults_and_slots():
    cfg = training.TrainConfig().validate()
    assert (cfg.batch_size, cfg.episode_len, cfg.discount, cfg.gae_lambda) == (8, 100, 0.99, 0.95)
    assert (cfg.penalty_weight, cfg.critic_steps, cfg.kl_budget, cfg.ratio_clip) == (0.1, 5, 0.01, 0.2)
    assert cfg.local_slots == 100 and cfg.global_slots == 800


@pytest.mark.parametrize("field,value", [("discount", 1.5), ("discount", 0.0), ("batch_size", 0),
                                         ("ablation", "nope"), ("clip", -1.0), ("init_std", (0.1,))])
def test_config_rejects(field, value):
    with pytest.raises(training.ConfigError) as e:
        training.TrainConfig(**{field: value}).validate()
    assert e.value.field == field


def test_config_roundtrip_and_unknown_keys():
    cfg = tiny()
    assert training.TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(training.ConfigError):
        training.TrainConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("variant,penalty,local,glob", [
    ("full", 0.1, True, True), ("no_RA", 0.0, True, True), ("no_local", 0.0, False, True),
    ("no_global", 0.1, True, False), ("plain_gail", 0.0, False, False)])
def test_ablation_switches(variant, penalty, local, glob):
    cfg = training.ablation_config(training.TrainConfig(), variant)
    spec = cfg.model_spec()
    assert cfg.effective_penalty == penalty
    assert (spec.use_local, spec.use_global) == (local, glob)
    # no_RA changes nothing but the penalty
    if variant == "no_RA":
        assert cfg.model_spec() == training.TrainConfig().model_spec()


# --- preload / rollout ---------------------------------------------------------------

def test_preload_counts_steps(demos, monkeypatch):
    cfg = tiny()
    spec = cfg.model_spec()
    p = training.build_params(cfg, spec)
    calls = []
    real = mem.step
    monkeypatch.setattr(mem, "step", lambda *a: calls.append(1) or real(*a))
    state = training.preload(p, spec, demos[:2])
    assert len(calls) == 12
    again = training.preload(p, spec, demos[:2])
    assert np.array_equal(state.M, again.M)
    empty = mem.zero_state(spec.global_config())
    assert agents.preload_global(empty, [], p, spec) is empty
    with pytest.raises(ValueError):
        agents.preload_global(empty, demos[:1], p, spec)


def test_rollout_boundary_and_shapes():
    cfg = tiny()
    _, _, buf, trajs = fresh_buffer(cfg, T=1)
    assert buf.T == 1 and np.array_equal(buf.dispersion, np.zeros((2, 1)))
    _, _, buf, trajs = fresh_buffer(cfg)
    assert buf.s_aug.shape == (2, 6, 12) and len(trajs) == 2 and len(trajs[0]) == 6
    assert np.all(buf.dispersion[:, 0] == 0)
    assert np.all((buf.dispersion >= 0) & (buf.dispersion <= 2))


def test_rollout_no_local_has_no_penalty():
    cfg = tiny(ablation="no_local")
    _, _, buf, _ = fresh_buffer(cfg)
    assert np.array_equal(buf.m_local, np.zeros_like(buf.m_local))
    assert np.array_equal(buf.dispersion, np.zeros_like(buf.dispersion))


def test_rollout_is_deterministic_and_leaves_global_memory(demos):
    cfg = tiny()
    spec = cfg.model_spec()
    p = training.build_params(cfg, spec)
    state = training.preload(p, spec, demos[:2])
    M = state.M.copy()
    a, _ = training.rollout(p, spec, TRACK, state.M, 6, [4, 5], np.random.default_rng(9))
    b, _ = training.rollout(p, spec, TRACK, state.M, 6, [4, 5], np.random.default_rng(9))
    assert np.array_equal(state.M, M)
    for name in ("features", "s_aug", "actions", "u", "log_prob", "value", "dispersion"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_rollout_buffer_matches_teacher_forced_encoding():
    cfg = tiny()
    p, spec, buf, _ = fresh_buffer(cfg)
    s_aug, m_local, _ = agents.encode(p.view(), spec, buf.features)
    assert np.allclose(s_aug, buf.s_aug, atol=1e-12)
    assert np.allclose(training.dispersion_series(m_local), buf.dispersion, atol=1e-12)


# --- rewards and advantages --------------------------------------------------------------

def test_reward_example():
    cfg = tiny()
    _, _, buf, _ = fresh_buffer(cfg, T=2, seeds=(1,))
    buf.score = np.array([[1.0, 1.0]])
    buf.dispersion = np.array([[0.0, 0.5]])
    training.compute_rewards(buf, 0.1)
    assert buf.reward[0, 1] == pytest.approx(0.95, abs=1e-15)
    training.compute_rewards(buf, 0.0)
    assert np.array_equal(buf.reward, buf.score)


@given(st.floats(0, 10), st.integers(0, 2**31 - 1))
def test_reward_identity(lam, seed):
    rng = np.random.default_rng(seed)
    buf = training.RolloutBuffer(*[np.zeros((3, 5))] * 10)
    buf.score = rng.normal(size=(3, 5))
    buf.dispersion = np.concatenate([np.zeros((3, 1)), rng.uniform(0, 2, size=(3, 4))], axis=1)
    with_pen = training.compute_rewards(buf, lam).reward.sum()
    without = training.compute_rewards(buf, 0.0).reward.sum()
    assert abs((with_pen - without) + lam * buf.dispersion.sum()) <= 1e-12 * max(1.0, lam * 15)


def test_gae_examples():
    assert np.allclose(training.gae(np.ones(2), np.zeros(2), 0.5, 1.0) + 0.0, [1.5, 1.0])
    r, v = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -0.4])
    assert np.allclose(training.gae(r, v, 1e-300, 0.95), r - v)


def test_gae_against_discounted_sums():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=7), rng.normal(size=7)
    g, lam = 0.9, 0.8
    v_next = np.append(v[1:], 0.0)
    delta = r + g * v_next - v
    expected = [sum((g * lam) ** k * delta[t + k] for k in range(7 - t)) for t in range(7)]
    assert np.allclose(training.gae(r, v, g, lam), expected, atol=1e-12)


def test_advantages_normalised():
    cfg = tiny()
    _, _, buf, _ = fresh_buffer(cfg)
    buf.score = np.random.default_rng(1).normal(size=buf.value.shape)
    training.compute_rewards(buf, 0.1)
    training.advantages(buf, 0.99, 0.95)
    assert abs(buf.advantage.mean()) <= 1e-9 and buf.advantage.std() == pytest.approx(1.0)
    raw = training.gae(buf.reward, buf.value, 0.99, 0.95, buf.last_value)
    assert np.allclose(buf.ret, raw + buf.value, atol=1e-12)


def test_gae_bootstraps_from_last_value():
    r, v = np.array([1.0, 1.0]), np.zeros(2)
    assert np.allclose(training.gae(r, v, 0.5, 1.0, last_value=2.0), [2.0, 2.0])
    assert np.allclose(training.gae(r, v, 0.5, 1.0, last_value=0.0), [1.5, 1.0])


# --- policy update -------------------------------------------------------------------

def test_zero_advantage_moves_only_value_head():
    cfg = tiny()
    p, spec, buf, _ = fresh_buffer(cfg)
    buf.advantage = np.zeros_like(buf.value)
    buf.ret = buf.value + 1.0
    before = p.copy()
    stats = training.policy_update(p, spec, buf, AdamState(lr=1e-3), epochs=1)
    changed = {n for n in p if not np.array_equal(p[n], before[n])}
    assert changed and all(n.startswith("policy/value/") for n in changed)
    assert stats.surrogate == 0.0


def test_positive_advantage_raises_log_prob():
    cfg = tiny()
    p, spec, buf, _ = fresh_buffer(cfg, T=1, seeds=(7,))
    buf.advantage = np.ones((1, 1))
    buf.ret = buf.value.copy()
    before, _ = training._policy_log_probs(p.view(), spec, buf.features, buf.u, None)
    training.policy_update(p, spec, buf, AdamState(lr=1e-3), epochs=1)
    after, _ = training._policy_log_probs(p.view(), spec, buf.features, buf.u, None)
    assert after[0, 0] > before[0, 0]


def test_kl_never_exceeds_twice_the_budget():
    cfg = tiny()
    p, spec, buf, _ = fresh_buffer(cfg)
    buf.advantage = np.random.default_rng(2).normal(size=buf.value.shape)
    buf.ret = buf.value.copy()
    training.policy_update(p, spec, buf, AdamState(lr=0.05), kl_budget=1e-4, epochs=5)
    new, _ = training._policy_log_probs(p.view(), spec, buf.features, buf.u, None)
    assert np.mean(buf.log_prob - new) <= 2e-4 + 1e-12


def test_non_finite_ratio_names_step():
    cfg = tiny()
    p, spec, buf, _ = fresh_buffer(cfg)
    buf.advantage = np.ones_like(buf.value)
    buf.ret = buf.value.copy()
    buf.u = buf.u.copy()
    buf.u[0, 3] = 1e6  # finite density, but any parameter move overflows the ratio
    with pytest.raises(FloatingPointError, match="step 3"):
        training.policy_update(p, spec, buf, AdamState(lr=1e-3), kl_budget=1e300, epochs=2)


# --- train ---------------------------------------------------------------------------

def test_train_writes_run_directory(demos, tmp_path):
    res = training.train(tiny(), demos, TRACK, tmp_path / "run")
    run = tmp_path / "run"
    for f in ("config.json", "demos.json", "metrics.csv", "updates.csv", "checkpoints/bc.ckpt",
              "checkpoints/iter_00001.ckpt", "checkpoints/final.ckpt"):
        assert (run / f).is_file(), f
    lines = (run / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(training.METRICS_HEADER) and len(lines) == 3
    assert all(u[2] <= 2 * 0.01 for u in res.updates)


def test_train_is_byte_deterministic(demos, tmp_path):
    for name in ("a", "b"):
        training.train(tiny(), demos, TRACK, tmp_path / name)
    for f in ("metrics.csv", "updates.csv", "checkpoints/final.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_zero_iterations_equal_bc_checkpoint(demos, tmp_path):
    training.train(tiny(iterations=0), demos, TRACK, tmp_path)
    bc, _ = load_checkpoint(tmp_path / "checkpoints" / "bc.ckpt")
    final, _ = load_checkpoint(tmp_path / "checkpoints" / "final.ckpt")
    assert bc.keys() == final.keys() and all(np.array_equal(bc[k], final[k]) for k in bc)


def test_bc_only_skips_adversarial_loop(demos):
    res = training.train(tiny(ablation="bc_only"), demos, TRACK)
    assert res.metrics == [] and res.updates == [] and len(res.bc_losses) == 3


def test_sg_only_fits_gaussian(demos):
    res = training.train(tiny(ablation="sg_only"), demos, TRACK)
    assert res.sg is not None and np.allclose(res.sg.mu, agents.static_gaussian_fit(demos).mu)


def test_train_needs_demos():
    with pytest.raises(ValueError):
        training.train(tiny(), [], TRACK)


def test_checkpoint_restores_policy(demos, tmp_path):
    res = training.train(tiny(), demos, TRACK, tmp_path)
    pol = training.load_policy(tmp_path / "checkpoints" / "final.ckpt")
    assert pol.params.equal(res.params)
    assert np.array_equal(pol.global_state.M, res.global_state.M)
    training.check_dimensions(pol, 25, 3)
    with pytest.raises(Exception):
        training.check_dimensions(pol, 24, 3)
    a = training.simulate(pol, TRACK, 3, 5, seed=1)
    b = training.simulate(pol, TRACK, 3, 5, seed=1)
    assert len(a) == 3 and all(np.array_equal(x.actions, y.actions) for x, y in zip(a, b))


def test_ablate_table(demos, tmp_path):
    res = training.ablate(tiny(iterations=1), demos, TRACK, tmp_path, episodes=2, steps=5)
    assert list(res) == list(training.ABLATION_VARIANTS)
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert len(rows) == 5 and [r.split(",")[0] for r in rows[1:]] == list(training.ABLATION_VARIANTS)
    assert all(len(r.split(",")) == 5 for r in rows)


def test_ablate_names_failing_variant(demos, tmp_path):
    short = [training.truncate(t, 4) for t in demos]
    with pytest.raises(training.AblationError, match="full"):
        training.ablate(tiny(), short, TRACK, tmp_path, episodes=1, steps=5)
