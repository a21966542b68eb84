import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magail import agents
from magail.laneworld import PERSONAS, TrackSpec, record_demos
from magail.laneworld import world as lw
from magail.numerics import ParamStore, ShapeError, ad, finite_diff_grad, forward_backward, relative_error

SMALL = agents.ModelSpec(embed_dim=4, hidden=6, local_slots=5, global_slots=6)


def small_params(seed=0, spec=SMALL):
    rng = np.random.default_rng(seed)
    p = ParamStore(seed)
    agents.init_embed(p, spec, rng)
    agents.init_memories(p, spec, rng)
    agents.init_policy(p, spec, rng)
    return p


def zeroed(p):
    for n in p:
        p[n] = np.zeros_like(p[n])
    return p


def random_features(rng, shape=()):
    lo = np.maximum(lw.FEATURE_LOW, -40.0)
    hi = np.minimum(lw.FEATURE_HIGH, 40.0)
    return lo + rng.uniform(size=shape + (lw.FEATURE_DIM,)) * (hi - lo)


# --- embed / augment ---------------------------------------------------------------

def test_zero_weights_give_zero_embedding(rng):
    p = zeroed(small_params())
    assert np.array_equal(agents.embed(p.view(), random_features(rng)), np.zeros(4))


@given(st.integers(0, 2**31 - 1))
def test_embedding_is_strictly_inside_unit_box(seed):
    rng = np.random.default_rng(seed)
    e = agents.embed(small_params(seed).view(), random_features(rng, (7,)))
    assert e.shape == (7, 4) and np.all(np.abs(e) < 1)


def test_embed_rejects_bad_input():
    with pytest.raises(ShapeError):
        agents.embed(small_params().view(), np.zeros(24))
    with pytest.raises(ValueError):
        agents.embed(small_params().view(), np.full(25, np.nan))


def test_embed_gradient(rng):
    p = small_params(1)
    f = random_features(rng, (3,))
    names = p.names("embed/")
    forward_backward(lambda q: ad.sum(agents.embed(q, f)), p)
    fd = finite_diff_grad(lambda q: float(np.sum(agents.embed(q, f))), p, names=names)
    for n in names:
        assert relative_error(p.grad(n), fd[n]) <= 1e-4, n


def test_augment_concatenates_in_order():
    out = agents.augment(np.array([1.0, 2]), np.array([3.0, 4]), np.array([5.0, 6]))
    assert out.tolist() == [1, 2, 3, 4, 5, 6]
    z = np.zeros(2)
    assert agents.augment(np.array([1.0, 2]), z, z).tolist() == [1, 2, 0, 0, 0, 0]
    with pytest.raises(ShapeError):
        agents.augment(np.zeros(2), np.zeros(3), np.zeros(2))


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_augment_then_split_is_identity(l, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(size=(2, l)) for _ in range(3)]
    back = agents.split_augmented(agents.augment(*parts), l)
    for a, b in zip(parts, back):
        assert np.array_equal(a, b)


# --- policy --------------------------------------------------------------------------

def test_zero_weights_policy():
    p = zeroed(small_params())
    mean, std, value = agents.policy_forward(p.view(), np.ones(12))
    assert mean.tolist() == [0, 0, 0] and std.tolist() == [1, 1, 1] and value == 0


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_std_is_clamped(log_std):
    p = small_params()
    p["policy/log_std"] = np.array(log_std)
    _, std, _ = agents.policy_forward(p.view(), np.zeros(12))
    assert np.all(std >= 1e-3 - 1e-15) and np.all(std <= 1.0)


def test_initial_std_is_per_dimension():
    _, std, _ = agents.policy_forward(small_params().view(), np.zeros(12))
    assert np.allclose(std, agents.INIT_STD)


def test_policy_rejects_wrong_width():
    with pytest.raises(ShapeError):
        agents.policy_forward(small_params().view(), np.zeros(11))


def test_log_prob_gradient(rng):
    p = small_params(2)
    s = rng.normal(size=(4, 12))
    u = rng.normal(size=(4, 3))

    def lp(q):
        mean, _, _ = agents.policy_forward(q, s)
        return ad.sum(agents.gaussian_log_prob(u, mean, agents.log_std(q)))

    names = p.names("policy/")
    forward_backward(lp, p)
    fd = finite_diff_grad(lambda q: float(lp(q)), p, names=names)
    for n in names:
        assert relative_error(p.grad(n), fd[n]) <= 1e-4, n


# --- sampling --------------------------------------------------------------------------

def test_near_deterministic_sample_squashes_zero(rng):
    a, _, _ = agents.sample_action(np.zeros(3), np.full(3, 1e-3), rng)
    assert np.allclose(a, [0.0, 0.5, 0.5], atol=1e-2)


def test_log_prob_at_mean_with_unit_std():
    lp = agents.gaussian_log_prob(np.zeros(3), np.zeros(3), np.zeros(3))
    assert lp == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-12)
    assert lp == pytest.approx(-2.7568, abs=1e-4)


def test_log_prob_matches_scipy(rng):
    from scipy.stats import norm
    mean, std = rng.normal(size=3), rng.uniform(0.1, 2.0, size=3)
    u = rng.normal(size=3)
    expected = norm.logpdf(u, mean, std).sum()
    assert agents.gaussian_log_prob(u, mean, np.log(std)) == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(-20, 20), st.floats(1e-3, 1.0))
def test_sampled_actions_are_in_range(seed, m, s):
    a, lp, u = agents.sample_action(np.full((5, 3), m), np.full(3, s), np.random.default_rng(seed))
    assert np.all(a[:, 0] >= -1) and np.all(a[:, 0] <= 1)
    assert np.all(a[:, 1:] >= 0) and np.all(a[:, 1:] <= 1)
    assert np.all(np.isfinite(lp))


def test_sampling_is_reproducible():
    draw = lambda: agents.sample_action(np.zeros((4, 3)), np.full(3, 0.3), np.random.default_rng(5))
    for x, y in zip(draw(), draw()):
        assert np.array_equal(x, y)


def test_sample_rejects_nonpositive_std(rng):
    with pytest.raises(ValueError):
        agents.sample_action(np.zeros(3), np.array([1.0, 0.0, 1.0]), rng)


# --- encoding --------------------------------------------------------------------------

def test_encode_shapes_and_local_reset(rng):
    p = small_params().view()
    f = random_features(rng, (2, 5))
    s_aug, m_local, alphas = agents.encode(p, SMALL, f, keep_alpha=True)
    assert s_aug.shape == (2, 5, 12) and m_local.shape == (2, 5, 4) and len(alphas) == 5
    # each batch row is an independent episode starting from an empty memory
    solo, _, _ = agents.encode(p, SMALL, f[1:])
    assert np.allclose(solo[0], s_aug[1], atol=1e-14)
    # without a global matrix, the global part is zero
    assert np.array_equal(s_aug[..., 8:], np.zeros((2, 5, 4)))


def test_no_local_variant_zeroes_local_part(rng):
    spec = agents.ModelSpec(embed_dim=4, hidden=6, local_slots=5, global_slots=6, use_local=False)
    s_aug, m_local, _ = agents.encode(small_params().view(), spec, random_features(rng, (1, 4)))
    assert np.array_equal(s_aug[..., 4:8], np.zeros((1, 4, 4)))


# --- behavioural cloning ----------------------------------------------------------------

@pytest.fixture(scope="module")
def demos():
    return record_demos(TrackSpec(), list(PERSONAS.values()), 2, 12, 3).trajectories


def test_zero_epochs_leave_params_untouched(demos):
    p = small_params()
    before = p.copy()
    _, losses = agents.bc_train(demos, p, SMALL, 0)
    assert losses == [] and p.equal(before)


def test_bc_needs_data():
    with pytest.raises(ValueError):
        agents.bc_train([], small_params(), SMALL, 3)


def test_bc_fits_a_repeated_pair(demos):
    t = demos[0]
    rep = type(t)(np.repeat(t.features[:1], 12, axis=0), np.repeat(t.actions[:1], 12, axis=0),
                  t.persona, t.seed, {k: v[:12] for k, v in t.raw.items()}, t.events, t.dt)
    _, losses = agents.bc_train([rep], small_params(), SMALL, 200, lr=1e-2)
    assert losses[-1] < losses[0]


def test_bc_only_touches_its_own_parameters(demos):
    p = small_params()
    before = p.copy()
    agents.bc_train(demos, p, SMALL, 3)
    changed = {n for n in p if not np.array_equal(p[n], before[n])}
    assert changed and changed <= set(agents.bc_names(p))
    assert np.array_equal(p["policy/log_std"], before["policy/log_std"])


# --- static Gaussian -------------------------------------------------------------------

def _action_traj(actions, template):
    actions = np.asarray(actions, dtype=np.float64)
    return type(template)(np.zeros((len(actions), 25)), actions, "x", 0,
                          {k: np.zeros(len(actions)) for k in lw.RAW_FIELDS},
                          [[] for _ in actions], 0.1)


def test_static_gaussian_constant(demos):
    sg = agents.static_gaussian_fit([_action_traj([[0.1, 0.2, 0.3]] * 4, demos[0])])
    assert np.allclose(sg.mu, [0.1, 0.2, 0.3]) and np.array_equal(sg.sigma, np.full(3, 1e-3))


def test_static_gaussian_two_point(demos):
    sg = agents.static_gaussian_fit([_action_traj([[0, 0, 0], [1, 1, 1]], demos[0])])
    assert np.allclose(sg.mu, 0.5) and np.allclose(sg.sigma, 0.5)


def test_static_gaussian_order_invariant_and_errors(demos):
    a = agents.static_gaussian_fit(demos)
    b = agents.static_gaussian_fit(demos[::-1])
    assert np.allclose(a.mu, b.mu, atol=1e-15) and np.allclose(a.sigma, b.sigma, atol=1e-15)
    with pytest.raises(ValueError):
        agents.static_gaussian_fit([])
