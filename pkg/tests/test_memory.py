import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from magail import memory as mem
from magail.numerics import ParamStore, ShapeError, ad, finite_diff_grad, forward_backward, relative_error

finite = st.floats(-50, 50, allow_nan=False)


def zero_params(l, prefix="m"):
    p = ParamStore()
    mem.init_params(p, prefix, l, np.random.default_rng(0), scale=0.0)
    return p


def random_params(l, seed=0, prefix="m"):
    p = ParamStore()
    mem.init_params(p, prefix, l, np.random.default_rng(seed), scale=0.8)
    return p


def state_with(M, l=None):
    M = np.asarray(M, dtype=np.float64)
    k, l = M.shape
    z = np.zeros(l)
    return mem.MemoryState(M, z, z.copy(), z.copy(), z.copy(), mem.MemoryConfig(k, l))


# --- LSTM -------------------------------------------------------------------

def test_lstm_zero_everything():
    p = zero_params(1)
    h, c = mem.lstm_cell(p.view(), "m/read", np.zeros(1), np.zeros(1), np.zeros(1))
    assert h[0] == 0.0 and c[0] == 0.0


def test_lstm_zero_weights_with_cell_state():
    p = zero_params(1)
    h, c = mem.lstm_cell(p.view(), "m/read", np.zeros(1), np.array([2.0]), np.zeros(1))
    assert c[0] == 1.0
    assert h[0] == pytest.approx(0.5 * math.tanh(1.0), abs=1e-15)
    assert h[0] == pytest.approx(0.3808, abs=1e-4)


def test_lstm_matches_gate_equations(rng):
    l = 3
    p = random_params(l, 4)
    for g in mem.GATES:
        p[f"m/read/b_{g}"] = rng.normal(size=l)
    h, c, x = rng.normal(size=(3, l))
    hx = np.concatenate([h, x])
    z = {g: hx @ p[f"m/read/w_{g}"] + p[f"m/read/b_{g}"] for g in mem.GATES}
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    c_ref = sig(z["f"]) * c + sig(z["i"]) * np.tanh(z["c"])
    h_ref = sig(z["o"]) * np.tanh(c_ref)
    h2, c2 = mem.lstm_cell(p.view(), "m/read", h, c, x)
    assert np.allclose(h2, h_ref, atol=1e-14) and np.allclose(c2, c_ref, atol=1e-14)


@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.integers(0, 5))
def test_lstm_hidden_bounded(hcx, seed):
    p = random_params(4, seed)
    h, _ = mem.lstm_cell(p.view(), "m/write", hcx[0], hcx[1], hcx[2])
    assert np.all(np.abs(h) < 1)


@given(arrays(np.float64, (3, 4), elements=finite))
def test_lstm_hidden_bounded_when_saturated(hcx):
    # tanh rounds to exactly 1 in float64 once its argument passes ~19
    h, _ = mem.lstm_cell(random_params(4).view(), "m/write", hcx[0], hcx[1], hcx[2])
    assert np.all(np.abs(h) <= 1)


def test_lstm_shape_error():
    p = zero_params(2)
    with pytest.raises(ShapeError):
        mem.lstm_cell(p.view(), "m/read", np.zeros(2), np.zeros(2), np.zeros(3))


# --- attention and reading --------------------------------------------------

def test_attend_zero_memory_is_uniform():
    alpha = mem.attend(np.zeros((5, 3)), np.array([1.0, -2.0, 0.5]))
    assert np.allclose(alpha, 0.2, atol=1e-15)


def test_attend_identity_example():
    alpha = mem.attend(np.eye(2), np.array([2.0, 0.0]))
    e2 = math.exp(2.0)
    assert np.allclose(alpha, [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-12)
    assert np.allclose(alpha, [0.88080, 0.11920], atol=1e-5)


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite))
def test_attention_is_a_distribution(M, q):
    alpha = mem.attend(M, q)
    assert np.all(alpha >= 0)
    assert abs(alpha.sum() - 1.0) <= 1e-12


@given(arrays(np.float64, 7, elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariance(a, c):
    assert np.allclose(ad.softmax(a), ad.softmax(a + c), atol=1e-12, rtol=0)


@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)), arrays(np.float64, 3, elements=st.floats(-5, 5)),
       st.floats(0.1, 10))
def test_common_score_scaling_keeps_argmax(M, q, s):
    a0, a1 = mem.scores(M, q), mem.scores(M * s, q)
    if np.sort(a0)[-1] - np.sort(a0)[-2] > 1e-9:
        assert np.argmax(mem.attend(M, q)) == np.argmax(mem.attend(M * s, q))
    assert np.allclose(a1, s * a0)


def test_fresh_read_is_uniform_and_zero():
    p = zero_params(3)
    ro, _ = mem.read(mem.zero_state(mem.MemoryConfig(4, 3)), np.array([1.0, 2.0, 3.0]), p.view(), "m")
    assert np.array_equal(ro.q, np.zeros(3))
    assert np.allclose(ro.alpha, 0.25)
    assert np.array_equal(ro.m, np.zeros(3))


def test_one_hot_attention_returns_row():
    M = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    alpha = mem.attend(M, np.array([800.0, 0.0]))
    assert np.array_equal(mem.output(M, alpha), M[0])


@given(arrays(np.float64, (5, 3), elements=finite), st.permutations(range(5)), st.integers(0, 100))
def test_output_permutation_symmetry(M, perm, seed):
    alpha = np.random.default_rng(seed).dirichlet(np.ones(5))
    perm = np.array(perm)
    assert np.allclose(mem.output(M, alpha), mem.output(M[perm], alpha[perm]), atol=1e-12)


@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, 3, elements=finite))
def test_output_in_convex_hull(M, q):
    m = mem.output(M, mem.attend(M, q))
    assert np.max(np.abs(m)) <= np.max(np.abs(M)) + 1e-12


def test_batched_reading_matches_per_row(rng):
    M = rng.normal(size=(6, 4))
    q = rng.normal(size=(3, 4))
    batched = mem.output(M, mem.attend(M, q))
    rows = np.stack([mem.output(M, mem.attend(M, qi)) for qi in q])
    assert np.allclose(batched, rows, atol=1e-14)


# --- writing -----------------------------------------------------------------

def test_one_hot_write_replaces_slot():
    M = np.array([[1.0, 1.0], [2.0, 2.0]])
    out = mem.convex_update(M, np.array([0.0, 1.0]), np.array([5.0, 5.0]))
    assert np.array_equal(out, [[1.0, 1.0], [5.0, 5.0]])


def test_half_write_example():
    M = np.array([[1.0, 1.0], [2.0, 2.0]])
    out = mem.convex_update(M, np.array([0.5, 0.5]), np.zeros(2))
    assert np.array_equal(out, [[0.5, 0.5], [1.0, 1.0]])


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite),
       st.integers(0, 1000))
def test_write_slot_preservation_and_contraction(M, w, seed):
    r = np.random.default_rng(seed)
    alpha = r.dirichlet(np.ones(6))
    alpha[r.random(6) < 0.4] = 0.0
    alpha = alpha / alpha.sum() if alpha.sum() > 0 else np.eye(6)[0]
    out = mem.convex_update(M, alpha, w)
    for j in np.flatnonzero(alpha == 0):
        assert np.array_equal(out[j], M[j])
    assert np.max(np.abs(out)) <= max(np.max(np.abs(M)), np.max(np.abs(w))) + 1e-12


def test_write_rejects_unnormalised_attention():
    p = zero_params(2)
    s = state_with(np.zeros((3, 2)))
    bad = mem.MemoryReadout(np.zeros(2), np.array([0.5, 0.5, 0.1]), np.zeros(2))
    with pytest.raises(ValueError, match="not normalised"):
        mem.write(s, bad, p.view(), "m")


def test_write_uses_write_controller_output(rng):
    p = random_params(2, 3)
    s = state_with(rng.normal(size=(3, 2)))
    ro, s1 = mem.read(s, rng.normal(size=2), p.view(), "m")
    s2 = mem.write(s1, ro, p.view(), "m")
    m_w, _ = mem.lstm_cell(p.view(), "m/write", s1.h_w, s1.c_w, ro.m)
    assert np.array_equal(s2.h_w, m_w)
    assert np.allclose(s2.M, mem.convex_update(s.M, ro.alpha, m_w), atol=0)


def test_rereading_shifts_mass_to_written_slot():
    M = np.array([[0.2, 0.0], [0.0, 0.2]])
    q = np.array([1.0, 0.5])
    before = mem.attend(M, q)
    written = mem.convex_update(M, np.array([0.0, 1.0]), np.array([0.9, 0.9]))
    after = mem.attend(written, q)
    # scores on the written state: slot 1 gets q . [0.9, 0.9] = 1.35 > 0.2
    e = np.exp([0.2, 1.35])
    assert np.allclose(after, e / e.sum(), atol=1e-12)
    assert after[1] > before[1]


def test_step_is_deterministic_and_keeps_shape(rng):
    p = random_params(3, 1)
    s0 = state_with(rng.normal(size=(4, 3)))
    x = rng.normal(size=3)
    r1, t1 = mem.step(s0, x, p.view(), "m")
    r2, t2 = mem.step(s0, x, p.view(), "m")
    assert np.array_equal(r1.m, r2.m) and np.array_equal(t1.M, t2.M)
    assert t1.M.shape == (4, 3) and t1.config == s0.config


def test_reset_properties(rng):
    p = random_params(3, 1)
    s = mem.zero_state(mem.MemoryConfig(4, 3))
    for _ in range(3):
        _, s = mem.step(s, rng.normal(size=3), p.view(), "m")
    r1 = mem.reset(s)
    r2 = mem.reset(r1)
    for k in ("M", "h_r", "c_r", "h_w", "c_w"):
        assert not np.any(getattr(r1, k))
        assert np.array_equal(getattr(r1, k), getattr(r2, k))
    assert r1.config == s.config
    ro, _ = mem.read(r1, rng.normal(size=3), p.view(), "m")
    assert np.allclose(ro.alpha, 0.25, atol=1e-15)


def test_zero_initialised_slots_stay_identical(rng):
    # content addressing cannot break the symmetry of an all-zero memory
    p = random_params(3, 2)
    s = mem.zero_state(mem.MemoryConfig(5, 3))
    for _ in range(6):
        ro, s = mem.step(s, rng.normal(size=3), p.view(), "m")
        assert np.allclose(ro.alpha, 0.2, atol=1e-15)
    assert np.allclose(s.M, s.M[0], atol=1e-15)


def test_snapshot_round_trip(rng):
    p = random_params(3, 1)
    _, s = mem.step(mem.zero_state(mem.MemoryConfig(4, 3)), rng.normal(size=3), p.view(), "m")
    back = mem.MemoryState.from_snapshot(s.snapshot("g"), "g")
    for k in ("M", "h_r", "c_r", "h_w", "c_w"):
        assert np.array_equal(getattr(back, k), getattr(s, k))
    assert back.config == s.config


# --- dispersion ---------------------------------------------------------------

def test_dispersion_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert mem.dispersion(v, v) == pytest.approx(0.0, abs=1e-15)
    assert mem.dispersion(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert mem.dispersion(v, -v) == pytest.approx(2.0, abs=1e-15)
    assert mem.dispersion(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-15)
    assert mem.dispersion(np.zeros(3), v) == 0.0


@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_dispersion_range_and_scale(a, b, s1, s2):
    d = mem.dispersion(a, b)
    assert 0.0 <= d <= 2.0
    if np.linalg.norm(a) >= 1e-6:
        assert mem.dispersion(s1 * a, s2 * a) <= 1e-12


def test_dispersion_is_row_wise(rng):
    a, b = rng.normal(size=(2, 5, 3))
    d = mem.dispersion(a, b)
    assert np.allclose(d, [mem.dispersion(x, y) for x, y in zip(a, b)], atol=1e-15)


# --- gradients ------------------------------------------------------------------

def test_step_gradients_match_finite_differences(rng):
    l, k = 3, 4
    p = random_params(l, 7)
    p.add("M0", rng.normal(size=(k, l)))
    p.add("s", rng.normal(size=l))
    target = rng.normal(size=(k, l))

    def loss(q):
        s0 = mem.MemoryState(q["M0"], np.zeros(l), np.zeros(l), np.zeros(l), np.zeros(l),
                             mem.MemoryConfig(k, l))
        ro, s1 = mem.step(s0, q["s"], q, "m")
        ro2, s2 = mem.step(s1, ad.tanh(q["s"]), q, "m")
        return ad.add(ad.sum(ad.mul(s2.M, target)), ad.dot(ro2.m, ro.m))

    forward_backward(loss, p)
    fd = finite_diff_grad(lambda q: float(loss(q)), p)
    for n in p.names():
        assert relative_error(p.grad(n), fd[n]) <= 1e-4, n
