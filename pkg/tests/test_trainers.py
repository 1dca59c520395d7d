import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from pa_retrieval import N_ACTIONS, OBS_DIM, STOP
from pa_retrieval.data import Episode, Transition
from pa_retrieval.corpus import Decision
from pa_retrieval.neural import (MlpParams, finite_difference_grad, forward, log_sum_exp, max_relative_error)
from pa_retrieval.trainers import (Batch, BcConfig, CqlConfig, PairSet, bc_loss, build_preference_pairs, cql_loss,
                                   dpo_loss, train_bc, train_cql)
from pa_retrieval.trainers.dpo import action_logp
from pa_retrieval.trainers.iql import advantage_weights, policy_loss, q_loss, value_loss

IN, HID = 6, 5


def small(seed, out=N_ACTIONS):
    return MlpParams.init(seed, in_dim=IN, hidden=HID, out_dim=out)


def small_batch(n=9, seed=0):
    r = np.random.default_rng(seed)
    mask = r.random((n, N_ACTIONS)) < 0.6
    mask[:, STOP] = True
    return Batch(r.normal(size=(n, IN)), r.integers(0, N_ACTIONS, n), r.normal(size=n), r.normal(size=(n, IN)),
                 (r.random(n) < 0.3).astype(float), mask)


def check_grad(loss_and_grad, params):
    _, g = loss_and_grad(params)
    numeric = finite_difference_grad(lambda p: loss_and_grad(p)[0], params, h=1e-4)
    return max_relative_error(g.flat(), numeric)


# ------------------------------------------------------------------ gradient checks
def test_bc_gradient():
    b = small_batch()
    assert check_grad(lambda p: bc_loss(p, b.obs, b.actions), small(1)) < 1e-4


@pytest.mark.parametrize("alpha", [0.0, 1.0, 5.0])
def test_cql_gradient(alpha):
    b, target = small_batch(), small(7)

    def f(p):
        total, _, _, g = cql_loss(p, target, b, alpha)
        return total, g
    assert check_grad(f, small(2)) < 1e-4


def test_iql_gradients():
    b = small_batch()
    q_t = np.random.default_rng(3).normal(size=len(b.actions))
    assert check_grad(lambda p: value_loss(p, b.obs, q_t, 0.9), small(3, out=1)) < 1e-4
    v_next = np.random.default_rng(4).normal(size=len(b.actions))
    assert check_grad(lambda p: q_loss(p, b, v_next, 1.0), small(4)) < 1e-4
    w = advantage_weights(np.random.default_rng(5).normal(size=len(b.actions)), 10.0)
    assert check_grad(lambda p: policy_loss(p, b.obs, b.actions, w), small(5)) < 1e-4


def _pairs(lens_w, lens_l, n):
    r = np.random.default_rng(9)
    return PairSet(r.integers(0, n, sum(lens_w)), np.concatenate([[0], np.cumsum(lens_w)]),
                   r.integers(0, n, sum(lens_l)), np.concatenate([[0], np.cumsum(lens_l)]))


@pytest.mark.parametrize("lens", [([1, 1, 1], [1, 1, 1]), ([3, 2], [4, 1])])
def test_dpo_gradient(lens):
    b = small_batch(12)
    pairs = _pairs(*lens, n=12)
    ref = action_logp(small(11), b.obs, b.actions)

    def f(p):
        loss, _, g = dpo_loss(p, ref, b.obs, b.actions, pairs, 3.0)
        return loss, g
    assert check_grad(f, small(6)) < 1e-4


# ------------------------------------------------------------------ loss oracles
def test_uniform_q_conservative_is_ln11():
    b = small_batch()
    zero = MlpParams.zeros_like(small(0))
    _, _, cons, _ = cql_loss(zero, zero, b, 1.0)
    assert cons == pytest.approx(math.log(11), abs=1e-9)


def test_conservative_single_peak():
    q = np.zeros(N_ACTIONS)
    q[0] = 1.0
    assert log_sum_exp(q) - q[0] == pytest.approx(1.5430, abs=1e-4)


def test_cql_alpha_zero_is_plain_td():
    b = small_batch()
    total, td, cons, _ = cql_loss(small(1), small(2), b, 0.0)
    assert total == td and cons > 0


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_conservative_term_non_negative(seed):
    b = small_batch(seed=seed)
    assert cql_loss(small(seed), small(seed + 1), b, 1.0, with_grad=False)[2] >= 0.0


def test_terminal_td_zero_when_q_matches_reward():
    b = small_batch(4)
    b.dones[:] = 1.0
    net = MlpParams.zeros_like(small(0))
    b.rewards[:] = 0.0
    assert cql_loss(net, net, b, 0.0)[1] == 0.0


def test_advantage_weight_clamp():
    w = advantage_weights(np.array([math.log(200) / 10.0, 0.0, -1.0]), 10.0)
    assert w[0] == pytest.approx(100.0)
    assert w[1] == 1.0
    assert w[2] == pytest.approx(math.exp(-10))


def test_zero_advantage_policy_loss_is_cross_entropy():
    b = small_batch()
    p = small(8)
    assert policy_loss(p, b.obs, b.actions, np.ones(len(b.actions)))[0] == pytest.approx(bc_loss(p, b.obs, b.actions)[0])


def test_expectile_regression_converges_to_tau():
    from pa_retrieval.neural import AdamState, adam_step
    v = MlpParams([np.zeros((1, 1))], [np.zeros(1)])
    obs = np.ones((200, 1))
    targets = np.tile([0.0, 1.0], 100)
    opt = AdamState.for_params(v, 1e-2)
    for _ in range(3000):
        _, g = value_loss(v, obs, targets, 0.9)
        adam_step(v, g, opt)
    assert float(forward(v, obs[:1])[0, 0]) == pytest.approx(0.9, abs=0.01)


def test_dpo_loss_oracles():
    b = small_batch(6)
    p = small(3)
    ref = action_logp(p, b.obs, b.actions)
    pairs = _pairs([1, 1, 1], [1, 1, 1], 6)
    loss, acc, _ = dpo_loss(p, ref, b.obs, b.actions, pairs, 3.0)
    assert loss == pytest.approx(math.log(2), abs=1e-9)
    assert acc == 0.5
    # lowering the reference log-prob of the winner by 0.5 gives delta = 0.5
    one = PairSet(np.array([0]), np.array([0, 1]), np.array([1]), np.array([0, 1]))
    ref3 = ref.copy()
    ref3[0] -= 0.5
    loss, acc, _ = dpo_loss(p, ref3, b.obs, b.actions, one, 3.0)
    assert loss == pytest.approx(-math.log(1 / (1 + math.exp(-1.5))), abs=1e-12)
    assert loss == pytest.approx(0.2014, abs=1e-4)
    assert acc == 1.0


# ------------------------------------------------------------------ preference pairs
def _episode(i, rid, actions, ret, cpt="45378"):
    ts = [Transition(np.zeros(OBS_DIM), a, -0.1, np.zeros(OBS_DIM), a == STOP, 1.0, i, t, rid, ())
          for t, a in enumerate(actions)]
    return Episode(i, rid, cpt, "x", ts, ret, len(ts), Decision.APPROVE, True)


def test_transition_pairs_follow_shorter_episode():
    eps = [_episode(0, 1, [0, 0, STOP], 0.7), _episode(1, 1, [0, 0, 0, 0, STOP], -1.3)]
    ps = build_preference_pairs(eps, "transition")
    assert ps.tuples() == [((0,), (3,)), ((1,), (4,)), ((2,), (5,))]


def test_trajectory_pairs_use_whole_episodes():
    eps = [_episode(0, 1, [0, 0, STOP], -1.3), _episode(1, 1, [0, STOP], 0.8)]
    ps = build_preference_pairs(eps, "trajectory")
    assert ps.tuples() == [((3, 4), (0, 1, 2))]


def test_no_pairs_for_ties_or_singletons():
    assert len(build_preference_pairs([_episode(0, 1, [STOP], 1.0), _episode(1, 1, [0, STOP], 1.0)])) == 0
    assert len(build_preference_pairs([_episode(0, 1, [STOP], 1.0)])) == 0


def test_unknown_pairing_mode():
    with pytest.raises(ValueError):
        build_preference_pairs([], "per-token")


def test_pairs_fall_back_to_procedure_pool():
    eps = [_episode(0, 1, [STOP], 1.0), _episode(1, 2, [STOP], -1.0), _episode(2, 3, [STOP], 0.0, cpt="72148")]
    assert len(build_preference_pairs(eps)) == 1


def test_episode_pairs_are_equally_likely():
    eps = [_episode(0, 1, [0, 0, STOP], 0.7), _episode(1, 1, [0, 0, 0, 0, STOP], -1.3), _episode(2, 1, [STOP], 0.0)]
    ps = build_preference_pairs(eps)
    # three episode pairs: 3 + 1 + 1 tuples, each pair carrying total share 1
    assert len(ps) == 5
    assert ps.weight.sum() == pytest.approx(3.0)


# ------------------------------------------------------------------ toy training runs
def test_bc_memorises_a_single_pair(array_dataset):
    obs = np.random.default_rng(0).normal(size=(1, OBS_DIM)).repeat(32, axis=0)
    d = array_dataset(obs, [4] * 32, [0.0] * 32)
    art = train_bc(d, BcConfig(epochs=100, batch=32))
    assert art.metrics["loss"][0] == pytest.approx(math.log(11), abs=0.15)
    assert art.metrics["loss"][-1] < 0.01
    assert int(np.argmax(forward(art.params, obs[0]))) == 4


def _tabular_cql_argmax(actions, rewards, alpha):
    def f(q):
        return np.mean((q[actions] - rewards) ** 2) + alpha * np.mean(log_sum_exp(q) - q[actions])
    res = minimize(f, np.zeros(N_ACTIONS), method="L-BFGS-B", bounds=[(-60, 60)] * N_ACTIONS)
    return int(np.argmax(res.x))


def test_cql_large_alpha_follows_behavior_frequency(array_dataset):
    rng = np.random.default_rng(0)
    states = rng.normal(size=(3, OBS_DIM)) * 5 / np.sqrt(OBS_DIM)
    freqs = [(60, 30, 10), (20, 70, 10), (10, 20, 70)]
    reward = {3: 0.0, 7: 0.5, STOP: 1.0}
    obs, acts, rews = [], [], []
    for s, counts in enumerate(freqs):
        for a, c in zip((3, 7, STOP), counts):
            obs += [states[s]] * c
            acts += [a] * c
            rews += [reward[a]] * c
    d = array_dataset(np.array(obs), acts, rews)
    art = train_cql(d, CqlConfig(alpha=100.0, epochs=300, lr=1e-3))
    learned = forward(art.params, states).argmax(axis=1).tolist()
    acts, rews = np.array(acts), np.array(rews)
    oracle = [_tabular_cql_argmax(acts[100 * s:100 * (s + 1)], rews[100 * s:100 * (s + 1)], 100.0) for s in range(3)]
    assert oracle == [3, 7, STOP]
    assert learned == oracle
    plain = train_cql(d, CqlConfig(alpha=0.0, epochs=300, lr=1e-3))
    assert forward(plain.params, states).argmax(axis=1).tolist() == [STOP] * 3


def test_trainers_reject_empty_or_bad_config(array_dataset):
    d = array_dataset(np.zeros((2, OBS_DIM)), [0, 1], [0.0, 0.0])
    with pytest.raises(ValueError):
        train_cql(d, CqlConfig(gamma=0.9))
    with pytest.raises(ValueError):
        train_bc(d, BcConfig(epochs=-1))


def test_training_is_bit_reproducible(small_dataset):
    a = train_cql(small_dataset, CqlConfig(epochs=5))
    b = train_cql(small_dataset, CqlConfig(epochs=5))
    assert np.array_equal(a.params.flat(), b.params.flat())
