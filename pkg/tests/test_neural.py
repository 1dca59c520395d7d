import math

import numpy as np
import pytest

from pa_retrieval.neural import (AdamState, MlpParams, adam_step, backward, expectile_loss, finite_difference_grad,
                                 forward, forward_cache, global_norm, log_sigmoid, log_softmax, log_sum_exp,
                                 max_relative_error, params_from_json, params_to_json, softmax_cross_entropy)


def toy_net():
    return MlpParams([np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([[1.0], [-2.0]])],
                     [np.array([0.0, 0.5]), np.array([0.25])])


def test_default_parameter_count():
    assert MlpParams.init(0).n_params == 265_483


def test_hand_computed_forward():
    # hidden = relu([1 + 2, -1 + 0.5 + 0.5]) = [3, 0]; out = 3 - 0 + 0.25
    assert np.allclose(forward(toy_net(), np.array([1.0, 1.0])), [3.25])
    # zero input: hidden = relu([0, 0.5]); out = -2 * 0.5 + 0.25
    assert np.allclose(forward(toy_net(), np.array([[0.0, 0.0]])), [[-0.75]])


def test_zero_output_gradient_gives_zero_gradients():
    p = MlpParams.init(3, in_dim=5, hidden=4, out_dim=3)
    out, acts = forward_cache(p, np.random.default_rng(0).normal(size=(6, 5)))
    g = backward(p, acts, np.zeros_like(out))
    assert global_norm(g) == 0.0


def test_backward_matches_finite_differences():
    p = MlpParams.init(1, in_dim=4, hidden=5, out_dim=3)
    x = np.random.default_rng(1).normal(size=(7, 4))
    w = np.random.default_rng(2).normal(size=(7, 3))
    _, acts = forward_cache(p, x)
    analytic = backward(p, acts, w).flat()
    numeric = finite_difference_grad(lambda q: float(np.sum(w * forward(q, x))), p)
    assert max_relative_error(analytic, numeric) < 1e-6


def test_adam_first_step_moves_by_lr():
    p = MlpParams([np.array([[0.5]])], [np.array([0.0])])
    g = MlpParams([np.array([[0.3]])], [np.array([-0.2])])
    adam_step(p, g, AdamState.for_params(p, 1e-3))
    assert p.weights[0][0, 0] - 0.5 == pytest.approx(-1e-3, rel=1e-4)
    assert p.biases[0][0] == pytest.approx(1e-3, rel=1e-4)


def test_adam_clips_by_global_norm():
    p = MlpParams([np.zeros((1, 2))], [np.zeros(2)])
    g = MlpParams([np.array([[6.0, 0.0]])], [np.array([0.0, 8.0])])
    st = AdamState.for_params(p, 1e-3)
    norm = adam_step(p, g, st, clip_norm=1.0)
    assert norm == pytest.approx(10.0)
    assert st.m.weights[0] == pytest.approx(0.1 * 0.1 * np.array([[6.0, 0.0]]))
    assert st.m.biases[0] == pytest.approx(0.1 * 0.1 * np.array([0.0, 8.0]))


def test_adam_zero_gradient_is_a_no_op():
    p = MlpParams.init(0, in_dim=3, hidden=2, out_dim=2)
    before = p.flat()
    adam_step(p, MlpParams.zeros_like(p), AdamState.for_params(p, 1e-3))
    assert np.array_equal(p.flat(), before)


def test_adam_rejects_non_finite():
    from pa_retrieval.neural import DivergenceError
    p = MlpParams([np.zeros((1, 1))], [np.zeros(1)])
    with pytest.raises(DivergenceError):
        adam_step(p, MlpParams([np.array([[np.nan]])], [np.zeros(1)]), AdamState.for_params(p, 1e-3))


@pytest.mark.parametrize("v, expected", [([0.0, 0.0], math.log(2)), ([1000.0, 1000.0], 1000 + math.log(2)),
                                         ([1.0, 2.0, 3.0], 3.40760596)])
def test_log_sum_exp(v, expected):
    assert log_sum_exp(np.array(v)) == pytest.approx(expected, abs=1e-8)


def test_log_softmax_respects_mask():
    lp = log_softmax(np.array([[1.0, 2.0, 3.0]]), np.array([[True, False, True]]))
    assert lp[0, 1] == -np.inf
    assert np.exp(lp[0, [0, 2]]).sum() == pytest.approx(1.0)


@pytest.mark.parametrize("u, expected", [(2.0, 3.6), (-2.0, 0.4), (0.0, 0.0)])
def test_expectile_loss(u, expected):
    assert expectile_loss(u, 0.9) == pytest.approx(expected)


def test_softmax_cross_entropy():
    logits = np.zeros(11)
    logits[0] = 1.0
    # ln((e + 10) / e) evaluates to 1.5430
    assert softmax_cross_entropy(logits, 0) == pytest.approx(math.log((math.e + 10) / math.e), abs=1e-12)
    assert softmax_cross_entropy(logits, 0) == pytest.approx(1.5430, abs=1e-4)
    assert softmax_cross_entropy(np.zeros(11), 4) == pytest.approx(math.log(11))


def test_log_sigmoid_is_stable():
    assert log_sigmoid(0.0) == pytest.approx(-math.log(2))
    assert log_sigmoid(-800.0) == pytest.approx(-800.0)
    assert log_sigmoid(800.0) == pytest.approx(0.0)


def test_checkpoint_round_trip_is_exact():
    p = MlpParams.init(5, in_dim=6, hidden=4, out_dim=3)
    q = params_from_json(params_to_json(p))
    assert np.array_equal(p.flat(), q.flat())
    assert q.shapes == p.shapes
