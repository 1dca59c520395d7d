"""Training-dynamics and directional findings on the seeded default run (slow)."""
import math
from dataclasses import replace

import numpy as np
import pytest

from pa_retrieval.eval import evaluate_policy

pytestmark = pytest.mark.slow


def _metrics(run, kind):
    return {k: np.asarray(v) for k, v in run.policy(kind).metrics.items()}


def _eval(run, art, lam=None):
    corpus = run.corpus()
    _, test = run.requests()
    return evaluate_policy(art, run.env(corpus, lam), test)


@pytest.fixture(scope="module")
def main_rows(default_run):
    return {r.kind if r.kind in ("bc", "cql", "iql", "dpo") else r.policy: r for r in default_run.reports()}


def test_bc_loss_curve(default_run):
    loss = _metrics(default_run, "bc")["loss"]
    assert abs(loss[0] - math.log(11)) <= 0.15
    assert loss[-10:].mean() < 1.2


def test_cql_conservative_penalty_falls(default_run):
    cons = _metrics(default_run, "cql")["conservative"]
    assert abs(cons[0] - math.log(11)) <= 0.15
    assert cons[-10:].mean() < cons[0]


def test_iql_td_loss_drops_by_80_percent(default_run):
    q = _metrics(default_run, "iql")["q"]
    assert q[-50:].mean() <= 0.2 * q[:10].mean()


def test_dpo_preference_accuracy_rises(default_run):
    acc = _metrics(default_run, "dpo")["preference_accuracy"]
    assert acc[:10].mean() < 0.6
    assert acc[-50:].mean() > 0.75


def test_iql_stops_earlier_than_fixed_k5(main_rows):
    assert main_rows["iql"].mean_steps < 6.0


def test_cql_and_bc_behave_alike(main_rows):
    assert abs(main_rows["cql"].mean_steps - main_rows["bc"].mean_steps) <= 2.0


def test_iql_lower_step_cost_retrieves_more(default_run, main_rows):
    corpus = default_run.corpus()
    path = default_run.layout.ablation("lambda") / "dataset_lambda_0.05.jsonl"
    ds = default_run.dataset(corpus, 0.05, path)
    art = default_run.train("iql", ds, corpus=corpus)
    assert _eval(default_run, art, 0.05).mean_steps > main_rows["iql"].mean_steps


@pytest.fixture(scope="module")
def beta_sweep(default_run, main_rows):
    corpus = default_run.corpus()
    ds = default_run.dataset(corpus)
    out = {}
    for beta in (0.5, 1.0):
        art = default_run.train("dpo", ds, replace(default_run.cfg.dpo, beta_dpo=beta), corpus)
        out[beta] = _eval(default_run, art)
    out[3.0] = main_rows["dpo"]
    return out


def test_dpo_beta_sweep_accuracy_weakly_increases(beta_sweep):
    acc = [beta_sweep[b].accuracy for b in (0.5, 1.0, 3.0)]
    assert acc[0] <= acc[1] <= acc[2]


def test_dpo_beta_sweep_return_weakly_increases(beta_sweep):
    ret = [beta_sweep[b].mean_return for b in (0.5, 1.0, 3.0)]
    assert ret[0] <= ret[1] <= ret[2]


def test_trajectory_pairing_stays_within_logged_lengths(default_run, main_rows):
    corpus = default_run.corpus()
    art = default_run.train("dpo", default_run.dataset(corpus),
                            replace(default_run.cfg.dpo, pairing_mode="trajectory"), corpus)
    assert _eval(default_run, art).mean_steps <= 9.0
    assert main_rows["dpo"].mean_steps > 9.0
