"""Implicit Q-learning: expectile value fit, V-bootstrapped TD, advantage-weighted cloning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import N_ACTIONS
from ..data import Dataset
from ..neural import (AdamState, MlpParams, adam_step, backward, expectile_loss, forward, forward_cache,
                      log_softmax, softmax)
from .artifact import PolicyArtifact
from .common import check_finite, config_dict, onehot, validate
from .cql import Batch

WEIGHT_CLAMP = 100.0


@dataclass
class IqlConfig:
    tau: float = 0.9
    beta_iql: float = 10.0
    weight_clamp: float = WEIGHT_CLAMP
    gamma: float = 1.0
    lr: float = 1e-3
    epochs: int = 1000
    batch: int = 256
    target_sync_every: int = 10
    clip: float = 1.0
    steps_per_epoch: int = 1
    seed: int = 0


@dataclass
class IqlNets:
    q: MlpParams
    target_q: MlpParams
    v: MlpParams
    policy: MlpParams

    @classmethod
    def init(cls, seed: int) -> "IqlNets":
        q = MlpParams.init(seed, out_dim=N_ACTIONS)
        return cls(q, q.copy(), MlpParams.init(seed + 1, out_dim=1), MlpParams.init(seed + 2, out_dim=N_ACTIONS))


def advantage_weights(adv: np.ndarray, beta: float, clamp: float = WEIGHT_CLAMP) -> np.ndarray:
    # clamp in log space so large advantages never overflow
    return np.exp(np.minimum(beta * adv, np.log(clamp)))


def value_loss(v_net: MlpParams, obs: np.ndarray, q_target_sa: np.ndarray, tau: float):
    v, acts = forward_cache(v_net, obs)
    u = q_target_sa - v[:, 0]
    loss = float(np.mean(expectile_loss(u, tau)))
    g = -2.0 * np.abs(tau - (u < 0)) * u / len(u)
    return loss, backward(v_net, acts, g[:, None])


def q_loss(q_net: MlpParams, batch: Batch, v_next: np.ndarray, gamma: float):
    y = batch.rewards + gamma * v_next * (1.0 - batch.dones)
    q, acts = forward_cache(q_net, batch.obs)
    rows = np.arange(len(batch.actions))
    err = q[rows, batch.actions] - y
    g = np.zeros_like(q)
    g[rows, batch.actions] = 2.0 * err / len(err)
    return float(np.mean(err ** 2)), backward(q_net, acts, g)


def policy_loss(pi_net: MlpParams, obs: np.ndarray, actions: np.ndarray, weights: np.ndarray):
    logits, acts = forward_cache(pi_net, obs)
    n = len(actions)
    logp = log_softmax(logits)[np.arange(n), actions]
    loss = -float(np.mean(weights * logp))
    g = weights[:, None] * (softmax(logits) - onehot(actions, logits.shape[1])) / n
    return loss, backward(pi_net, acts, g)


def iql_losses(nets: IqlNets, batch: Batch, cfg: IqlConfig):
    """Returns ((L_V, L_Q, L_pi), (grad_V, grad_Q, grad_pi)). Targets are treated as constants."""
    rows = np.arange(len(batch.actions))
    q_t = forward(nets.target_q, batch.obs)[rows, batch.actions]
    lv, gv = value_loss(nets.v, batch.obs, q_t, cfg.tau)
    v_s = forward(nets.v, batch.obs)[:, 0]
    v_next = forward(nets.v, batch.next_obs)[:, 0]
    lq, gq = q_loss(nets.q, batch, v_next, cfg.gamma)
    w = advantage_weights(q_t - v_s, cfg.beta_iql, cfg.weight_clamp)
    lp, gp = policy_loss(nets.policy, batch.obs, batch.actions, w)
    return (lv, lq, lp), (gv, gq, gp)


def train_iql(dataset: Dataset, cfg: IqlConfig | None = None) -> PolicyArtifact:
    cfg = cfg or IqlConfig()
    validate(cfg)
    if not 0.0 < cfg.tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 3])
    nets = IqlNets.init(cfg.seed)
    opts = [AdamState.for_params(p, cfg.lr) for p in (nets.v, nets.q, nets.policy)]
    log: dict[str, list[float]] = {"value": [], "q": [], "policy": []}
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            b = Batch.take(dataset, dataset.sample(rng, cfg.batch))
            losses, grads = iql_losses(nets, b, cfg)
            check_finite("iql", epoch, *losses)
            for p, g, o in zip((nets.v, nets.q, nets.policy), grads, opts):
                adam_step(p, g, o, cfg.clip)
        for k, v in zip(("value", "q", "policy"), losses):
            log[k].append(v)
        if (epoch + 1) % cfg.target_sync_every == 0:
            nets.target_q = nets.q.copy()
    cfg_d = config_dict(cfg)
    return PolicyArtifact("iql", nets.policy, cfg_d, log)
