"""Conservative Q-learning with a hard-synced target network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import N_ACTIONS
from ..data import Dataset
from ..neural import AdamState, MlpParams, adam_step, backward, forward, forward_cache, log_sum_exp, softmax
from .artifact import PolicyArtifact
from .common import check_finite, config_dict, onehot, validate


@dataclass
class CqlConfig:
    alpha: float = 1.0
    gamma: float = 1.0
    lr: float = 3e-4
    epochs: int = 200
    batch: int = 256
    target_sync_every: int = 10
    clip: float = 1.0
    steps_per_epoch: int = 1
    seed: int = 0


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    next_mask: np.ndarray

    @classmethod
    def take(cls, d: Dataset, idx: np.ndarray) -> "Batch":
        return cls(d.obs[idx], d.actions[idx], d.rewards[idx], d.next_obs[idx], d.dones[idx], d.next_mask[idx])


def td_targets(target: MlpParams, batch: Batch, gamma: float) -> np.ndarray:
    """r + γ·max over legal a′ of Q_target(s′, a′), with no bootstrap past terminal steps."""
    q_next = np.where(batch.next_mask, forward(target, batch.next_obs), -np.inf).max(axis=1)
    q_next = np.where(batch.dones > 0, 0.0, q_next)
    return batch.rewards + gamma * q_next


def cql_loss(q_net: MlpParams, target_net: MlpParams, batch: Batch, alpha: float, gamma: float = 1.0,
             with_grad: bool = True) -> tuple[float, float, float, MlpParams | None]:
    """Returns (total, td, conservative, grad of total)."""
    y = td_targets(target_net, batch, gamma)
    q, acts = forward_cache(q_net, batch.obs)
    n = len(batch.actions)
    rows = np.arange(n)
    q_sa = q[rows, batch.actions]
    err = q_sa - y
    td = float(np.mean(err ** 2))
    conservative = float(np.mean(log_sum_exp(q, axis=1) - q_sa))
    total = td + alpha * conservative
    if not with_grad:
        return total, td, conservative, None
    hot = onehot(batch.actions, q.shape[1])
    grad = hot * (2.0 * err / n)[:, None] + alpha * (softmax(q) - hot) / n
    return total, td, conservative, backward(q_net, acts, grad)


def train_cql(dataset: Dataset, cfg: CqlConfig | None = None) -> PolicyArtifact:
    cfg = cfg or CqlConfig()
    validate(cfg)
    if cfg.gamma != 1.0:
        raise ValueError("the retrieval task is undiscounted; gamma must be 1.0")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 2])
    q = MlpParams.init(cfg.seed, out_dim=N_ACTIONS)
    target = q.copy()
    opt = AdamState.for_params(q, cfg.lr)
    log: dict[str, list[float]] = {"total": [], "td": [], "conservative": [], "mean_q": []}
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            b = Batch.take(dataset, dataset.sample(rng, cfg.batch))
            total, td, cons, grads = cql_loss(q, target, b, cfg.alpha, cfg.gamma)
            check_finite("cql", epoch, total)
            adam_step(q, grads, opt, cfg.clip)
        log["total"].append(total)
        log["td"].append(td)
        log["conservative"].append(cons)
        log["mean_q"].append(float(np.mean(forward(q, b.obs)[np.arange(len(b.actions)), b.actions])))
        if (epoch + 1) % cfg.target_sync_every == 0:
            target = q.copy()
    return PolicyArtifact("cql", q, config_dict(cfg), log)
