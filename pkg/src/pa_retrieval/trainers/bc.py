"""Behavioral cloning: cross-entropy on logged actions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import N_ACTIONS
from ..data import Dataset
from ..neural import AdamState, MlpParams, adam_step, backward, forward_cache, log_softmax, softmax
from .artifact import PolicyArtifact
from .common import check_finite, config_dict, onehot, validate


@dataclass
class BcConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch: int = 256
    clip: float = 1.0
    steps_per_epoch: int = 1
    seed: int = 0


def bc_loss(params: MlpParams, obs: np.ndarray, actions: np.ndarray) -> tuple[float, MlpParams]:
    """Mean cross-entropy over all 11 logits and its parameter gradient."""
    logits, acts = forward_cache(params, obs)
    n = len(actions)
    loss = -float(np.mean(log_softmax(logits)[np.arange(n), actions]))
    grad = (softmax(logits) - onehot(actions, logits.shape[1])) / n
    return loss, backward(params, acts, grad)


def fit_bc(params: MlpParams, dataset: Dataset, cfg: BcConfig, rng: np.random.Generator,
           epochs: int, name: str = "bc") -> list[float]:
    """Run ``epochs`` epochs of BC on ``params`` in place; returns per-epoch losses."""
    opt = AdamState.for_params(params, cfg.lr)
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for _ in range(cfg.steps_per_epoch):
            idx = dataset.sample(rng, cfg.batch)
            loss, grads = bc_loss(params, dataset.obs[idx], dataset.actions[idx])
            check_finite(name, epoch, loss)
            adam_step(params, grads, opt, cfg.clip)
            total += loss
        losses.append(total / cfg.steps_per_epoch)
    return losses


def train_bc(dataset: Dataset, cfg: BcConfig | None = None) -> PolicyArtifact:
    cfg = cfg or BcConfig()
    validate(cfg)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 1])
    params = MlpParams.init(cfg.seed, out_dim=N_ACTIONS)
    losses = fit_bc(params, dataset, cfg, rng, cfg.epochs)
    return PolicyArtifact("bc", params, config_dict(cfg), {"loss": losses})
