"""Direct preference optimisation against a frozen behavior-cloned reference.

Pairs come in two shapes. Transition mode pairs the winner's and loser's actions at each
shared depth; trajectory mode compares summed log-probabilities of whole episodes. Both are
stored the same way: every pair owns a run of winner transitions and a run of loser
transitions (length one in transition mode).
"""
from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import N_ACTIONS
from ..data import Dataset, Episode
from ..neural import AdamState, MlpParams, adam_step, backward, forward, forward_cache, log_sigmoid, \
    log_softmax, sigmoid, softmax
from .artifact import PolicyArtifact
from .bc import BcConfig, fit_bc
from .common import check_finite, config_dict, onehot, validate

PAIRING_MODES = ("transition", "trajectory")
WARMUP_LOSS_LIMIT = 1.5


@dataclass
class DpoConfig:
    beta_dpo: float = 3.0
    warmup_epochs: int = 200
    warmup_lr: float = 1e-3
    epochs: int = 2000
    lr: float = 1e-4
    batch: int = 256
    clip: float = 1.0
    pairing_mode: str = "transition"
    steps_per_epoch: int = 1
    seed: int = 0


@dataclass
class PairSet:
    """CSR layout: pair ``p`` uses winner transitions ``w_idx[w_ptr[p]:w_ptr[p+1]]`` (same for losers)."""

    w_idx: np.ndarray
    w_ptr: np.ndarray
    l_idx: np.ndarray
    l_ptr: np.ndarray
    # share of each episode pair carried by this entry; transition tuples split their pair's share
    weight: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.w_ptr) - 1

    def select(self, pairs: np.ndarray) -> "PairSet":
        def gather(idx, ptr):
            lens = ptr[pairs + 1] - ptr[pairs]
            out = np.concatenate([idx[ptr[p]:ptr[p + 1]] for p in pairs]) if len(pairs) else idx[:0]
            return out, np.concatenate([[0], np.cumsum(lens)])
        w, wp = gather(self.w_idx, self.w_ptr)
        l, lp = gather(self.l_idx, self.l_ptr)
        return PairSet(w, wp, l, lp, None if self.weight is None else self.weight[pairs])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` entries; every episode pair is equally likely, then a depth within it."""
        if self.weight is None:
            return rng.integers(0, len(self), size=n)
        return rng.choice(len(self), size=n, p=self.weight / self.weight.sum())

    def tuples(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(tuple(self.w_idx[self.w_ptr[p]:self.w_ptr[p + 1]].tolist()),
                 tuple(self.l_idx[self.l_ptr[p]:self.l_ptr[p + 1]].tolist())) for p in range(len(self))]


def _pools(episodes: Sequence[Episode]) -> list[list[int]]:
    """Same-request groups when a request has ≥2 episodes; the rest grouped by procedure."""
    by_req: dict[int, list[int]] = defaultdict(list)
    for i, ep in enumerate(episodes):
        by_req[ep.request_id].append(i)
    pools, leftovers = [], defaultdict(list)
    for rid in sorted(by_req):
        members = by_req[rid]
        if len(members) >= 2:
            pools.append(members)
        else:
            leftovers[episodes[members[0]].cpt].append(members[0])
    pools += [leftovers[c] for c in sorted(leftovers)]
    return pools


def build_preference_pairs(episodes: Sequence[Episode], mode: str = "transition") -> PairSet:
    """Every within-pool episode pair with unequal returns, winner = higher return.

    Indices refer to the flat transition order of ``Dataset.from_episodes(episodes)``.
    """
    if mode not in PAIRING_MODES:
        raise ValueError(f"pairing mode must be one of {PAIRING_MODES}")
    starts = np.concatenate([[0], np.cumsum([len(ep.transitions) for ep in episodes])])
    w_parts, l_parts, w_lens, l_lens, shares = [], [], [], [], []
    for pool in _pools(episodes):
        for a_pos, i in enumerate(pool):
            for j in pool[a_pos + 1:]:
                gi, gj = episodes[i].total_return, episodes[j].total_return
                if gi == gj:
                    continue
                w, l = (i, j) if gi > gj else (j, i)
                lw, ll = len(episodes[w].transitions), len(episodes[l].transitions)
                if mode == "transition":
                    depth = np.arange(min(lw, ll))
                    w_parts.append(starts[w] + depth)
                    l_parts.append(starts[l] + depth)
                    w_lens.append(np.ones(len(depth), dtype=np.int64))
                    l_lens.append(np.ones(len(depth), dtype=np.int64))
                    shares.append(np.full(len(depth), 1.0 / len(depth)))
                else:
                    w_parts.append(np.arange(starts[w], starts[w] + lw))
                    l_parts.append(np.arange(starts[l], starts[l] + ll))
                    w_lens.append(np.array([lw]))
                    l_lens.append(np.array([ll]))
                    shares.append(np.ones(1))

    def pack(parts, lens):
        if not parts:
            return np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64)
        return (np.concatenate(parts).astype(np.int64),
                np.concatenate([[0], np.cumsum(np.concatenate(lens))]).astype(np.int64))

    w_idx, w_ptr = pack(w_parts, w_lens)
    l_idx, l_ptr = pack(l_parts, l_lens)
    weight = np.concatenate(shares) if shares else np.zeros(0)
    return PairSet(w_idx, w_ptr, l_idx, l_ptr, weight)


def _segment_sum(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    seg = np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))
    return np.bincount(seg, weights=values, minlength=len(ptr) - 1)


def dpo_loss(policy: MlpParams, ref_logp: np.ndarray, obs: np.ndarray, actions: np.ndarray, pairs: PairSet,
             beta: float, with_grad: bool = True) -> tuple[float, float, MlpParams | None]:
    """Loss, preference accuracy (ties count 0.5) and gradient.

    ``ref_logp[i]`` is the frozen reference's log-probability of ``actions[i]`` at ``obs[i]``.
    """
    if len(pairs) == 0:
        raise ValueError("empty preference batch")
    idx = np.concatenate([pairs.w_idx, pairs.l_idx])
    logits, acts = forward_cache(policy, obs[idx])
    a = actions[idx]
    rows = np.arange(len(idx))
    ratio = log_softmax(logits)[rows, a] - ref_logp[idx]
    nw = len(pairs.w_idx)
    delta = _segment_sum(ratio[:nw], pairs.w_ptr) - _segment_sum(ratio[nw:], pairs.l_ptr)
    n = len(pairs)
    loss = -float(np.mean(log_sigmoid(beta * delta)))
    acc = float(np.mean(np.where(delta > 0, 1.0, np.where(delta == 0, 0.5, 0.0))))
    if not with_grad:
        return loss, acc, None
    d_delta = -beta * sigmoid(-beta * delta) / n
    per_elem = np.concatenate([np.repeat(d_delta, np.diff(pairs.w_ptr)), -np.repeat(d_delta, np.diff(pairs.l_ptr))])
    g = per_elem[:, None] * (onehot(a, logits.shape[1]) - softmax(logits))
    return loss, acc, backward(policy, acts, g)


def action_logp(params: MlpParams, obs: np.ndarray, actions: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(actions))
    for s in range(0, len(actions), chunk):
        lp = log_softmax(forward(params, obs[s:s + chunk]))
        out[s:s + chunk] = lp[np.arange(len(lp)), actions[s:s + chunk]]
    return out


def train_dpo(dataset: Dataset, cfg: DpoConfig | None = None) -> PolicyArtifact:
    cfg = cfg or DpoConfig()
    validate(cfg)
    if cfg.pairing_mode not in PAIRING_MODES:
        raise ValueError(f"pairing mode must be one of {PAIRING_MODES}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 4])
    params = MlpParams.init(cfg.seed, out_dim=N_ACTIONS)
    bc_cfg = BcConfig(lr=cfg.warmup_lr, epochs=cfg.warmup_epochs, batch=cfg.batch, clip=cfg.clip,
                      steps_per_epoch=cfg.steps_per_epoch, seed=cfg.seed)
    warm = fit_bc(params, dataset, bc_cfg, rng, cfg.warmup_epochs, name="dpo-warmup")
    tail = float(np.mean(warm[-10:])) if warm else float("inf")
    if tail >= WARMUP_LOSS_LIMIT:
        warnings.warn(f"reference not converged: warmup loss {tail:.3f} >= {WARMUP_LOSS_LIMIT}", stacklevel=2)
    reference = params.copy()
    ref_logp = action_logp(reference, dataset.obs, dataset.actions)
    pairs = build_preference_pairs(dataset.episodes, cfg.pairing_mode)
    if len(pairs) == 0:
        raise ValueError("dataset yields no preference pairs")
    opt = AdamState.for_params(params, cfg.lr)
    log: dict[str, list[float]] = {"warmup_loss": warm, "loss": [], "preference_accuracy": []}
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            batch = pairs.select(pairs.sample(rng, cfg.batch))
            loss, acc, grads = dpo_loss(params, ref_logp, dataset.obs, dataset.actions, batch, cfg.beta_dpo)
            check_finite("dpo", epoch, loss)
            adam_step(params, grads, opt, cfg.clip)
        log["loss"].append(loss)
        log["preference_accuracy"].append(acc)
    out = config_dict(cfg)
    out["n_pairs"] = len(pairs)
    return PolicyArtifact("dpo", params, out, log)
