"""On-policy evaluation, off-policy estimators, significance testing and report tables."""
from __future__ import annotations

import math
import csv
import io
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import K, N_ACTIONS
from .corpus import PARequest
from .data import Dataset
from .env import RetrievalEnv, legal_mask
from .neural import AdamState, MlpParams, adam_step, backward, forward, forward_cache
from .trainers.artifact import LEARNED_KINDS, PolicyArtifact
from .trainers.common import check_finite

WIS_CLIP = (0.01, 100.0)
NOT_APPLICABLE = "--"


# ------------------------------------------------------------------ on-policy
@dataclass
class EpisodeRecord:
    request_id: int
    cpt: str
    correct: bool
    steps: int
    ret: float


@dataclass
class EvalReport:
    policy: str
    kind: str
    lam: float
    accuracy: float
    mean_return: float
    mean_steps: float
    per_procedure: dict[str, float]
    episodes: list[EpisodeRecord] = field(repr=False)

    def identity_gap(self) -> float:
        return self.mean_return - ((2 * self.accuracy - 1) - self.lam * (self.mean_steps - 1))

    def to_json(self) -> dict:
        d = asdict(self)
        d["episodes"] = [asdict(e) for e in self.episodes]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["episodes"] = [EpisodeRecord(**e) for e in d["episodes"]]
        return cls(**d)


def rollout(policy: PolicyArtifact, env: RetrievalEnv, request: PARequest,
            rng: np.random.Generator | None = None) -> EpisodeRecord:
    state = env.reset(request)
    total = 0.0
    steps = 0
    while True:
        out = env.step(state, policy.act(state, env, rng), request)
        total += out.reward
        steps += 1
        state = out.next_state
        if out.done:
            return EpisodeRecord(request.request_id, request.cpt, bool(out.decision == request.ground_truth),
                                 steps, total)


def evaluate_policy(policy: PolicyArtifact, env: RetrievalEnv, requests: Sequence[PARequest],
                    seed: int = 0) -> EvalReport:
    """One greedy rollout per request."""
    if not requests:
        raise ValueError("no evaluation requests")
    trained_on = policy.config.get("corpus_hash")
    if trained_on is not None and trained_on != env.corpus.content_hash():
        raise ValueError(f"{policy.label} was trained on a different corpus")
    rng = np.random.default_rng(seed) if policy.kind == "random" else None
    recs = [rollout(policy, env, r, rng) for r in requests]
    by_proc: dict[str, list[bool]] = defaultdict(list)
    for r in recs:
        by_proc[r.cpt].append(r.correct)
    return EvalReport(
        policy=policy.label,
        kind=policy.kind,
        lam=env.lam,
        accuracy=float(np.mean([r.correct for r in recs])),
        mean_return=float(np.mean([r.ret for r in recs])),
        mean_steps=float(np.mean([r.steps for r in recs])),
        per_procedure={c: float(np.mean(v)) for c, v in sorted(by_proc.items())},
        episodes=recs,
    )


# ------------------------------------------------------------------ off-policy
@dataclass
class OpeReport:
    policy: str
    kind: str
    wis_estimate: float
    fqe_mean_q: float


def _greedy_dataset_actions(policy: PolicyArtifact, obs: np.ndarray, masks: np.ndarray) -> np.ndarray:
    if policy.kind not in LEARNED_KINDS:
        raise ValueError("off-policy estimators need a learned policy")
    return policy.greedy_actions(obs, masks)


def wis_estimate(policy: PolicyArtifact, dataset: Dataset, clip: tuple[float, float] = WIS_CLIP) -> float:
    """Self-normalised importance sampling with a greedy (indicator) target policy.

    Per-step ratios are clipped to ``clip``, so actions the target never takes contribute the floor.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    masks = np.stack([legal_mask(int(s), K) for s in dataset.step_index])
    greedy = _greedy_dataset_actions(policy, dataset.obs, masks)
    return wis_from_ratios(
        (greedy == dataset.actions).astype(np.float64) / dataset.propensities,
        dataset.episode_index, np.array([ep.total_return for ep in dataset.episodes]), clip)


def wis_from_ratios(ratios: np.ndarray, episode_index: np.ndarray, returns: np.ndarray,
                    clip: tuple[float, float] = WIS_CLIP) -> float:
    lo, hi = clip
    logw = np.bincount(episode_index, weights=np.log(np.clip(ratios, lo, hi)), minlength=len(returns))
    w = np.exp(logw - logw.max())  # scale cancels in the ratio
    return float(np.sum(w * returns) / np.sum(w))


def fqe_estimate(policy: PolicyArtifact, dataset: Dataset, epochs: int = 200, lr: float = 3e-4, batch: int = 256,
                 target_sync_every: int = 10, clip: float = 1.0, seed: int = 0, steps_per_epoch: int = 1) -> float:
    """Fit Q under the policy's greedy legal action; report mean Q at episode-initial states."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    next_greedy = _greedy_dataset_actions(policy, dataset.next_obs, dataset.next_mask)
    rng = np.random.default_rng([seed, 5])
    q = MlpParams.init(seed, out_dim=N_ACTIONS)
    target = q.copy()
    opt = AdamState.for_params(q, lr)
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            idx = dataset.sample(rng, batch)
            q_next = forward(target, dataset.next_obs[idx])[np.arange(len(idx)), next_greedy[idx]]
            y = dataset.rewards[idx] + q_next * (1.0 - dataset.dones[idx])
            out, acts = forward_cache(q, dataset.obs[idx])
            rows = np.arange(len(idx))
            err = out[rows, dataset.actions[idx]] - y
            check_finite("fqe", epoch, float(np.mean(err ** 2)))
            g = np.zeros_like(out)
            g[rows, dataset.actions[idx]] = 2.0 * err / len(idx)
            adam_step(q, backward(q, acts, g), opt, clip)
        if (epoch + 1) % target_sync_every == 0:
            target = q.copy()
    s0 = dataset.initial_obs()
    masks0 = np.stack([legal_mask(0, K)] * len(s0))
    a0 = _greedy_dataset_actions(policy, s0, masks0)
    return float(np.mean(forward(q, s0)[np.arange(len(s0)), a0]))


# ------------------------------------------------------------------ significance
@dataclass
class SignificanceReport:
    label: str
    delta_accuracy: float  # percentage points
    t_statistic: float | None
    p_value: float | None
    dof: int
    ci95: tuple[float, float]
    n: int

    @property
    def p_text(self) -> str:
        return NOT_APPLICABLE if self.p_value is None else f"{self.p_value:.3g}"

    def to_json(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        d["p_text"] = self.p_text
        return d


def paired_t_test(a: Sequence[float], b: Sequence[float], label: str = "a vs b", n_boot: int = 10_000,
                  seed: int = 0) -> SignificanceReport:
    """Two-sided paired t-test on indicator vectors plus a paired-bootstrap CI on the mean difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d vectors of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    rng = np.random.default_rng(seed)
    boot = d[rng.integers(0, n, size=(n_boot, n))].mean(axis=1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    ci = (float(min(lo, mean)) * 100, float(max(hi, mean)) * 100)
    if sd == 0.0:
        t = None if mean == 0.0 else math.copysign(math.inf, mean)
        p = None if mean == 0.0 else 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return SignificanceReport(label, mean * 100, t, p, n - 1, ci, n)


# ------------------------------------------------------------------ tables
def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Points not dominated on (fewer steps, higher accuracy); duplicates are all kept."""
    out = []
    for i, (s, a) in enumerate(points):
        dominated = any(s2 <= s and a2 >= a and (s2 < s or a2 > a) for j, (s2, a2) in enumerate(points) if j != i)
        if not dominated:
            out.append((s, a))
    return out


def per_procedure_report(reports: Sequence[EvalReport]) -> dict:
    """Accuracy per (policy, procedure) and the procedures no learned policy fully solves."""
    procs = sorted({c for r in reports for c in r.per_procedure})
    table = {r.policy: {c: r.per_procedure.get(c) for c in procs} for r in reports}
    learned = [r for r in reports if r.kind in LEARNED_KINDS]
    hard = [c for c in procs if learned and all((r.per_procedure.get(c) or 0.0) < 1.0 for r in learned)]
    return {"procedures": procs, "accuracy": table, "hard": hard}


def return_identity(accuracy: float, steps: float, lam: float = 0.1) -> float:
    return (2.0 * accuracy - 1.0) - lam * (steps - 1.0)


# ------------------------------------------------------------------ ablations
ABLATION_KINDS = {"lambda": "cql", "beta": "dpo", "alpha": "cql"}


@dataclass
class AblationRow:
    kind: str
    value: float
    seed: int
    accuracy: float
    mean_steps: float
    mean_return: float


def run_ablation(kind: str, grid: Sequence[float], seeds: Sequence[int],
                 train_and_eval: Callable[[float, int], EvalReport]) -> list[AblationRow]:
    """Train and evaluate once per (grid value, seed).

    ``train_and_eval`` owns everything grid-specific; for the lambda kind it must collect a fresh
    dataset at that step cost, since rewards are fixed when episodes are logged.
    """
    if kind not in ABLATION_KINDS:
        raise ValueError(f"ablation kind must be one of {sorted(ABLATION_KINDS)}")
    if not grid or not seeds:
        raise ValueError("ablation grid and seeds must be non-empty")
    rows = []
    for value in grid:
        for seed in seeds:
            r = train_and_eval(float(value), int(seed))
            rows.append(AblationRow(kind, float(value), int(seed), r.accuracy, r.mean_steps, r.mean_return))
    return rows


def summarise_ablation(rows: Sequence[AblationRow]) -> list[dict]:
    """Seed-averaged accuracy/steps/return per grid value, in grid order."""
    order: list[float] = []
    groups: dict[float, list[AblationRow]] = defaultdict(list)
    for r in rows:
        if r.value not in groups:
            order.append(r.value)
        groups[r.value].append(r)
    return [{"value": v, "seeds": len(groups[v]),
             "accuracy": float(np.mean([r.accuracy for r in groups[v]])),
             "mean_steps": float(np.mean([r.mean_steps for r in groups[v]])),
             "mean_return": float(np.mean([r.mean_return for r in groups[v]]))} for v in order]


# ------------------------------------------------------------------ rendering
def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Plain aligned text; the first column is left-aligned, the rest right-aligned."""
    cells = [[str(h) for h in headers]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]

    def line(r):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
    out = [line(cells[0]), "  ".join("-" * w for w in widths)] + [line(r) for r in cells[1:]]
    return "\n".join(out) + "\n"


def _cell(v: object) -> str:
    if v is None:
        return NOT_APPLICABLE
    if isinstance(v, float):
        return f"{v:.4g}" if abs(v) < 1e-3 and v != 0 else f"{v:.3f}"
    return str(v)


def to_csv(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for row in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def main_table_rows(reports: Sequence[EvalReport]) -> list[list[object]]:
    return [[r.policy, r.accuracy, r.mean_return, r.mean_steps] for r in reports]


__all__ = [
    "EpisodeRecord", "EvalReport", "OpeReport", "SignificanceReport", "NOT_APPLICABLE", "WIS_CLIP",
    "evaluate_policy", "rollout", "wis_estimate", "wis_from_ratios", "fqe_estimate", "paired_t_test",
    "pareto_frontier", "per_procedure_report", "return_identity", "ABLATION_KINDS", "AblationRow",
    "run_ablation", "summarise_ablation", "format_table", "to_csv", "main_table_rows",
]
