"""Behavior policies, episode collection and the on-disk offline dataset."""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import K, N_ACTIONS, STOP
from .corpus import Corpus, Decision, PARequest
from .env import EnvState, RetrievalEnv, legal_mask
from .vec import cosine_similarity

DATASET_FORMAT = 1


# ------------------------------------------------------------------ behavior policies
@dataclass(frozen=True)
class RandomPolicy:
    @property
    def name(self) -> str:
        return "Random"


@dataclass(frozen=True)
class FixedK:
    k: int

    @property
    def name(self) -> str:
        return f"FixedK({self.k})"


@dataclass(frozen=True)
class Heuristic:
    """Retrieve the top candidate while its cosine to the request is at least ``theta`` times the
    best cosine anywhere in the corpus. The relative form keeps episode lengths comparable across
    procedures whose chunks sit at different absolute similarity levels."""

    theta: float

    @property
    def name(self) -> str:
        return f"Heuristic({self.theta:g})"


@dataclass(frozen=True)
class EpsGreedy:
    base: Union[FixedK, Heuristic, RandomPolicy]
    eps: float

    @property
    def name(self) -> str:
        return f"EpsGreedy({self.base.name},{self.eps:g})"


BehaviorPolicy = Union[RandomPolicy, FixedK, Heuristic, EpsGreedy]

DEFAULT_HEURISTIC_THETA = 0.9


def default_mixture(theta: float = DEFAULT_HEURISTIC_THETA) -> list[tuple[BehaviorPolicy, float]]:
    return [
        (FixedK(3), 1.0),
        (FixedK(5), 1.0),
        (Heuristic(theta), 1.0),
        (EpsGreedy(FixedK(5), 0.1), 1.0),
        (EpsGreedy(Heuristic(theta), 0.3), 1.0),
    ]


def policy_from_name(name: str) -> BehaviorPolicy:
    """Inverse of ``policy.name``."""
    name = name.strip()
    if name == "Random":
        return RandomPolicy()
    if name.startswith("FixedK(") and name.endswith(")"):
        return FixedK(int(name[7:-1]))
    if name.startswith("Heuristic(") and name.endswith(")"):
        return Heuristic(float(name[10:-1]))
    if name.startswith("EpsGreedy(") and name.endswith(")"):
        inner = name[10:-1]
        base, _, eps = inner.rpartition(",")
        return EpsGreedy(policy_from_name(base), float(eps))
    raise ValueError(f"unknown behavior policy {name!r}")


def behavior_probs(policy: BehaviorPolicy, state: EnvState, env: RetrievalEnv) -> np.ndarray:
    """Full action distribution of ``policy`` at ``state`` (zero on illegal actions)."""
    mask = env.legal_mask(state)
    p = np.zeros(N_ACTIONS)
    if isinstance(policy, RandomPolicy):
        p[mask] = 1.0 / mask.sum()
    elif isinstance(policy, FixedK):
        p[0 if len(state.retrieved_ids) < policy.k and mask[0] else STOP] = 1.0
    elif isinstance(policy, Heuristic):
        go = False
        if mask[0]:
            top = env.corpus.embeddings[state.candidates[0]]
            best = float(np.max(env.corpus.similarities(state.request_embedding)))
            go = cosine_similarity(state.request_embedding, top) >= policy.theta * best
        p[0 if go else STOP] = 1.0
    elif isinstance(policy, EpsGreedy):
        p = (1.0 - policy.eps) * behavior_probs(policy.base, state, env)
        p[mask] += policy.eps / mask.sum()
    else:
        raise TypeError(f"not a behavior policy: {policy!r}")
    return p


def behavior_action(policy: BehaviorPolicy, state: EnvState, env: RetrievalEnv,
                    rng: np.random.Generator) -> tuple[int, float]:
    """Sample an action and return it with the probability the policy assigned to it."""
    p = behavior_probs(policy, state, env)
    nz = np.flatnonzero(p > 0)
    if len(nz) == 1:
        return int(nz[0]), float(p[nz[0]])
    a = int(rng.choice(N_ACTIONS, p=p / p.sum()))
    return a, float(p[a])


# ------------------------------------------------------------------ episodes
@dataclass
class Transition:
    observation: np.ndarray = field(repr=False)
    action: int
    reward: float
    next_observation: np.ndarray = field(repr=False)
    done: bool
    behavior_propensity: float
    episode_id: int
    step_index: int
    request_id: int
    retrieved_ids_so_far: tuple[int, ...]


@dataclass
class Episode:
    episode_id: int
    request_id: int
    cpt: str
    policy: str
    transitions: list[Transition]
    total_return: float
    steps_total: int
    decision: Decision
    correct: bool

    @property
    def actions(self) -> list[int]:
        return [t.action for t in self.transitions]


def run_episode(env: RetrievalEnv, request: PARequest, policy: BehaviorPolicy, rng: np.random.Generator,
                episode_id: int = 0) -> Episode:
    state = env.reset(request)
    transitions = []
    total = 0.0
    while True:
        action, prop = behavior_action(policy, state, env, rng)
        out = env.step(state, action, request)
        transitions.append(Transition(state.observation, action, out.reward, out.next_state.observation, out.done,
                                      prop, episode_id, state.actions_taken, request.request_id,
                                      state.retrieved_ids))
        total += out.reward
        state = out.next_state
        if out.done:
            return Episode(episode_id, request.request_id, request.cpt, policy.name, transitions, total,
                           len(transitions), out.decision, out.decision == request.ground_truth)


def collect_dataset(env: RetrievalEnv, requests: Sequence[PARequest], seed: int, n_episodes: int | None = None,
                    mixture: Sequence[tuple[BehaviorPolicy, float]] | None = None,
                    resample: bool = False) -> list[Episode]:
    """Roll out ``n_episodes`` behavior episodes (default: one per request slot).

    Episode ``i`` draws from an RNG seeded by ``(seed, i)``. Its procedure is that of
    ``requests[i % len(requests)]`` so episodes are stratified exactly like the request set; with
    ``resample`` the request itself is drawn uniformly from that procedure's requests, which lets
    some requests collect several episodes.
    """
    mixture = list(mixture) if mixture is not None else default_mixture()
    weights = np.array([w for _, w in mixture], dtype=np.float64)
    if weights.sum() <= 0 or (weights < 0).any():
        raise ValueError("mixture weights must be non-negative with positive sum")
    weights = weights / weights.sum()
    if not requests:
        raise ValueError("no requests to collect on")
    by_cpt: dict[str, list[PARequest]] = {}
    for r in requests:
        by_cpt.setdefault(r.cpt, []).append(r)
    n = len(requests) if n_episodes is None else n_episodes
    episodes = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        policy = mixture[int(rng.choice(len(mixture), p=weights))][0]
        request = requests[i % len(requests)]
        if resample:
            pool = by_cpt[request.cpt]
            request = pool[int(rng.integers(len(pool)))]
        episodes.append(run_episode(env, request, policy, rng, episode_id=i))
    return episodes


# ------------------------------------------------------------------ flat dataset
@dataclass
class Dataset:
    """Column view of the transitions of a list of episodes, used by every trainer."""

    episodes: list[Episode]
    lam: float
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    propensities: np.ndarray
    next_mask: np.ndarray
    episode_index: np.ndarray
    step_index: np.ndarray

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], lam: float) -> "Dataset":
        ts = [t for ep in episodes for t in ep.transitions]
        if not ts:
            raise ValueError("empty dataset")
        # rewards were fixed at collection time; refuse to relabel them with another step cost
        if any(t.action != STOP and abs(t.reward + lam) > 1e-12 for t in ts):
            raise ValueError(f"transitions were not collected with lambda={lam}")
        ep_index = np.array([i for i, ep in enumerate(episodes) for _ in ep.transitions])
        steps = np.array([t.step_index for t in ts])
        next_mask = np.stack([legal_mask(s + 1, K) for s in steps])
        return cls(
            episodes=list(episodes),
            lam=lam,
            obs=np.stack([t.observation for t in ts]),
            actions=np.array([t.action for t in ts], dtype=np.int64),
            rewards=np.array([t.reward for t in ts]),
            next_obs=np.stack([t.next_observation for t in ts]),
            dones=np.array([t.done for t in ts], dtype=np.float64),
            propensities=np.array([t.behavior_propensity for t in ts]),
            next_mask=next_mask,
            episode_index=ep_index,
            step_index=steps,
        )

    def __len__(self) -> int:
        return len(self.actions)

    def sample(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        return rng.integers(0, len(self), size=batch_size)

    def initial_obs(self) -> np.ndarray:
        return self.obs[self.step_index == 0]


# ------------------------------------------------------------------ file format
def _encode(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def _decode(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f4").astype(np.float64)


def save_dataset(episodes: Sequence[Episode], path: str | Path, *, seed: int, lam: float,
                 mixture: Sequence[tuple[BehaviorPolicy, float]], corpus_hash: str) -> None:
    """JSON Lines: a header, then one transition per line. Observations are float32 base64."""
    header = {
        "format": DATASET_FORMAT,
        "seed": seed,
        "lambda": lam,
        "mixture": [[p.name, w] for p, w in mixture],
        "corpus_hash": corpus_hash,
        "episodes": len(episodes),
        "transitions": sum(len(ep.transitions) for ep in episodes),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ep in episodes:
            for t in ep.transitions:
                fh.write(json.dumps({
                    "episode_id": t.episode_id,
                    "step_index": t.step_index,
                    "request_id": t.request_id,
                    "policy": ep.policy,
                    "action": t.action,
                    "reward": t.reward,
                    "done": t.done,
                    "behavior_propensity": t.behavior_propensity,
                    "retrieved_ids_so_far": list(t.retrieved_ids_so_far),
                    "observation": _encode(t.observation),
                    "next_observation": _encode(t.next_observation),
                }) + "\n")


def read_header(path: str | Path) -> dict:
    with open(path) as fh:
        return json.loads(fh.readline())


def load_dataset(path: str | Path, env: RetrievalEnv, requests: Sequence[PARequest], *, verify: bool = True
                 ) -> tuple[dict, list[Episode]]:
    """Rebuild episodes from a dataset file.

    Observations are recomputed in float64 from ``request_id`` and ``retrieved_ids_so_far``;
    with ``verify`` the stored float32 copies and the logged propensities are checked against them.
    """
    by_id = {r.request_id: r for r in requests}
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"unsupported dataset format {header.get('format')}")
        if header["corpus_hash"] != env.corpus.content_hash():
            raise ValueError("dataset was collected on a different corpus")
        if abs(header["lambda"] - env.lam) > 1e-12:
            raise ValueError(f"dataset lambda {header['lambda']} != environment lambda {env.lam}")
        rows = [json.loads(line) for line in fh if line.strip()]
    grouped: dict[int, list[dict]] = {}
    for row in rows:
        grouped.setdefault(row["episode_id"], []).append(row)
    episodes = []
    for eid in sorted(grouped):
        ep_rows = sorted(grouped[eid], key=lambda r: r["step_index"])
        request = by_id[ep_rows[0]["request_id"]]
        policy = policy_from_name(ep_rows[0]["policy"])
        state = env.reset(request)
        transitions = []
        total = 0.0
        decision = None
        for row in ep_rows:
            if tuple(row["retrieved_ids_so_far"]) != state.retrieved_ids:
                raise ValueError(f"episode {eid}: logged history does not replay")
            if verify:
                if np.max(np.abs(_decode(row["observation"]) - state.observation)) > 1e-6:
                    raise ValueError(f"episode {eid} step {row['step_index']}: stored observation drifted")
                p = behavior_probs(policy, state, env)[row["action"]]
                if abs(p - row["behavior_propensity"]) > 1e-9:
                    raise ValueError(f"episode {eid} step {row['step_index']}: propensity mismatch")
            out = env.step(state, row["action"], request)
            if verify and abs(out.reward - row["reward"]) > 1e-12:
                raise ValueError(f"episode {eid} step {row['step_index']}: reward mismatch")
            transitions.append(Transition(state.observation, row["action"], out.reward, out.next_state.observation,
                                          out.done, row["behavior_propensity"], eid, row["step_index"],
                                          request.request_id, state.retrieved_ids))
            total += out.reward
            decision = out.decision
            state = out.next_state
        episodes.append(Episode(eid, request.request_id, request.cpt, policy.name, transitions, total,
                                len(transitions), decision, decision == request.ground_truth))
    return header, episodes


