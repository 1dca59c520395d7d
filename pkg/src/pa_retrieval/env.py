"""Finite-horizon retrieval MDP over a fixed corpus.

Steps accounting: every action (retrievals and the final stop) counts as a step,
but only retrievals pay the cost ``lam``. An episode therefore has
``steps = n_retrievals + 1`` and return ``r_T - lam * (steps - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import HORIZON, K, N_ACTIONS, STOP
from .corpus import Corpus, Decision, PARequest, oracle_decide
from .vec import embed_text, mean_pool


class IllegalActionError(ValueError):
    pass


@dataclass(frozen=True)
class EnvState:
    request_embedding: np.ndarray = field(repr=False)
    history_mean: np.ndarray = field(repr=False)
    retrieved_ids: tuple[int, ...]
    actions_taken: int
    candidates: tuple[int, ...]

    @property
    def observation(self) -> np.ndarray:
        return np.concatenate([self.request_embedding, self.history_mean])


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    done: bool
    decision: Decision | None
    next_state: EnvState


def episode_return(terminal_reward: float, n_retrievals: int, lam: float) -> float:
    if not 0 <= n_retrievals <= HORIZON - 1:
        raise ValueError(f"n_retrievals must lie in [0, {HORIZON - 1}]")
    return terminal_reward - lam * n_retrievals


def legal_mask(actions_taken: int, n_candidates: int, horizon: int = HORIZON) -> np.ndarray:
    mask = np.zeros(N_ACTIONS, dtype=bool)
    mask[STOP] = True
    if actions_taken < horizon - 1:
        mask[:min(n_candidates, K)] = True
    return mask


def legal_actions(state: EnvState, horizon: int = HORIZON) -> set[int]:
    return {int(a) for a in np.flatnonzero(legal_mask(state.actions_taken, len(state.candidates), horizon))}


class RetrievalEnv:
    """Deterministic retrieval MDP. Candidate ranking is computed once per request."""

    def __init__(self, corpus: Corpus, lam: float = 0.1, k: int = K, horizon: int = HORIZON):
        if k != K:
            raise ValueError(f"action space is fixed at K={K}")
        self.corpus = corpus
        self.lam = lam
        self.horizon = horizon
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _request_info(self, request: PARequest) -> tuple[np.ndarray, np.ndarray]:
        text = request.text
        hit = self._cache.get(text)
        if hit is None:
            e = embed_text(text)
            hit = (e, self.corpus.ranking(e))
            self._cache[text] = hit
        return hit

    def request_embedding(self, request: PARequest) -> np.ndarray:
        return self._request_info(request)[0]

    def _candidates(self, ranking: np.ndarray, retrieved: tuple[int, ...]) -> tuple[int, ...]:
        taken = set(retrieved)
        out = []
        for cid in ranking:
            if int(cid) not in taken:
                out.append(int(cid))
                if len(out) == K:
                    break
        return tuple(out)

    def state_for(self, request: PARequest, retrieved: tuple[int, ...]) -> EnvState:
        """Pre-stop state after retrieving ``retrieved`` in order."""
        e, ranking = self._request_info(request)
        hist = mean_pool([self.corpus.embeddings[c] for c in retrieved])
        return EnvState(e, hist, tuple(retrieved), len(retrieved), self._candidates(ranking, tuple(retrieved)))

    def reset(self, request: PARequest) -> EnvState:
        return self.state_for(request, ())

    def legal_mask(self, state: EnvState) -> np.ndarray:
        return legal_mask(state.actions_taken, len(state.candidates), self.horizon)

    def step(self, state: EnvState, action: int, request: PARequest) -> StepOutcome:
        if not (0 <= action < N_ACTIONS and self.legal_mask(state)[action]):
            raise IllegalActionError(f"action {action} is not legal at step {state.actions_taken}")
        if action == STOP:
            decision = oracle_decide(self.corpus, request, state.retrieved_ids)
            reward = 1.0 if decision == request.ground_truth else -1.0
            nxt = EnvState(state.request_embedding, state.history_mean, state.retrieved_ids,
                           state.actions_taken + 1, state.candidates)
            return StepOutcome(reward, True, decision, nxt)
        chunk = state.candidates[action]
        nxt = self.state_for(request, state.retrieved_ids + (chunk,))
        return StepOutcome(-self.lam, False, None, nxt)

