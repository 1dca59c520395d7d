"""Deployable policies: learned networks and the fixed baselines share one ``act`` interface."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import STOP
from ..env import EnvState, RetrievalEnv
from ..neural import MlpParams, forward, params_from_json, params_to_json

LEARNED_KINDS = ("bc", "cql", "iql", "dpo")
BASELINE_KINDS = ("fixedk", "heuristic", "random", "full")
ARTIFACT_VERSION = 1


def masked_argmax(scores: np.ndarray, mask: np.ndarray) -> int:
    """First index of the maximum among legal entries (ties go to the lower index)."""
    if not mask.any():
        raise ValueError("no legal action")
    return int(np.argmax(np.where(mask, scores, -np.inf)))


@dataclass
class PolicyArtifact:
    kind: str
    params: MlpParams | None = None
    config: dict = field(default_factory=dict)
    metrics: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LEARNED_KINDS + BASELINE_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind in LEARNED_KINDS and self.params is None:
            raise ValueError(f"{self.kind} policy needs network parameters")

    @property
    def label(self) -> str:
        if self.kind == "fixedk":
            return f"FixedK({self.config['k']})"
        if self.kind == "heuristic":
            return f"Heuristic({self.config['theta']:g})"
        if self.kind == "dpo":
            return f"DPO ({self.config.get('pairing_mode', 'transition')})"
        return {"bc": "BC", "cql": "CQL", "iql": "IQL", "random": "Random", "full": "FullRetrieval"}[self.kind]

    def scores(self, obs: np.ndarray) -> np.ndarray:
        if self.params is None:
            raise ValueError(f"{self.kind} policy has no network")
        return forward(self.params, obs)

    def act(self, state: EnvState, env: RetrievalEnv, rng: np.random.Generator | None = None) -> int:
        mask = env.legal_mask(state)
        if self.kind in LEARNED_KINDS:
            return masked_argmax(self.scores(state.observation), mask)
        if self.kind == "random":
            if rng is None:
                raise ValueError("random policy needs an rng")
            return int(rng.choice(np.flatnonzero(mask)))
        # deterministic baselines reuse the behavior-policy definitions
        from ..data import FixedK, Heuristic, behavior_probs
        if self.kind == "full":
            return 0 if mask[0] else STOP
        base = FixedK(int(self.config["k"])) if self.kind == "fixedk" else Heuristic(float(self.config["theta"]))
        return int(np.argmax(behavior_probs(base, state, env)))

    def greedy_actions(self, obs: np.ndarray, masks: np.ndarray) -> np.ndarray:
        """Vectorised masked argmax for learned kinds."""
        q = np.where(masks, self.scores(obs), -np.inf)
        return np.argmax(q, axis=1)

    # ---- io
    def to_json(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "kind": self.kind,
            "config": self.config,
            "params": None if self.params is None else params_to_json(self.params),
            "metrics": self.metrics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolicyArtifact":
        if d.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported policy artifact version {d.get('version')}")
        params = None if d["params"] is None else params_from_json(d["params"])
        return cls(d["kind"], params, d["config"], d["metrics"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyArtifact":
        return cls.from_json(json.loads(Path(path).read_text()))


def fixed_k(k: int) -> PolicyArtifact:
    return PolicyArtifact("fixedk", config={"k": k})


def heuristic(theta: float) -> PolicyArtifact:
    return PolicyArtifact("heuristic", config={"theta": theta})


def full_retrieval() -> PolicyArtifact:
    return PolicyArtifact("full")

