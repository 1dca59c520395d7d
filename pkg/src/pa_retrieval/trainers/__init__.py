"""Offline trainers. Each returns a :class:`PolicyArtifact` whose ``act`` is a masked greedy argmax."""
from .artifact import PolicyArtifact, fixed_k, full_retrieval, heuristic, masked_argmax
from .bc import BcConfig, bc_loss, train_bc
from .cql import Batch, CqlConfig, cql_loss, train_cql
from .dpo import DpoConfig, PairSet, build_preference_pairs, dpo_loss, train_dpo
from .iql import IqlConfig, IqlNets, iql_losses, train_iql

__all__ = [
    "PolicyArtifact", "fixed_k", "full_retrieval", "heuristic", "masked_argmax",
    "BcConfig", "bc_loss", "train_bc",
    "Batch", "CqlConfig", "cql_loss", "train_cql",
    "DpoConfig", "PairSet", "build_preference_pairs", "dpo_loss", "train_dpo",
    "IqlConfig", "IqlNets", "iql_losses", "train_iql",
]
