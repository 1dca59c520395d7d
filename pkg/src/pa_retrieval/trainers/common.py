"""Shared plumbing for the trainers."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..neural import DivergenceError


def check_finite(name: str, epoch: int, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise DivergenceError(f"divergence detected in {name} at epoch {epoch}: loss={v}")


def validate(cfg) -> None:
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and f.name not in ("seed", "alpha") and v <= 0:
            raise ValueError(f"{type(cfg).__name__}.{f.name} must be positive, got {v}")


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def onehot(actions: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(actions), n))
    out[np.arange(len(actions)), actions] = 1.0
    return out
