"""Run configuration: one JSON document holding every knob of the experiment pipeline."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import HORIZON, K
from .corpus import DEFAULT_OUTCOME_WEIGHTS
from .data import DEFAULT_HEURISTIC_THETA, default_mixture
from .trainers import BcConfig, CqlConfig, DpoConfig, IqlConfig

OUT_ENV = "PA_RETRIEVAL_OUT"
DEFAULT_OUT = "runs/default"


def _default_mixture_spec() -> list[list[Any]]:
    return [[p.name, w] for p, w in default_mixture(DEFAULT_HEURISTIC_THETA)]


@dataclass
class AblationConfig:
    lambda_grid: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.2])
    beta_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 3.0])
    alpha_grid: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0])
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class RunConfig:
    seed: int = 0
    lam: float = 0.1
    k: int = K
    horizon: int = HORIZON
    n_train: int = 2000
    n_test: int = 200
    outcome_weights: list[float] = field(default_factory=lambda: list(DEFAULT_OUTCOME_WEIGHTS))
    mixture: list[list[Any]] = field(default_factory=_default_mixture_spec)
    resample: bool = False
    baseline_k: list[int] = field(default_factory=lambda: [3, 5])
    baseline_theta: float = DEFAULT_HEURISTIC_THETA
    bc: BcConfig = field(default_factory=BcConfig)
    cql: CqlConfig = field(default_factory=CqlConfig)
    iql: IqlConfig = field(default_factory=IqlConfig)
    dpo: DpoConfig = field(default_factory=DpoConfig)
    fqe_epochs: int = 200
    n_boot: int = 10_000
    ablation: AblationConfig = field(default_factory=AblationConfig)
    out_dir: str = ""

    def __post_init__(self):
        if self.k != K or self.horizon != HORIZON:
            raise ValueError(f"the network shape fixes K={K} and H={HORIZON}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")

    # seeds of the individual stages, all derived from the one run seed
    @property
    def corpus_seed(self) -> int:
        return self.seed

    @property
    def train_seed(self) -> int:
        return self.seed + 1

    @property
    def test_seed(self) -> int:
        return self.seed + 2

    @property
    def collect_seed(self) -> int:
        return self.seed

    def output_root(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        return _build(cls, d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def with_overrides(self, pairs: list[str]) -> "RunConfig":
        d = self.to_json()
        for item in pairs:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise ValueError(f"override must look like key=value, got {item!r}")
            _assign(d, key.strip().split("."), _parse_value(raw))
        return RunConfig.from_json(d)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _assign(d: dict, path: list[str], value: Any) -> None:
    for part in path[:-1]:
        if not isinstance(d.get(part), dict):
            raise ValueError(f"unknown config section {part!r}")
        d = d[part]
    if path[-1] not in d:
        raise ValueError(f"unknown config key {'.'.join(path)!r}")
    d[path[-1]] = value


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ValueError(f"{cls.__name__} expects an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value) if sub is not None else _coerce(names[name], value)
    return cls(**kwargs)


def _coerce(f: dataclasses.Field, value: Any) -> Any:
    # JSON has one number type; keep ints where the dataclass default is an int
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{f.name} must be true or false")
        return value
    if isinstance(default, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


_NESTED = {
    (RunConfig, "bc"): BcConfig,
    (RunConfig, "cql"): CqlConfig,
    (RunConfig, "iql"): IqlConfig,
    (RunConfig, "dpo"): DpoConfig,
    (RunConfig, "ablation"): AblationConfig,
}
