from __future__ import annotations

import numpy as np
import pytest

from pa_retrieval.config import RunConfig
from pa_retrieval.corpus import build_corpus, generate_requests
from pa_retrieval.data import Dataset, collect_dataset
from pa_retrieval.env import RetrievalEnv
from pa_retrieval.pipeline import Pipeline

# stages of the default run exercised by the acceptance and findings suites
DEFAULT_STAGES = ("gen_corpus", "gen_requests", "collect", "train:bc", "train:cql", "train:iql", "train:dpo",
                  "evaluate", "ope", "significance", "ablate:lambda", "report")


def run_stages(pipe: Pipeline, stages=DEFAULT_STAGES) -> Pipeline:
    for stage in stages:
        name, _, arg = stage.partition(":")
        if name == "train":
            pipe.train_stage(arg)
        elif arg:
            getattr(pipe, name)(arg)
        else:
            getattr(pipe, name)()
    return pipe


@pytest.fixture(scope="session")
def corpus():
    return build_corpus(0)


@pytest.fixture(scope="session")
def train_requests(corpus):
    return generate_requests(corpus, 1, 2000)


@pytest.fixture(scope="session")
def test_requests(corpus):
    return generate_requests(corpus, 2, 200, start_id=2000, split="test")


@pytest.fixture(scope="session")
def env(corpus):
    return RetrievalEnv(corpus, 0.1)


@pytest.fixture(scope="session")
def small_episodes(env, train_requests):
    return collect_dataset(env, train_requests[:300], seed=0)


@pytest.fixture(scope="session")
def small_dataset(small_episodes):
    return Dataset.from_episodes(small_episodes, 0.1)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The seeded default pipeline, run once per test session."""
    root = tmp_path_factory.mktemp("default_run")
    return run_stages(Pipeline(RunConfig(), root))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _array_dataset(obs, actions, rewards, next_obs=None, dones=None, next_mask=None, lam=0.1):
    """A Dataset built straight from arrays, for toy problems that never touch the environment."""
    n = len(actions)
    obs = np.asarray(obs, dtype=np.float64)
    return Dataset(
        episodes=[], lam=lam, obs=obs, actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_obs=obs.copy() if next_obs is None else np.asarray(next_obs, dtype=np.float64),
        dones=np.ones(n) if dones is None else np.asarray(dones, dtype=np.float64),
        propensities=np.ones(n),
        next_mask=np.ones((n, 11), dtype=bool) if next_mask is None else next_mask,
        episode_index=np.arange(n), step_index=np.zeros(n, dtype=np.int64))


@pytest.fixture
def array_dataset():
    return _array_dataset
