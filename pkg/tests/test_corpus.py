from collections import Counter

import numpy as np
import pytest

from pa_retrieval.corpus import ChunkType, Corpus, Decision, build_corpus, generate_requests, oracle_decide


def test_corpus_size_and_type_split(corpus):
    assert len(corpus) == 186
    kinds = Counter(c.chunk_type for c in corpus.chunks)
    assert kinds[ChunkType.COVERAGE] == 107
    assert kinds[ChunkType.BILLING] == 71
    assert kinds[ChunkType.EXCLUSION] == 8
    assert sum(c.shared for c in corpus.chunks) == 57


@pytest.mark.parametrize("cpt, total, shared", [("45378", 30, 0), ("72148", 55, 49)])
def test_procedure_pools(corpus, cpt, total, shared):
    pool = corpus.pool(cpt)
    assert len(pool) == total
    assert sum(c.shared for c in pool) == shared


def test_build_is_seed_deterministic(corpus, tmp_path):
    again = build_corpus(0)
    assert again.content_hash() == corpus.content_hash()
    corpus.save(tmp_path / "c.jsonl")
    assert Corpus.load(tmp_path / "c.jsonl").content_hash() == corpus.content_hash()


def test_approve_fraction(train_requests):
    frac = np.mean([r.ground_truth is Decision.APPROVE for r in train_requests])
    assert abs(frac - 0.376) <= 0.03


def test_empty_evidence_pends(corpus, train_requests):
    assert all(oracle_decide(corpus, r, ()) is Decision.PEND for r in train_requests[:200])


def test_required_evidence_gives_ground_truth(corpus, train_requests):
    assert all(oracle_decide(corpus, r, r.required_evidence) is r.ground_truth for r in train_requests)


def test_full_corpus_gives_ground_truth(corpus, train_requests, test_requests):
    everything = range(len(corpus))
    assert all(oracle_decide(corpus, r, everything) is r.ground_truth for r in train_requests + test_requests)


def test_sufficiency_is_monotone(corpus, train_requests, rng):
    for r in train_requests[:100]:
        extra = rng.choice(len(corpus), size=5, replace=False)
        assert oracle_decide(corpus, r, set(r.required_evidence) | set(extra.tolist())) is r.ground_truth


def test_unknown_chunk_id_raises(corpus, train_requests):
    with pytest.raises(KeyError):
        oracle_decide(corpus, train_requests[0], [len(corpus)])


def test_shared_chunks_interfere(corpus, env, train_requests):
    # some request sees a chunk shared with other procedures ranked ahead of its evidence
    hits = 0
    for r in train_requests[:300]:
        ranking = corpus.ranking(env.request_embedding(r)).tolist()
        first = min(ranking.index(c) for c in r.required_evidence)
        hits += any(corpus[c].shared for c in ranking[:first])
    assert hits > 0


def test_requests_are_deterministic(corpus):
    assert generate_requests(corpus, 7, 50) == generate_requests(corpus, 7, 50)
    assert generate_requests(corpus, 7, 50) != generate_requests(corpus, 8, 50)


def test_request_round_trip(tmp_path, train_requests):
    from pa_retrieval.corpus import load_requests, save_requests
    save_requests(train_requests[:20], tmp_path / "r.jsonl")
    assert load_requests(tmp_path / "r.jsonl") == train_requests[:20]


def test_bad_outcome_weights(corpus):
    with pytest.raises(ValueError):
        generate_requests(corpus, 0, 10, outcome_weights=(1.0, -1.0, 0.5))
