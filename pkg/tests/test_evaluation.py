"""Cosine metrics, retrieval ranking rules, and report plumbing."""

import json

import numpy as np
import pytest

from voicemorph import data, evaluation
from voicemorph.critics import CriticConfig, CriticNet
from voicemorph.errors import ConfigError, DataError, SimilarityError
from voicemorph.evaluation import (build_eval_triples, cosine, eval_retrieval,
                                   eval_similarity, ranked_identities,
                                   top_k_success, write_report)


class CopyThroughGenerator:
    """Stub: 'generates' the proposal face unchanged (identity oracle)."""

    def synthesize(self, face, embedding):
        return np.asarray(face).copy()


class StubEncoder:
    def embed(self, mel):
        return np.zeros(64)


@pytest.fixture(scope="module")
def critics():
    return CriticNet(CriticConfig(n_identities=4, width=0.125),
                     np.random.default_rng(0))


def test_cosine_identity_orthogonal_negation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=64)
    assert abs(cosine(x, x) - 1.0) < 1e-12
    assert abs(cosine(x, -x) + 1.0) < 1e-12
    a = np.zeros(4)
    a[0] = 1.0
    b = np.zeros(4)
    b[1] = 1.0
    assert cosine(a, b) == 0.0


def test_cosine_rejects_zero_vectors_and_mismatch():
    with pytest.raises(SimilarityError):
        cosine(np.zeros(8), np.ones(8))
    with pytest.raises(SimilarityError):
        cosine(np.ones(8), np.ones(4))


def test_face_embed_is_deterministic_64d(critics):
    face = np.random.default_rng(2).uniform(-1, 1, size=(3, 64, 64))
    a = evaluation.face_embed(face, critics)
    b = evaluation.face_embed(face.copy(), critics)
    assert a.shape == (64,)
    assert (a == b).all()


def test_top_k_success_breaks_ties_by_ascending_index():
    scores = np.array([0.25, 0.25, 0.25, 0.25])
    assert ranked_identities(scores) == [0, 1, 2, 3]
    assert top_k_success(scores, 0, 1)
    assert not top_k_success(scores, 3, 1)
    assert top_k_success(scores, 3, 4)


def test_top_k_success_monotone_in_k():
    rng = np.random.default_rng(3)
    for _ in range(200):
        scores = rng.random(size=(6,))
        target = int(rng.integers(6))
        successes = [top_k_success(scores, target, k) for k in range(1, 7)]
        assert successes == sorted(successes)
        assert successes[-1]


def test_build_eval_triples_pairs_distinct_identities(toy_corpus):
    triples = build_eval_triples(toy_corpus, n_triples=40, seed=4)
    assert len(triples) == 40
    for t in triples:
        assert t.identity_a != t.identity_b


def test_build_eval_triples_requires_two_identities(mini_corpus):
    solo = [r for r in mini_corpus.records if r.identity == "id00"]
    manifest = data.CorpusManifest(mini_corpus.root, solo)
    with pytest.raises(DataError):
        build_eval_triples(manifest, n_triples=5, seed=0)


def test_eval_similarity_identity_oracle(toy_corpus, critics):
    """When the 'generated' face is an exact copy of the proposal,
    cos(g, A) is exactly 1."""
    report = eval_similarity(toy_corpus, CopyThroughGenerator(), critics,
                             StubEncoder(), n_triples=10, n_random_pairs=50, seed=5)
    assert abs(report.cos_generated_proposal - 1.0) < 1e-12
    assert -1.0 <= report.cos_generated_target <= 1.0
    assert -1.0 <= report.cos_random_pairs <= 1.0
    assert report.n_triples == 10


def test_eval_similarity_is_seed_deterministic(toy_corpus, critics):
    kw = dict(n_triples=6, n_random_pairs=20, seed=9)
    a = eval_similarity(toy_corpus, CopyThroughGenerator(), critics, StubEncoder(), **kw)
    b = eval_similarity(toy_corpus, CopyThroughGenerator(), critics, StubEncoder(), **kw)
    assert a == b


def test_eval_retrieval_top_k_equal_identity_count_is_certain(toy_corpus, critics):
    report = eval_retrieval(toy_corpus, CopyThroughGenerator(), critics,
                            StubEncoder(), k=4, n_queries=12, seed=6)
    assert report.success_rate == 1.0
    assert all(sorted(r) == [0, 1, 2, 3] for r in report.rankings)


def test_eval_retrieval_validates_k_and_target(toy_corpus, critics):
    with pytest.raises(ConfigError):
        eval_retrieval(toy_corpus, CopyThroughGenerator(), critics, StubEncoder(), k=5)
    with pytest.raises(ConfigError):
        eval_retrieval(toy_corpus, CopyThroughGenerator(), critics, StubEncoder(), k=0)
    with pytest.raises(ConfigError):
        eval_retrieval(toy_corpus, CopyThroughGenerator(), critics, StubEncoder(),
                       k=2, target="C")


def test_eval_retrieval_target_a_flag(toy_corpus, critics):
    report = eval_retrieval(toy_corpus, CopyThroughGenerator(), critics,
                            StubEncoder(), k=2, n_queries=10, seed=7, target="A")
    assert report.target == "A"
    assert 0.0 <= report.success_rate <= 1.0


def test_write_report_round_trips(tmp_path, toy_corpus, critics):
    sim = eval_similarity(toy_corpus, CopyThroughGenerator(), critics,
                          StubEncoder(), n_triples=4, n_random_pairs=10, seed=8)
    ret = eval_retrieval(toy_corpus, CopyThroughGenerator(), critics,
                         StubEncoder(), k=2, n_queries=4, seed=8)
    path = tmp_path / "report.json"
    write_report(path, sim, ret, extra={"note": "unit"})
    loaded = json.loads(path.read_text())
    assert loaded["similarity"]["n_triples"] == 4
    assert loaded["retrieval"]["top_k"] == 2
    assert loaded["note"] == "unit"
