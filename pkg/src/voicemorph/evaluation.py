"""Automatic evaluation: feature cosine similarity and top-k retrieval.

The critic trunk's 64-d output serves as the face embedding.  For each
evaluation triple (proposal face of A, voice and face of B) the
generated face g = G(f_A, E(v_B)) is compared against both real faces by
cosine similarity, with a seeded random-pair baseline; retrieval ranks
the classifier's probabilities on g and scores a success when the
queried identity (the voice owner B by default, optionally A) appears in
the top k.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import audio
from .data import load_face
from .errors import ConfigError, DataError, SimilarityError

FEATURE_DIM = 64


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise SimilarityError(f"vector length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise SimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def face_embed(face, critics):
    """Evaluation face embedding: the critic trunk's 64-d feature."""
    return critics.trunk_features(face)


def top_k_success(scores, target, k):
    """True when `target` is among the k highest scores; ties resolve in
    favor of the lower identity index."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return int(target) in order[:k]


def ranked_identities(scores):
    return np.argsort(-np.asarray(scores), kind="stable").tolist()


@dataclass
class SimilarityReport:
    cos_generated_proposal: float
    cos_generated_target: float
    cos_random_pairs: float
    n_triples: int
    n_random_pairs: int
    seed: int


@dataclass
class RetrievalReport:
    top_k: int
    success_rate: float
    target: str
    n_queries: int
    rankings: list
    seed: int


@dataclass
class EvalTriple:
    identity_a: int
    face_a: object
    identity_b: int
    face_b: object
    voice_b: object


def build_eval_triples(manifest, split="eval", n_triples=100, seed=0):
    faces_by_id = manifest.by_identity("face", split)
    voices_by_id = manifest.by_identity("voice", split)
    ids = sorted(set(faces_by_id) & set(voices_by_id))
    if len(ids) < 2:
        raise DataError(
            f"evaluation needs >= 2 identities with both faces and voices "
            f"in split {split!r}")
    rng = np.random.default_rng(seed)
    triples = []
    for _ in range(n_triples):
        a, b = rng.choice(ids, size=2, replace=False)
        faces_a, faces_b, voices_b = faces_by_id[a], faces_by_id[b], voices_by_id[b]
        triples.append(EvalTriple(
            identity_a=int(a),
            face_a=faces_a[rng.integers(len(faces_a))],
            identity_b=int(b),
            face_b=faces_b[rng.integers(len(faces_b))],
            voice_b=voices_b[rng.integers(len(voices_b))]))
    return triples


def _generate_for_triple(triple, generator, encoder):
    face_a = load_face(triple.face_a)
    rate = getattr(encoder, "sample_rate", audio.CANONICAL_RATE)
    features = audio.extract_features(audio.load_voice(triple.voice_b, rate))
    return generator.synthesize(face_a, encoder.embed(features)), face_a


def eval_similarity(manifest, generator, critics, encoder, split="eval",
                    n_triples=100, n_random_pairs=1000, seed=0):
    """Mean cosine of generated faces against the proposal (A) and the
    voice owner (B), next to a random real-face-pair baseline."""
    triples = build_eval_triples(manifest, split, n_triples, seed)
    cos_a, cos_b = [], []
    for triple in triples:
        generated, face_a = _generate_for_triple(triple, generator, encoder)
        g_emb = face_embed(generated, critics)
        cos_a.append(cosine(g_emb, face_embed(face_a, critics)))
        cos_b.append(cosine(g_emb, face_embed(load_face(triple.face_b), critics)))

    face_paths = [path for _, path in manifest.faces(split)]
    if len(face_paths) < 2:
        raise DataError("random-pair baseline needs at least 2 evaluation faces")
    embeddings = [face_embed(load_face(p), critics) for p in face_paths]
    rng = np.random.default_rng(seed)
    baseline = []
    for _ in range(n_random_pairs):
        i, j = rng.choice(len(embeddings), size=2, replace=False)
        baseline.append(cosine(embeddings[i], embeddings[j]))

    return SimilarityReport(
        cos_generated_proposal=float(np.mean(cos_a)),
        cos_generated_target=float(np.mean(cos_b)),
        cos_random_pairs=float(np.mean(baseline)),
        n_triples=len(triples),
        n_random_pairs=n_random_pairs,
        seed=seed)


def eval_retrieval(manifest, generator, critics, encoder, k=5, split="eval",
                   n_queries=100, seed=0, target="B"):
    """Top-k retrieval of the queried identity from classifier scores on
    generated faces."""
    if target not in ("A", "B"):
        raise ConfigError(f"retrieval target must be 'A' or 'B', got {target!r}")
    if not 1 <= k <= manifest.n_identities:
        raise ConfigError(
            f"top-k of {k} is invalid for {manifest.n_identities} identities")
    triples = build_eval_triples(manifest, split, n_queries, seed)
    rankings, successes = [], 0
    for triple in triples:
        generated, _ = _generate_for_triple(triple, generator, encoder)
        scores = critics.classify(generated)
        ranked = ranked_identities(scores)
        rankings.append(ranked)
        wanted = triple.identity_b if target == "B" else triple.identity_a
        successes += int(wanted in ranked[:k])
    return RetrievalReport(
        top_k=k,
        success_rate=successes / len(triples),
        target=target,
        n_queries=len(triples),
        rankings=rankings,
        seed=seed)


def write_report(path, similarity=None, retrieval=None, extra=None):
    payload = {}
    if similarity is not None:
        payload["similarity"] = asdict(similarity)
    if retrieval is not None:
        payload["retrieval"] = asdict(retrieval)
    if extra:
        payload.update(extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return payload
