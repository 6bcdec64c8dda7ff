import pytest

from voicemorph import data, voice_encoder


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_corpus")
    return data.make_toy_corpus(out, n_identities=4, faces_per_identity=10,
                                clips_per_identity=10, seed=7)


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_corpus")
    return data.make_toy_corpus(out, n_identities=2, faces_per_identity=5,
                                clips_per_identity=5, seed=3)


@pytest.fixture(scope="session")
def pretrained_encoder(toy_corpus):
    encoder, stats = voice_encoder.pretrain_embedder(
        toy_corpus, width=0.25, epochs=6, lr=1e-3, seed=11)
    return encoder, stats
