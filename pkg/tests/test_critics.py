"""Critic trunk/heads: shapes, probability contracts, shared-trunk
coupling, capacity, and gradients."""

import numpy as np
import pytest

import voicemorph.autograd as ag
from voicemorph import nn
from voicemorph.critics import CriticConfig, CriticNet
from voicemorph.errors import ConfigError, ShapeError

from _gradcheck import assert_grad_close, kink_safe_numeric_gradient, sample_indices

WIDTH = 0.125


@pytest.fixture(scope="module")
def critics():
    return CriticNet(CriticConfig(n_identities=4, width=WIDTH), np.random.default_rng(0))


def random_face(seed=0):
    return np.random.default_rng(seed).uniform(-0.9, 0.9, size=(3, 64, 64))


def test_config_validates_identity_count():
    with pytest.raises(ConfigError):
        CriticConfig(n_identities=1)


def test_trunk_feature_is_64d(critics):
    feat = critics.trunk_features(random_face())
    assert feat.shape == (64,)
    assert np.isfinite(feat).all()


def test_trunk_spatial_chain(critics):
    x = ag.Tensor(random_face(1)[None])
    x = ag.leaky_relu(critics.conv_in(x), 0.2)
    sizes = [x.shape[2]]
    for stage in critics.stages:
        x = ag.leaky_relu(stage(x), 0.2)
        sizes.append(x.shape[2])
    x = ag.leaky_relu(critics.conv_out(x), 0.2)
    sizes.append(x.shape[2])
    assert sizes == [64, 32, 16, 8, 4, 1]


def test_trunk_deterministic(critics):
    f = random_face(2)
    assert (critics.trunk_features(f) == critics.trunk_features(f.copy())).all()


def test_trunk_rejects_bad_shapes(critics):
    with pytest.raises(ShapeError):
        critics.trunk_features(np.zeros((3, 32, 32)))
    with pytest.raises(ShapeError):
        critics.trunk(ag.Tensor(np.zeros((1, 3, 32, 32))))


def test_zero_heads_give_half_probability_and_uniform_classes():
    crit = CriticNet(CriticConfig(n_identities=4, width=WIDTH), np.random.default_rng(3))
    crit.disc_head.weight.data[:] = 0.0
    crit.disc_head.bias.data[:] = 0.0
    crit.clf_head.weight.data[:] = 0.0
    crit.clf_head.bias.data[:] = 0.0
    for seed in range(3):
        assert crit.discriminate(random_face(seed)) == 0.5
        np.testing.assert_allclose(crit.classify(random_face(seed)), 0.25)


def test_probability_contracts_on_random_inputs(critics):
    for seed in range(5):
        p = critics.discriminate(random_face(seed))
        assert 0.0 < p < 1.0
        probs = critics.classify(random_face(seed + 10))
        assert (probs >= 0).all()
        assert abs(probs.sum() - 1.0) < 1e-6


def test_trunk_is_shared_by_both_heads():
    crit = CriticNet(CriticConfig(n_identities=4, width=WIDTH), np.random.default_rng(4))
    f = random_face(5)
    d0, c0 = crit.discriminate(f), crit.classify(f)
    crit.stages[1].weight.data.flat[7] += 0.05
    assert crit.discriminate(f) != d0
    assert np.abs(crit.classify(f) - c0).max() > 0


def test_parameter_groups_partition_correctly(critics):
    d_ids = {id(p) for p in critics.discriminator_parameters()}
    c_ids = {id(p) for p in critics.classifier_parameters()}
    all_ids = {id(p) for p in critics.parameters()}
    assert d_ids & c_ids == set()
    assert d_ids | c_ids == all_ids
    assert id(critics.clf_head.weight) in c_ids
    assert id(critics.conv_in.weight) in c_ids
    assert id(critics.disc_head.weight) in d_ids


def he_rescale(crit):
    """Move the test point to He-scale weights so LReLU margins sit far
    from the pinned finite-difference step (any point is a valid place to
    check a gradient; this one is well conditioned)."""
    for conv in [crit.conv_in, *crit.stages, crit.conv_out]:
        fan = int(np.prod(conv.weight.shape[1:]))
        conv.weight.data *= 1.0 / (0.02 * np.sqrt(fan))
    for head in [crit.disc_head, crit.clf_head]:
        head.weight.data *= 1.0 / (0.02 * np.sqrt(head.weight.shape[0]))


def test_critic_gradients_match_finite_differences():
    crit = CriticNet(CriticConfig(n_identities=4, width=WIDTH), np.random.default_rng(6))
    he_rescale(crit)
    f = random_face(7)

    def forward():
        logit = crit.discriminator_logit(ag.Tensor(f[None]))
        clf = crit.classifier_logits(ag.Tensor(f[None]))
        return float(ag.bce_logits(logit, 1.0).data +
                     ag.cross_entropy_logits(clf, [2]).data)

    logit = crit.discriminator_logit(ag.Tensor(f[None]))
    clf = crit.classifier_logits(ag.Tensor(f[None]))
    loss = ag.add(ag.bce_logits(logit, 1.0), ag.cross_entropy_logits(clf, [2]))
    for p in crit.parameters():
        p.grad = None
    loss.backward()

    rng = np.random.default_rng(8)
    params = dict(crit.named_parameters())
    for name in ["conv_in.weight", "stages.1.weight", "conv_out.weight",
                 "disc_head.weight", "clf_head.weight", "clf_head.bias"]:
        p = params[name]
        candidates = sample_indices(rng, p.size, 30)
        idx, numeric, _ = kink_safe_numeric_gradient(forward, p.data, candidates, need=3)
        assert_grad_close(p.grad.flat[idx], numeric)


def test_classifier_capacity_overfits_toy_faces(toy_corpus, pretrained_encoder):
    """Overfit check through the real update path: classifier updates
    alone must reach >= 90% on the training faces."""
    from voicemorph.training import TrainConfig, Trainer

    encoder, _ = pretrained_encoder
    cfg = TrainConfig(width=WIDTH, max_steps=900, seed=3, early_stop=False)
    tr = Trainer(toy_corpus, encoder, cfg)
    for _ in range(900):
        inst = tr.sample_instance()
        tr.critics.train()
        tr.update_classifier(inst)
    correct = sum(int(np.argmax(tr.critics.classify(face)) == idx)
                  for idx, face in tr._faces)
    assert correct / len(tr._faces) >= 0.9
