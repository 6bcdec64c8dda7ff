"""Shared-trunk discriminator and identity classifier.

One convolutional trunk (1x1 stem, four stride-2 3x3 stages, then a 4x4
valid conv down to a 64-d feature, LeakyReLU throughout, no batch norm)
feeds two linear heads: real/synthetic discrimination and k-way identity
classification.  The trunk belongs to the classifier's parameter group,
so identity supervision shapes the shared features (which double as the
face embedding for evaluation); the discriminator is a linear probe on
them.  The two groups are disjoint, so each update leaves the other's
parameters untouched.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .data import validate_face
from .errors import ConfigError, ShapeError

BASE_TRUNK_CHANNELS = (32, 64, 128, 256, 512)
FEATURE_DIM = 64
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class CriticConfig:
    n_identities: int
    width: float = 1.0
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.n_identities < 2:
            raise ConfigError("classifier needs at least 2 identities")

    def channels(self):
        return tuple(max(1, int(round(c * self.width))) for c in BASE_TRUNK_CHANNELS)

    def fingerprint(self):
        return f"critics:{self.channels()}:f{self.feature_dim}:k{self.n_identities}"


class CriticNet(nn.Module):
    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        t0, t1, t2, t3, t4 = config.channels()
        self.conv_in = nn.Conv2d(3, t0, 1, rng)
        self.stages = [
            nn.Conv2d(t0, t1, 3, rng, stride=2, padding=1),
            nn.Conv2d(t1, t2, 3, rng, stride=2, padding=1),
            nn.Conv2d(t2, t3, 3, rng, stride=2, padding=1),
            nn.Conv2d(t3, t4, 3, rng, stride=2, padding=1),
        ]
        self.conv_out = nn.Conv2d(t4, config.feature_dim, 4, rng)
        self.disc_head = nn.Linear(config.feature_dim, 1, rng)
        self.clf_head = nn.Linear(config.feature_dim, config.n_identities, rng)

    def _as_batch(self, face):
        if isinstance(face, ag.Tensor):
            if face.ndim != 4 or face.shape[1:] != (3, 64, 64):
                raise ShapeError(f"expected (N,3,64,64) faces, got {face.shape}")
            return face
        return ag.Tensor(validate_face(face)[None])

    def trunk(self, x):
        x = self._as_batch(x)
        x = ag.leaky_relu(self.conv_in(x), LEAKY_SLOPE)
        for stage in self.stages:
            x = ag.leaky_relu(stage(x), LEAKY_SLOPE)
        x = ag.leaky_relu(self.conv_out(x), LEAKY_SLOPE)
        return ag.reshape(x, (x.shape[0], self.config.feature_dim))

    def discriminator_logit(self, x):
        return self.disc_head(self.trunk(x))

    def classifier_logits(self, x):
        return self.clf_head(self.trunk(x))

    # -- inference views -----------------------------------------------------

    def trunk_features(self, face):
        """64-d face feature vector (the evaluation embedding)."""
        with ag.no_grad():
            return self.trunk(face).data[0].copy()

    def discriminate(self, face):
        """P(real) in (0, 1)."""
        with ag.no_grad():
            logit = self.discriminator_logit(face)
        return float(ag._sigmoid(logit.data)[0, 0])

    def classify(self, face):
        """Identity probability vector of length k (sums to 1)."""
        with ag.no_grad():
            logits = self.classifier_logits(face)
        return ag.softmax(logits.data[0])

    # -- parameter groups ------------------------------------------------------

    def trunk_modules(self):
        return [self.conv_in, *self.stages, self.conv_out]

    def discriminator_parameters(self):
        """The real/fake probe on the shared features."""
        return self.disc_head.parameters()

    def classifier_parameters(self):
        """Trunk plus classifier head: identity supervision owns the
        shared feature extractor."""
        return [p for m in (*self.trunk_modules(), self.clf_head)
                for p in m.parameters()]
