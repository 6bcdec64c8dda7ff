"""The gated U-net: a face autoencoder whose decoder filters are
modulated by a voice embedding.

Encoder: four DoubleConv blocks (base widths 64/128/256/512) each
followed by 2x2 max pooling, giving skip features at 64/32/16/8 px and a
4x4 bottleneck.  Decoder: mirrored stride-2 transpose convolutions and
DoubleConv blocks with channel-concatenated skips, then a 3x3 conv and
tanh back to a 3x64x64 image in [-1, 1].

The gating controller is one linear projection per decoder
transpose-conv layer, mapping the 64-d voice embedding to a sigmoid gate
for every filter weight of that layer; the transpose conv runs with
``stored_weight * gate`` while biases and DoubleConv weights stay
ungated.  Effective weights are recomputed on every forward pass, so a
batch is always a single sample.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .data import validate_face
from .errors import ShapeError

BASE_CHANNELS = (64, 128, 256, 512)
EMBED_DIM = 64


@dataclass(frozen=True)
class GeneratorConfig:
    width: float = 1.0
    embed_dim: int = EMBED_DIM
    in_channels: int = 3

    def channels(self):
        return tuple(max(1, int(round(c * self.width))) for c in BASE_CHANNELS)

    def fingerprint(self):
        return f"generator:{self.in_channels}->{self.channels()}:e{self.embed_dim}"


@dataclass
class SkipStack:
    """Encoder features, shallow to deep, plus the pooled bottleneck."""

    skips: list
    bottleneck: ag.Tensor


class DoubleConv(nn.Module):
    """Two 3x3 convs, each followed by batch norm and ReLU."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, rng, padding=1)
        self.bn1 = nn.BatchNorm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, rng, padding=1)
        self.bn2 = nn.BatchNorm(cout)

    def forward(self, x):
        x = ag.relu(self.bn1(self.conv1(x)))
        return ag.relu(self.bn2(self.conv2(x)))


class GateProjection(nn.Module):
    """Linear map from the voice embedding to one gate per filter weight."""

    def __init__(self, embed_dim, target_shape, rng):
        super().__init__()
        self.target_shape = tuple(int(s) for s in target_shape)
        self.proj = nn.Linear(embed_dim, int(np.prod(self.target_shape)), rng)

    @property
    def gate_count(self):
        return int(np.prod(self.target_shape))

    def forward(self, e):
        gates = ag.gate_sigmoid(self.proj(e))
        return ag.reshape(gates, self.target_shape)


class UNetGenerator(nn.Module):
    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        c1, c2, c3, c4 = config.channels()
        cin = config.in_channels
        self.enc1 = DoubleConv(cin, c1, rng)
        self.enc2 = DoubleConv(c1, c2, rng)
        self.enc3 = DoubleConv(c2, c3, rng)
        self.enc4 = DoubleConv(c3, c4, rng)
        self.up4 = nn.ConvTranspose2d(c4, c4, rng)
        self.dec4 = DoubleConv(2 * c4, c3, rng)
        self.up3 = nn.ConvTranspose2d(c3, c3, rng)
        self.dec3 = DoubleConv(2 * c3, c2, rng)
        self.up2 = nn.ConvTranspose2d(c2, c2, rng)
        self.dec2 = DoubleConv(2 * c2, c1, rng)
        self.up1 = nn.ConvTranspose2d(c1, c1, rng)
        self.dec1 = DoubleConv(2 * c1, c1, rng)
        self.out_conv = nn.Conv2d(c1, cin, 3, rng, padding=1)
        self.gate_projections = [
            GateProjection(config.embed_dim, up.weight.shape, rng)
            for up in (self.up4, self.up3, self.up2, self.up1)
        ]

    # -- pieces ------------------------------------------------------------

    def _as_face_tensor(self, face):
        if isinstance(face, ag.Tensor):
            if face.shape != (1, 3, 64, 64):
                raise ShapeError(f"expected a single (1,3,64,64) face, got {face.shape}")
            return face
        return ag.Tensor(validate_face(face)[None])

    def encode(self, face):
        x = self._as_face_tensor(face)
        s1 = self.enc1(x)
        s2 = self.enc2(ag.maxpool2x2(s1))
        s3 = self.enc3(ag.maxpool2x2(s2))
        s4 = self.enc4(ag.maxpool2x2(s3))
        return SkipStack([s1, s2, s3, s4], ag.maxpool2x2(s4))

    def compute_gates(self, embedding):
        if isinstance(embedding, ag.Tensor):
            e = embedding
            if e.shape != (1, self.config.embed_dim):
                raise ShapeError(f"expected (1,{self.config.embed_dim}) embedding, got {e.shape}")
        else:
            embedding = np.asarray(embedding, dtype=np.float64)
            if embedding.shape != (self.config.embed_dim,):
                raise ShapeError(
                    f"expected a {self.config.embed_dim}-d voice embedding, "
                    f"got shape {embedding.shape}")
            if not np.isfinite(embedding).all():
                raise ShapeError("voice embedding contains non-finite values")
            e = ag.Tensor(embedding[None])
        return [proj(e) for proj in self.gate_projections]

    def decode(self, stack, gates=None):
        ups = (self.up4, self.up3, self.up2, self.up1)
        decs = (self.dec4, self.dec3, self.dec2, self.dec1)
        x = stack.bottleneck
        for i, (up, dec, skip) in enumerate(zip(ups, decs, reversed(stack.skips))):
            weight = up.weight if gates is None else ag.mul(up.weight, gates[i])
            x = up(x, weight=weight)
            x = dec(ag.concat([skip, x], axis=1))
        return ag.tanh(self.out_conv(x))

    # -- entry points --------------------------------------------------------

    def generate(self, face, embedding, gate_override=None):
        """Morph `face` under the gates of `embedding`; returns the graph
        tensor (1,3,64,64).

        `gate_override` replaces every gate with a constant (testing
        hook; 1.0 reproduces the plain autoencoder exactly).
        """
        stack = self.encode(face)
        if gate_override is None:
            gates = self.compute_gates(embedding)
        else:
            gates = [ag.Tensor(np.full(p.target_shape, float(gate_override)))
                     for p in self.gate_projections]
        return self.decode(stack, gates)

    def forward_ungated(self, face):
        """The plain U-net autoencoder path (no gate multiplication)."""
        return self.decode(self.encode(face), None)

    def synthesize(self, face, embedding):
        """Inference helper: eval mode, no autograd, ndarray out."""
        was_training = self.training
        self.eval()
        try:
            with ag.no_grad():
                out = self.generate(face, embedding)
        finally:
            self.train(was_training)
        return out.data[0].copy()
