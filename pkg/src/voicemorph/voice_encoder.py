"""Speaker embedding network and its classification pre-training.

Five stride-2 1-D conv + batchnorm + ReLU stages over the 64 mel bands
(treated as channels), global time-average pooling to a fixed 64-d
embedding.  The encoder is pre-trained on speaker identification with a
temporary softmax head, then frozen for generator training.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import audio
from . import autograd as ag
from . import nn
from .audio import MelSpectrogram
from .data import load_checkpoint, save_checkpoint
from .errors import CheckpointError, CorpusError, ShapeError
from .kernels import out_size

EMBED_DIM = 64
BASE_CHANNELS = (256, 384, 576, 864)


@dataclass(frozen=True)
class EncoderConfig:
    width: float = 1.0
    n_mels: int = audio.N_MELS
    embed_dim: int = EMBED_DIM

    def channels(self):
        inner = tuple(max(1, int(round(c * self.width))) for c in BASE_CHANNELS)
        return (self.n_mels, *inner, self.embed_dim)

    def fingerprint(self):
        return f"voice-encoder:{self.channels()}"


def temporal_lengths(t0, n_layers=5):
    """Per-layer temporal sizes under kernel 3, stride 2, padding 1."""
    lengths = []
    t = t0
    for _ in range(n_layers):
        t = out_size(t, 3, 2, 1)
        lengths.append(t)
    return lengths


class VoiceEncoder(nn.Module):
    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        chans = config.channels()
        self.convs = [nn.Conv1d(chans[i], chans[i + 1], rng) for i in range(5)]
        self.norms = [nn.BatchNorm(chans[i + 1]) for i in range(5)]
        self.frozen = False
        # ingest rate the encoder was trained at; voices are resampled to
        # this before feature extraction
        self.sample_rate = audio.CANONICAL_RATE

    def forward(self, x):
        for conv, norm in zip(self.convs, self.norms):
            x = ag.relu(norm(conv(x)))
        return ag.mean_axis(x, 2)

    def freeze(self):
        self.eval()
        self.requires_grad_(False)
        self.frozen = True
        return self

    def embed(self, mel):
        """Map one spectrogram to its (64,) embedding, in eval mode."""
        values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
        if values.ndim != 2 or values.shape[0] != self.config.n_mels:
            raise ShapeError(
                f"expected {self.config.n_mels} mel bands, got shape {values.shape}")
        was_training = self.training
        self.eval()
        try:
            with ag.no_grad():
                out = self.forward(ag.Tensor(values[None]))
        finally:
            self.train(was_training)
        return out.data[0].copy()


def embed_voice(mel, encoder):
    return encoder.embed(mel)


def _load_training_features(manifest, endpointing=True,
                            sample_rate=audio.CANONICAL_RATE):
    voices = manifest.voices("train")
    by_speaker = {}
    for idx, path in voices:
        by_speaker.setdefault(idx, []).append(path)
    if len(by_speaker) < 2:
        raise CorpusError("speaker pre-training needs at least 2 speakers")
    if any(len(paths) < 2 for paths in by_speaker.values()):
        raise CorpusError("every speaker needs at least 2 training recordings")
    features, labels = [], []
    for idx, path in voices:
        features.append(audio.extract_features(
            audio.load_voice(path, sample_rate), endpointing))
        labels.append(idx)
    return features, labels, len(by_speaker)


def _crop(values, n_frames, rng):
    t = values.shape[1]
    if t > n_frames:
        offset = int(rng.integers(0, t - n_frames + 1))
        return values[:, offset:offset + n_frames]
    if t < n_frames:
        return np.pad(values, ((0, 0), (0, n_frames - t)), mode="wrap")
    return values


def pretrain_embedder(manifest, width=1.0, epochs=10, lr=1e-3, seed=0,
                      endpointing=True, batch_size=8, crop_frames=96,
                      sample_rate=audio.CANONICAL_RATE):
    """Train encoder + softmax head on speaker ID, then freeze the encoder.

    Training batches fixed-length random crops so batch-norm statistics
    span several speakers; accuracy is measured afterwards on the full
    recordings in eval mode.  Returns (encoder, stats).
    """
    features, labels, n_speakers = _load_training_features(
        manifest, endpointing, sample_rate)
    rng = np.random.default_rng(seed)
    config = EncoderConfig(width=width)
    encoder = VoiceEncoder(config, rng)
    encoder.sample_rate = int(sample_rate)
    head = nn.Linear(config.embed_dim, n_speakers, rng)
    optimizer = nn.Adam([*encoder.parameters(), *head.parameters()], lr=lr)

    n = len(features)
    labels_arr = np.asarray(labels)
    final_loss = float("nan")
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            chunk = order[start:start + batch_size]
            x = ag.Tensor(np.stack(
                [_crop(features[i].values, crop_frames, rng) for i in chunk]))
            logits = head(encoder.forward(x))
            loss = ag.cross_entropy_logits(logits, labels_arr[chunk])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            final_loss = loss.item()

    encoder.eval()
    correct = 0
    with ag.no_grad():
        for feat, label in zip(features, labels):
            logits = head(ag.Tensor(encoder.embed(feat)[None]))
            correct += int(np.argmax(logits.data[0]) == label)
    encoder.freeze()
    stats = {
        "train_accuracy": correct / n,
        "n_speakers": n_speakers,
        "n_recordings": n,
        "epochs": epochs,
        "final_loss": final_loss,
        "seed": seed,
    }
    return encoder, stats


def save_embedder(path, encoder, stats=None):
    meta = {
        "kind": "voice-encoder",
        "config": asdict(encoder.config),
        "fingerprint": encoder.config.fingerprint(),
        "sample_rate": encoder.sample_rate,
        "stats": stats or {},
    }
    save_checkpoint(path, meta, encoder.state_dict())


def load_embedder(path):
    meta, arrays = load_checkpoint(path, expected_kind="voice-encoder")
    config = EncoderConfig(**meta["config"])
    if meta.get("fingerprint") != config.fingerprint():
        raise CheckpointError(f"{path}: architecture fingerprint mismatch")
    encoder = VoiceEncoder(config, np.random.default_rng(0))
    encoder.load_state_dict(arrays)
    encoder.sample_rate = int(meta.get("sample_rate", audio.CANONICAL_RATE))
    encoder.freeze()
    return encoder
