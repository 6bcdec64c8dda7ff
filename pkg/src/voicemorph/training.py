"""Adversarial training of the gated autoencoder.

Each iteration samples a proposal face (f_A, I_A), a target voice
(v_B, I_B), a face of B and a voice of A, then:

1. updates the discriminator group (trunk + head) on BCE(fake, 0) +
   BCE(real, 1), with the fake detached so nothing reaches the
   generator;
2. updates the classifier head on cross-entropy over the real face
   (the classifier is a linear probe on the discriminator's trunk);
3. updates the generator on the five-term objective
   l1*L1(fake, f_A) + l2*L1(fake, f_B) + l3*CE(C(fake), I_B)
   + l4*BCE(D(fake), 1) + l5*L1(G(fake, e_A), f_A),
   with critic parameters frozen and the frozen voice encoder supplying
   the embeddings.

Batch size is fixed at 1: gates are a function of the sample's voice, so
effective weights are per-sample by construction and are never shared
across samples in a step.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import audio
from . import autograd as ag
from . import nn
from .critics import CriticConfig, CriticNet
from .data import load_checkpoint, load_face, save_checkpoint
from .errors import (CheckpointError, ConfigError, CorpusError, DataError,
                     NumericError)
from .generator import GeneratorConfig, UNetGenerator
from .losses import classifier_loss, discriminator_loss, l1_loss

log = logging.getLogger(__name__)

GENERATOR_TERM_NAMES = ("g_proposal_l1", "g_target_l1", "g_identity_ce",
                        "g_adversarial_bce", "g_cycle_l1")
CSV_COLUMNS = ("step", "d_real", "d_fake", "c_real",
               *GENERATOR_TERM_NAMES, "g_total")


@dataclass
class TrainConfig:
    """Loss weights and optimizer settings; the defaults are the final
    full-scale values (Adam 2e-4, betas 0.5/0.999, batch 1, D:G 1:1,
    weights 1/10/1/1/10)."""

    lambda_proposal: float = 1.0
    lambda_target: float = 10.0
    lambda_identity: float = 1.0
    lambda_adversarial: float = 1.0
    lambda_cycle: float = 10.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    d_to_g_ratio: int = 1
    batch_size: int = 1
    max_steps: int = 2000
    seed: int = 0
    checkpoint_interval: int = 500
    width: float = 1.0
    early_stop: bool = True
    early_stop_window: int = 200
    early_stop_min_improvement: float = 1e-3

    def validate(self):
        for name in ("lambda_proposal", "lambda_target", "lambda_identity",
                     "lambda_adversarial", "lambda_cycle"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size != 1:
            raise ConfigError(
                "batch_size is fixed at 1: gate-modulated weights are "
                "per-sample and cannot be shared across a batch")
        if self.d_to_g_ratio < 1:
            raise ConfigError("d_to_g_ratio must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")
        if self.width <= 0:
            raise ConfigError("width must be positive")
        if self.early_stop_window < 1:
            raise ConfigError("early_stop_window must be >= 1")
        return self

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values).validate()


def _cast_config_value(kind, raw):
    if kind is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(raw)
    return kind(raw)


def parse_config_file(path):
    """Flat ``key = value`` lines; '#' starts a comment."""
    values = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _cast_config_value(types[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return values


@dataclass
class TrainingInstance:
    """One sampled tuple: proposal face/identity A with its voice
    embedding, and target identity B's face and voice embedding."""

    face_a: np.ndarray
    identity_a: int
    embedding_a: np.ndarray
    face_b: np.ndarray
    identity_b: int
    embedding_b: np.ndarray


@dataclass
class StepReport:
    step: int
    d_real: float
    d_fake: float
    c_real: float
    g_terms: dict | None
    g_total: float | None

    def row(self):
        row = {"step": self.step, "d_real": self.d_real,
               "d_fake": self.d_fake, "c_real": self.c_real}
        for name in GENERATOR_TERM_NAMES:
            row[name] = "" if self.g_terms is None else self.g_terms[name]
        row["g_total"] = "" if self.g_total is None else self.g_total
        return row

    def values(self):
        vals = [self.d_real, self.d_fake, self.c_real]
        if self.g_terms is not None:
            vals += list(self.g_terms.values()) + [self.g_total]
        return vals


class Trainer:
    def __init__(self, manifest, encoder, config, out_dir=None):
        config.validate()
        if not getattr(encoder, "frozen", False):
            raise ConfigError("the voice encoder must be pre-trained and frozen")
        self.config = config
        self.encoder = encoder
        self.out_dir = out_dir
        self.manifest = manifest

        train_faces = manifest.faces("train")
        train_voices = manifest.voices("train")
        self._faces_by_id = {}
        self._faces = [(idx, load_face(path)) for idx, path in train_faces]
        for idx, face in self._faces:
            self._faces_by_id.setdefault(idx, []).append(face)
        self._voices_by_id = {}
        for idx, path in train_voices:
            self._voices_by_id.setdefault(idx, []).append(path)
        identities = sorted(set(self._faces_by_id) | set(self._voices_by_id))
        if len(identities) < 2:
            raise CorpusError("training needs at least 2 identities")
        for idx in identities:
            if not self._faces_by_id.get(idx) or not self._voices_by_id.get(idx):
                raise CorpusError(
                    f"identity index {idx} is missing a training face or voice")

        self.generator = UNetGenerator(
            GeneratorConfig(width=config.width), np.random.default_rng([config.seed, 1]))
        self.critics = CriticNet(
            CriticConfig(n_identities=manifest.n_identities, width=config.width),
            np.random.default_rng([config.seed, 2]))
        betas = (config.beta1, config.beta2)
        self.adam_g = nn.Adam(self.generator.parameters(), config.learning_rate, betas)
        self.adam_d = nn.Adam(self.critics.discriminator_parameters(),
                              config.learning_rate, betas)
        self.adam_c = nn.Adam(self.critics.classifier_parameters(),
                              config.learning_rate, betas)
        self.rng = np.random.default_rng([config.seed, 0])
        self.step = 0
        self.history = []
        self._embedding_cache = {}

    # -- data access -----------------------------------------------------

    def _embedding(self, path):
        key = str(path)
        if key not in self._embedding_cache:
            features = audio.extract_features(
                audio.load_voice(path, self.encoder.sample_rate))
            self._embedding_cache[key] = self.encoder.embed(features)
        return self._embedding_cache[key]

    def sample_instance(self):
        idx_a, face_a = self._faces[self.rng.integers(len(self._faces))]
        voices = [(i, p) for i, paths in sorted(self._voices_by_id.items())
                  for p in paths]
        idx_b, voice_b = voices[self.rng.integers(len(voices))]
        faces_b = self._faces_by_id[idx_b]
        face_b = faces_b[self.rng.integers(len(faces_b))]
        voices_a = self._voices_by_id[idx_a]
        voice_a = voices_a[self.rng.integers(len(voices_a))]
        return TrainingInstance(
            face_a=face_a, identity_a=idx_a, embedding_a=self._embedding(voice_a),
            face_b=face_b, identity_b=idx_b, embedding_b=self._embedding(voice_b))

    # -- the three sub-updates --------------------------------------------

    def generate_fake(self, instance):
        return self.generator.generate(instance.face_a, instance.embedding_b)

    def update_discriminator(self, instance, fake):
        self.adam_d.zero_grad()
        with nn.frozen(*self.critics.trunk_modules(), self.critics.clf_head):
            loss_fake = discriminator_loss(fake.detach(), 0, self.critics)
            loss_real = discriminator_loss(instance.face_a, 1, self.critics)
            ag.add(loss_fake, loss_real).backward()
        self.adam_d.step()
        return loss_real.item(), loss_fake.item()

    def update_classifier(self, instance):
        self.adam_c.zero_grad()
        with nn.frozen(self.critics.disc_head):
            loss = classifier_loss(instance.face_a, instance.identity_a, self.critics)
            loss.backward()
        self.adam_c.step()
        return loss.item()

    def update_generator(self, instance, fake):
        cfg = self.config
        face_a = ag.Tensor(instance.face_a[None])
        face_b = ag.Tensor(instance.face_b[None])
        self.adam_g.zero_grad()
        with nn.frozen(self.critics):
            terms = {
                "g_proposal_l1": l1_loss(fake, face_a),
                "g_target_l1": l1_loss(fake, face_b),
                "g_identity_ce": classifier_loss(fake, instance.identity_b, self.critics),
                "g_adversarial_bce": discriminator_loss(fake, 1, self.critics),
                "g_cycle_l1": l1_loss(
                    self.generator.generate(fake, instance.embedding_a), face_a),
            }
            weights = (cfg.lambda_proposal, cfg.lambda_target, cfg.lambda_identity,
                       cfg.lambda_adversarial, cfg.lambda_cycle)
            total = terms["g_proposal_l1"] * weights[0]
            for w, name in zip(weights[1:], list(terms)[1:]):
                total = ag.add(total, terms[name] * w)
            total.backward()
        self.adam_g.step()
        raw = {name: t.item() for name, t in terms.items()}
        return raw, total.item()

    def train_step(self, instance):
        """One full iteration; the generator update is skipped on steps
        where the D:G ratio says only the critics move."""
        self.generator.train()
        self.critics.train()
        fake = self.generate_fake(instance)
        d_real, d_fake = self.update_discriminator(instance, fake)
        c_real = self.update_classifier(instance)
        if self.step % self.config.d_to_g_ratio == self.config.d_to_g_ratio - 1:
            g_terms, g_total = self.update_generator(instance, fake)
        else:
            g_terms, g_total = None, None
        report = StepReport(self.step, d_real, d_fake, c_real, g_terms, g_total)
        self.step += 1
        self.history.append(report)
        return report

    # -- the loop ----------------------------------------------------------

    def _should_stop_early(self):
        cfg = self.config
        if not cfg.early_stop:
            return False
        totals = [r.g_total for r in self.history if r.g_total is not None]
        w = cfg.early_stop_window
        if len(totals) < 2 * w:
            return False
        prev = float(np.mean(totals[-2 * w:-w]))
        cur = float(np.mean(totals[-w:]))
        if prev <= 0:
            return False
        return (prev - cur) / prev < cfg.early_stop_min_improvement

    def train(self):
        cfg = self.config
        log.info("training config: %s", json.dumps(asdict(cfg), sort_keys=True))
        log.info("seed %d, %d identities, starting at step %d",
                 cfg.seed, self.manifest.n_identities, self.step)
        csv_file = writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self.out_dir / "losses.csv"
            new_file = not path.exists()
            csv_file = open(path, "a", newline="")
            writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS)
            if new_file:
                writer.writeheader()
        try:
            while self.step < cfg.max_steps:
                report = self.train_step(self.sample_instance())
                if not all(np.isfinite(v) for v in report.values()):
                    if self.out_dir is not None:
                        self.save(self.out_dir / "ckpt_diagnostic.npz")
                    raise NumericError(
                        f"non-finite loss at step {report.step}: {report.row()}")
                if writer is not None:
                    writer.writerow(report.row())
                    csv_file.flush()
                if self.out_dir is not None and self.step % cfg.checkpoint_interval == 0:
                    self.save(self.out_dir / f"ckpt_step{self.step:06d}.npz")
                if self._should_stop_early():
                    log.info("early stop at step %d (loss plateau)", self.step)
                    break
        finally:
            if csv_file is not None:
                csv_file.close()
        if self.out_dir is not None:
            self.save(self.out_dir / "ckpt_final.npz")
        return self.history

    # -- persistence -------------------------------------------------------

    def _meta(self):
        return {
            "kind": "trainer",
            "config": asdict(self.config),
            "generator_config": asdict(self.generator.config),
            "generator_fingerprint": self.generator.config.fingerprint(),
            "critic_config": asdict(self.critics.config),
            "critic_fingerprint": self.critics.config.fingerprint(),
            "encoder_config": asdict(self.encoder.config),
            "encoder_fingerprint": nn.fingerprint(self.encoder, include_buffers=True),
            "encoder_sample_rate": self.encoder.sample_rate,
            "identities": self.manifest.identities,
            "step": self.step,
            "rng_state": self.rng.bit_generator.state,
        }

    def save(self, path):
        arrays = {}
        for prefix, state in (
            ("gen", self.generator.state_dict()),
            ("critic", self.critics.state_dict()),
            ("encoder", self.encoder.state_dict()),
            ("adam_g", self.adam_g.state_dict()),
            ("adam_d", self.adam_d.state_dict()),
            ("adam_c", self.adam_c.state_dict()),
        ):
            arrays.update({f"{prefix}/{k}": v for k, v in state.items()})
        arrays["history"] = _history_to_array(self.history)
        save_checkpoint(path, self._meta(), arrays)

    def load(self, path):
        meta, arrays = load_checkpoint(path, expected_kind="trainer")
        if meta["generator_fingerprint"] != self.generator.config.fingerprint():
            raise CheckpointError(f"{path}: generator architecture mismatch")
        if meta["critic_fingerprint"] != self.critics.config.fingerprint():
            raise CheckpointError(f"{path}: critic architecture mismatch")
        if meta["encoder_fingerprint"] != nn.fingerprint(self.encoder, include_buffers=True):
            raise CheckpointError(f"{path}: voice encoder differs from the one "
                                  "this run was started with")
        split = {"gen": {}, "critic": {}, "encoder": {},
                 "adam_g": {}, "adam_d": {}, "adam_c": {}}
        for key, value in arrays.items():
            if key == "history":
                continue
            prefix, name = key.split("/", 1)
            split[prefix][name] = value
        self.generator.load_state_dict(split["gen"])
        self.critics.load_state_dict(split["critic"])
        self.adam_g.load_state_dict(split["adam_g"])
        self.adam_d.load_state_dict(split["adam_d"])
        self.adam_c.load_state_dict(split["adam_c"])
        self.step = int(meta["step"])
        self.history = _history_from_array(arrays["history"])
        state = meta["rng_state"]
        state["state"] = {k: int(v) for k, v in state["state"].items()}
        self.rng.bit_generator.state = state
        return self


def _history_to_array(history):
    out = np.full((len(history), len(CSV_COLUMNS)), np.nan)
    for i, report in enumerate(history):
        row = report.row()
        for j, col in enumerate(CSV_COLUMNS):
            value = row[col]
            if value != "":
                out[i, j] = float(value)
    return out


def _history_from_array(array):
    history = []
    for row in np.asarray(array):
        values = dict(zip(CSV_COLUMNS, row))
        has_g = np.isfinite(values["g_total"])
        history.append(StepReport(
            step=int(values["step"]),
            d_real=values["d_real"], d_fake=values["d_fake"], c_real=values["c_real"],
            g_terms={k: values[k] for k in GENERATOR_TERM_NAMES} if has_g else None,
            g_total=values["g_total"] if has_g else None))
    return history


def build_models_from_checkpoint(path):
    """Reconstruct generator, critics, and the frozen voice encoder from a
    unified training checkpoint, for inference and evaluation."""
    from .voice_encoder import EncoderConfig, VoiceEncoder

    meta, arrays = load_checkpoint(path, expected_kind="trainer")
    gen_config = GeneratorConfig(**meta["generator_config"])
    critic_config = CriticConfig(**meta["critic_config"])
    if meta["generator_fingerprint"] != gen_config.fingerprint():
        raise CheckpointError(f"{path}: generator fingerprint mismatch")
    if meta["critic_fingerprint"] != critic_config.fingerprint():
        raise CheckpointError(f"{path}: critic fingerprint mismatch")
    generator = UNetGenerator(gen_config, np.random.default_rng(0))
    critics = CriticNet(critic_config, np.random.default_rng(0))
    encoder = VoiceEncoder(EncoderConfig(**meta["encoder_config"]),
                           np.random.default_rng(0))
    states = {"gen": {}, "critic": {}, "encoder": {}}
    for key, value in arrays.items():
        prefix, _, name = key.partition("/")
        if prefix in states:
            states[prefix][name] = value
    generator.load_state_dict(states["gen"])
    critics.load_state_dict(states["critic"])
    encoder.load_state_dict(states["encoder"])
    encoder.sample_rate = int(meta.get("encoder_sample_rate", audio.CANONICAL_RATE))
    if meta["encoder_fingerprint"] != nn.fingerprint(encoder, include_buffers=True):
        raise CheckpointError(f"{path}: stored voice encoder fails its fingerprint")
    encoder.freeze()
    generator.eval()
    critics.eval()
    return generator, critics, encoder, list(meta["identities"]), meta
