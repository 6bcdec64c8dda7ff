"""Corpus manifests, face/voice file handling, the synthetic toy corpus,
and the versioned checkpoint container.

A manifest is line-oriented text, one record per line:

    split <TAB> identity <TAB> kind <TAB> relative/path

with kind one of ``face``/``voice`` and split one of ``train``/``eval``.
Identity labels map to dense indices by sorted order, so indices are
stable across reloads.  Record paths resolve against the manifest's
directory unless the ``VOICEMORPH_DATA_ROOT`` environment variable
overrides the root.
"""

import colorsys
import json
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import audio
from .errors import CheckpointError, CorpusError, DataError, ShapeError

FACE_SHAPE = (3, 64, 64)
ENV_DATA_ROOT = "VOICEMORPH_DATA_ROOT"
CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_HEADER = "# voicemorph corpus manifest v1"


# ---------------------------------------------------------------------------
# faces

def validate_face(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != FACE_SHAPE:
        raise ShapeError(f"face must have shape {FACE_SHAPE}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeError("face contains non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise ShapeError("face values must lie in [-1, 1]")
    return arr


def load_face(path, convert_non_rgb=True):
    """Load an image as a 3x64x64 array in [-1, 1].

    Images already at 64x64 are only value-mapped; anything else is
    bilinearly rescaled first.
    """
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                if not convert_non_rgb:
                    raise DataError(f"{path}: mode {img.mode} is not RGB")
                img = img.convert("RGB")
            if img.size != (64, 64):
                img = img.resize((64, 64), Image.BILINEAR)
            pixels = np.asarray(img, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return (pixels / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def save_face(path, values):
    arr = validate_face(values)
    pixels = np.clip(np.round((arr + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ManifestRecord:
    split: str
    identity: str
    kind: str
    path: str


class CorpusManifest:
    def __init__(self, root, records):
        self.root = Path(root)
        self.records = list(records)
        for r in self.records:
            if r.kind not in ("face", "voice"):
                raise DataError(f"unknown record kind {r.kind!r}")
            if r.split not in ("train", "eval"):
                raise DataError(f"unknown split {r.split!r}")
        self.identities = sorted({r.identity for r in self.records})
        self.label_index = {label: i for i, label in enumerate(self.identities)}
        for label in self.identities:
            kinds = {r.kind for r in self.records if r.identity == label}
            if kinds != {"face", "voice"}:
                raise CorpusError(f"identity {label!r} needs at least one face and one voice")

    @property
    def n_identities(self):
        return len(self.identities)

    def _select(self, kind, split):
        return [
            (self.label_index[r.identity], self.root / r.path)
            for r in self.records
            if r.kind == kind and (split is None or r.split == split)
        ]

    def faces(self, split=None):
        return self._select("face", split)

    def voices(self, split=None):
        return self._select("voice", split)

    def by_identity(self, kind, split=None):
        grouped = {}
        for idx, path in self._select(kind, split):
            grouped.setdefault(idx, []).append(path)
        return grouped


def write_manifest(path, records):
    lines = [MANIFEST_HEADER]
    lines += [f"{r.split}\t{r.identity}\t{r.kind}\t{r.path}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = Path(os.environ.get(ENV_DATA_ROOT) or path.parent)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
        records.append(ManifestRecord(*parts))
    if not records:
        raise DataError(f"{path}: manifest has no records")
    return CorpusManifest(root, records)


# ---------------------------------------------------------------------------
# synthetic toy corpus

def _hsv(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v)) * 2.0 - 1.0


def _pattern_mask(kind, cx, cy, radius):
    """Pattern families, all bounded to a local envelope around (cx, cy)
    so the rest of the canvas stays shared background."""
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    disc = dy ** 2 + dx ** 2 < radius ** 2
    square = (np.abs(dy) < radius) & (np.abs(dx) < radius)
    if kind == 0:
        return disc
    if kind == 1:
        return square
    if kind == 2:  # striped disc
        return disc & ((dy // 4).astype(int) % 2 == 0)
    if kind == 3:  # checkered square
        return square & (((dy // 6).astype(int) + (dx // 6).astype(int)) % 2 == 0)
    if kind == 4:  # plus sign
        reach = radius * 1.3
        return ((np.abs(dy) < radius / 2) & (np.abs(dx) < reach)) | \
               ((np.abs(dx) < radius / 2) & (np.abs(dy) < reach))
    if kind == 5:  # ring
        return disc & (dy ** 2 + dx ** 2 > (radius * 0.55) ** 2)
    if kind == 6:  # barred square
        return square & ((dx // 4).astype(int) % 2 == 0)
    # diamond
    return np.abs(dy) + np.abs(dx) < radius * 1.4


_TOY_BACKGROUND = _hsv(0.6, 0.25, 0.16)


def _toy_face(identity, n_identities, rng):
    """All identities share one dark background (the common scaffold);
    identity is a saturated pattern palette and pattern family, while the
    pattern's geometry (position, size) varies per sample.  Morphing a
    face to another voice should therefore repaint the pattern palette
    while keeping the sample's layout, which is exactly what the gated
    decoder can express."""
    hue = identity / n_identities
    foreground = _hsv(hue, 0.9, 0.95 - 0.25 * (identity % 2))
    cx = 32 + rng.integers(-6, 7)
    cy = 32 + rng.integers(-6, 7)
    radius = 15 + rng.integers(-4, 5)
    mask = _pattern_mask(identity % 8, cx, cy, radius)
    face = np.empty(FACE_SHAPE)
    face[:] = _TOY_BACKGROUND[:, None, None]
    face[:, mask] = foreground[:, None]
    face += rng.normal(0.0, 0.010, size=FACE_SHAPE) + rng.normal(0.0, 0.012)
    return np.clip(face, -1.0, 1.0)


def _toy_voice(identity, rng, rate=audio.CANONICAL_RATE):
    """Distinct harmonic stack per identity, amplitude-modulated at an
    identity-specific rate, padded with silence so endpointing has
    something to trim."""
    f0 = 100.0 + 65.0 * identity
    decay = 0.55 + 0.08 * (identity % 5)
    parity_gain = 0.35 if identity % 2 else 1.0
    am_rate = 1.5 + 1.1 * identity
    duration = 1.1 + 0.2 * rng.random()
    t = np.arange(int(duration * rate)) / rate
    jitter = 1.0 + 0.01 * rng.normal()
    signal = np.zeros_like(t)
    for k in range(1, 9):
        amp = decay ** (k - 1) * (parity_gain if k % 2 == 0 else 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        signal += amp * np.sin(2 * np.pi * k * f0 * jitter * t + phase)
    signal *= 0.55 + 0.45 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    signal *= 0.35 / np.max(np.abs(signal))
    signal += rng.normal(0.0, 0.004, size=signal.size)
    pad = np.zeros(int(0.12 * rate))
    return audio.Waveform(np.concatenate([pad, signal, pad]), rate)


def make_toy_corpus(out_dir, n_identities=4, faces_per_identity=10,
                    clips_per_identity=10, seed=0, eval_fraction=0.2):
    """Generate a deterministic desk-scale corpus and write its manifest."""
    if n_identities < 2:
        raise CorpusError("toy corpus needs at least 2 identities")
    if faces_per_identity < 1 or clips_per_identity < 1:
        raise CorpusError("each identity needs at least one face and one clip")
    out_dir = Path(out_dir)
    (out_dir / "faces").mkdir(parents=True, exist_ok=True)
    (out_dir / "voices").mkdir(parents=True, exist_ok=True)

    records = []
    for i in range(n_identities):
        label = f"id{i:02d}"
        id_rng = np.random.default_rng([seed, i])
        n_eval_faces = int(faces_per_identity * eval_fraction)
        n_eval_clips = int(clips_per_identity * eval_fraction)
        for s in range(faces_per_identity):
            rel = f"faces/{label}_f{s:03d}.png"
            save_face(out_dir / rel, _toy_face(i, n_identities, id_rng))
            split = "eval" if s >= faces_per_identity - n_eval_faces else "train"
            records.append(ManifestRecord(split, label, "face", rel))
        for s in range(clips_per_identity):
            rel = f"voices/{label}_v{s:03d}.wav"
            audio.write_wav(out_dir / rel, _toy_voice(i, id_rng))
            split = "eval" if s >= clips_per_identity - n_eval_clips else "train"
            records.append(ManifestRecord(split, label, "voice", rel))

    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, records)
    return read_manifest(manifest_path)


# ---------------------------------------------------------------------------
# checkpoint container

def save_checkpoint(path, meta, arrays):
    """Atomically write a versioned npz checkpoint (meta JSON + arrays)."""
    path = Path(path)
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, __meta__=np.asarray(json.dumps(meta)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path, expected_kind=None):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "__meta__" not in npz:
                raise CheckpointError(f"{path}: not a voicemorph checkpoint")
            meta = json.loads(str(npz["__meta__"]))
            arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    except (OSError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {meta.get('format_version')} "
            f"!= {CHECKPOINT_FORMAT_VERSION}")
    if expected_kind is not None and meta.get("kind") != expected_kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {meta.get('kind')!r}, expected {expected_kind!r}")
    return meta, arrays
