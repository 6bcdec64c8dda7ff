"""Audio ingestion and the log mel-spectrogram frontend.

Conventions:
- Audio: mono 16-bit PCM WAV, resampled on ingest to a canonical 16 kHz.
- Framing: 25 ms analysis window, 10 ms shift, for both endpointing and
  spectrogram extraction.
- Features: 64 triangular mel filters (HTK scale) from 0 Hz to Nyquist
  over a power spectrum, natural log with a 1e-10 floor, then a global
  per-recording mean/variance normalization before embedding.
"""

import functools
import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

CANONICAL_RATE = 16_000
WINDOW_SEC = 0.025
SHIFT_SEC = 0.010
N_MELS = 64
LOG_FLOOR = 1e-10
DEFAULT_ENERGY_QUANTILE = 0.1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ShapeError("waveform must be a non-empty 1-D array")
        if not np.isfinite(self.samples).all():
            raise ShapeError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ShapeError("sample rate must be positive")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """64 x T log mel energies plus the framing that produced them."""

    values: np.ndarray
    frame_shift: float = SHIFT_SEC
    window: float = WINDOW_SEC

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise ShapeError(f"mel spectrogram must be {N_MELS} x T, got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ShapeError("mel spectrogram needs at least one frame")
        if not np.isfinite(self.values).all():
            raise ShapeError("mel spectrogram contains non-finite values")

    @property
    def n_frames(self):
        return self.values.shape[1]


def read_wav(path):
    """Read a mono 16-bit PCM WAV file at its native rate."""
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got sample width {width}")
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, got {channels} channels")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataError(f"{path}: empty audio file")
    return Waveform(samples, rate)


def write_wav(path, waveform):
    data = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(data.tobytes())


def resample(waveform, target_rate):
    """Linear-interpolation resampler; identity when rates already match."""
    if waveform.sample_rate == target_rate:
        return waveform
    n = waveform.samples.size
    n_new = max(1, int(round(n * target_rate / waveform.sample_rate)))
    positions = np.arange(n_new) * (waveform.sample_rate / target_rate)
    resampled = np.interp(positions, np.arange(n), waveform.samples)
    return Waveform(resampled, target_rate)


def load_voice(path, sample_rate=CANONICAL_RATE):
    return resample(read_wav(path), sample_rate)


def _frame_params(sample_rate):
    window = int(round(WINDOW_SEC * sample_rate))
    shift = int(round(SHIFT_SEC * sample_rate))
    return window, shift


def frame_count(n_samples, sample_rate):
    window, shift = _frame_params(sample_rate)
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // shift


def _frames(samples, window, shift):
    n = 1 + (samples.size - window) // shift
    idx = np.arange(window)[None, :] + shift * np.arange(n)[:, None]
    return samples[idx]


def endpoint(waveform, energy_quantile=DEFAULT_ENERGY_QUANTILE):
    """Trim to the first..last frame whose energy strictly exceeds the
    quantile threshold.

    Constant-energy signals (pure silence, all-loud tones) have no frame
    strictly above the threshold and are returned unchanged, as is any
    recording shorter than one analysis window.
    """
    if not 0.0 <= energy_quantile <= 1.0:
        raise ShapeError("energy quantile must lie in [0, 1]")
    window, shift = _frame_params(waveform.sample_rate)
    if waveform.samples.size < window:
        return waveform
    energies = (_frames(waveform.samples, window, shift) ** 2).sum(axis=1)
    threshold = np.quantile(energies, energy_quantile)
    active = np.flatnonzero(energies > threshold)
    if active.size == 0:
        return waveform
    start = active[0] * shift
    stop = min(waveform.samples.size, active[-1] * shift + window)
    return Waveform(waveform.samples[start:stop].copy(), waveform.sample_rate)


@functools.lru_cache(maxsize=8)
def mel_filterbank(sample_rate, n_fft, n_mels=N_MELS):
    """Triangular filters on the HTK mel scale, 0 Hz to Nyquist.

    Returns (n_mels, n_fft//2 + 1); every filter overlaps at least one
    FFT bin for the supported rates.
    """

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_freqs = n_fft // 2 + 1
    freqs = np.arange(n_freqs) * (sample_rate / n_fft)
    points = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_freqs))
    for m in range(n_mels):
        lo, ctr, hi = points[m], points[m + 1], points[m + 2]
        rising = (freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - freqs) / max(hi - ctr, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def log_mel(waveform):
    """64-band log mel spectrogram; T = 1 + floor((len - window) / shift)."""
    window, shift = _frame_params(waveform.sample_rate)
    if waveform.samples.size < window:
        raise ShapeError(
            f"waveform of {waveform.samples.size} samples is shorter than one "
            f"{window}-sample analysis window")
    frames = _frames(waveform.samples, window, shift)
    n_fft = 1 << (window - 1).bit_length()
    spectrum = np.fft.rfft(frames * np.hanning(window), n=n_fft)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = power @ mel_filterbank(waveform.sample_rate, n_fft).T
    return MelSpectrogram(np.log(mel + LOG_FLOOR).T)


def normalize_mel(mel):
    """Global per-recording standardization of the log-mel array."""
    values = mel.values
    centered = values - values.mean()
    std = values.std()
    return MelSpectrogram(centered / (std + 1e-8), mel.frame_shift, mel.window)


def extract_features(waveform, endpointing=True,
                     energy_quantile=DEFAULT_ENERGY_QUANTILE):
    """Full voice frontend: endpoint, log-mel, normalize."""
    if endpointing:
        waveform = endpoint(waveform, energy_quantile)
    return normalize_mel(log_mel(waveform))
