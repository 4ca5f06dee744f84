"""Audio I/O, synthetic test signals and log-mel featurization."""
from __future__ import annotations

import functools
import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .errors import InvalidSpec, TooShort, UnsupportedFormat
from .rng import Xoshiro256

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    speaker_id: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedFormat("waveform must be mono (1-D)")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedFormat(f"sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 512
    win_length: int = 400
    hop_length: int = 160
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    normalize: str = "utterance"  # utterance | none; applied by featurize() only

    def validate(self) -> list[str]:
        errs = []
        if self.win_length > self.n_fft:
            errs.append("mel.win_length must be <= mel.n_fft")
        if self.win_length < 1 or self.hop_length < 1:
            errs.append("mel.win_length and mel.hop_length must be >= 1")
        if self.n_mels < 1:
            errs.append("mel.n_mels must be >= 1")
        if self.log_floor <= 0:
            errs.append("mel.log_floor must be > 0")
        if not 0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            errs.append("mel.fmin/fmax must satisfy 0 <= fmin < fmax <= 8000")
        if self.normalize not in ("utterance", "none"):
            errs.append("mel.normalize must be 'utterance' or 'none'")
        return errs


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, n_mels), natural log
    hop_ms: float = 10.0
    source_id: Optional[str] = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __len__(self) -> int:
        return self.frames.shape[0]


def num_frames(num_samples: int, cfg: MelConfig = MelConfig()) -> int:
    if num_samples < cfg.win_length:
        return 0
    return 1 + (num_samples - cfg.win_length) // cfg.hop_length


# --- I/O ------------------------------------------------------------------


def load_wav(path, speaker_id: Optional[str] = None) -> Waveform:
    """Read a PCM16 mono 16 kHz WAV file.

    Anything else raises :class:`UnsupportedFormat`; nothing is resampled or
    downmixed. When ``speaker_id`` is not given, a sidecar ``<name>.json``
    next to the audio may supply it.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, expected PCM16")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: {rate} Hz, expected {SAMPLE_RATE}")
    pcm = np.frombuffer(raw, dtype="<i2")
    if speaker_id is None:
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            speaker_id = json.loads(sidecar.read_text("utf-8")).get("speaker_id")
    return Waveform(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE, speaker_id, path.stem)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def save_wav(path, wav: Union[Waveform, np.ndarray]) -> Path:
    samples = wav.samples if isinstance(wav, Waveform) else wav
    path = Path(path)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(to_pcm16(samples).tobytes())
    return path


# --- synthetic signals ----------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    kind: str  # tone | white_noise | silence
    duration_s: float
    amplitude: float = 1.0
    freq_hz: Optional[float] = None
    seed: int = 0


def synthesize(spec: Union[SynthSpec, Mapping], speaker_id: Optional[str] = None,
               name: Optional[str] = None) -> Waveform:
    if not isinstance(spec, SynthSpec):
        spec = SynthSpec(**spec)
    if spec.duration_s <= 0:
        raise InvalidSpec("duration_s must be > 0")
    if not 0 < spec.amplitude <= 1:
        raise InvalidSpec("amplitude must be in (0, 1]")
    n = int(round(spec.duration_s * SAMPLE_RATE))
    if spec.kind == "silence":
        x = np.zeros(n)
    elif spec.kind == "tone":
        if spec.freq_hz is None or not 0 < spec.freq_hz < SAMPLE_RATE / 2:
            raise InvalidSpec("tone needs 0 < freq_hz < 8000")
        t = np.arange(n) / SAMPLE_RATE
        x = spec.amplitude * np.sin(2 * math.pi * spec.freq_hz * t)
    elif spec.kind == "white_noise":
        x = Xoshiro256(spec.seed).uniform(-spec.amplitude, spec.amplitude, size=n)
    else:
        raise InvalidSpec(f"unknown signal kind {spec.kind!r}")
    return Waveform(x, SAMPLE_RATE, speaker_id, name)


# --- featurization --------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """``n_mels + 2`` corner frequencies in Hz; band m peaks at edge m + 1."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_center_frequencies(cfg: MelConfig = MelConfig()) -> np.ndarray:
    return mel_band_edges(cfg)[1:-1]


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, each scaled to unit area in Hz.

    Shape ``(n_mels, n_fft // 2 + 1)``. The returned array is read-only.
    """
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * SAMPLE_RATE / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= 2.0 / (hi - lo)
    fb.setflags(write=False)
    return fb


@functools.lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2 * math.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def log_mel(samples: np.ndarray, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Log-mel energies of a raw sample array, shape ``(T, n_mels)``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] < cfg.win_length:
        raise TooShort(f"{x.shape[0]} samples < one window of {cfg.win_length}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    spec = np.fft.rfft(frames * _hann(cfg.win_length), n=cfg.n_fft, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    energy = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energy, cfg.log_floor))


def mel_spectrogram(wav: Waveform, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    frames = log_mel(wav.samples, cfg)
    return MelSpectrogram(frames, 1000.0 * cfg.hop_length / SAMPLE_RATE, wav.name)


def normalize_utterance(frames: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Shift and scale by one mean/std over every entry of the utterance.

    A single scalar pair (not per-band statistics) keeps the spectral shape of
    stationary signals intact while removing the large negative log offset.
    """
    frames = np.asarray(frames, dtype=np.float64)
    return (frames - frames.mean()) / max(float(frames.std()), eps)


def featurize(wav: Waveform, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    """Model-facing features: log-mel followed by the configured normalization."""
    mel = mel_spectrogram(wav, cfg)
    if cfg.normalize == "utterance":
        mel.frames = normalize_utterance(mel.frames)
    return mel
