"""Constant-tone toy corpus used by the learnability and determinism checks."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .signal import SynthSpec, Waveform, save_wav, synthesize

TONES_HZ = (300.0, 500.0, 800.0, 1200.0, 1700.0, 2400.0, 3200.0, 4200.0)


def tone_utterance(freq_hz: float, index: int, duration_s: float = 2.0, amplitude: float = 0.5,
                   noise_floor: float = 1e-3, seed: int = 0, speaker_id=None, name=None) -> Waveform:
    tone = synthesize(SynthSpec("tone", duration_s, amplitude, freq_hz))
    hiss = synthesize(SynthSpec("white_noise", duration_s, noise_floor, seed=seed * 1_000_003 + index))
    return Waveform(np.clip(tone.samples + hiss.samples, -1, 1), speaker_id=speaker_id, name=name)


def tone_corpus(n_utts: int = 64, tones=TONES_HZ, duration_s: float = 2.0, seed: int = 0) -> list[Waveform]:
    """Utterance i is tone ``i % len(tones)``; each tone is its own speaker."""
    out = []
    for i in range(n_utts):
        k = i % len(tones)
        out.append(tone_utterance(tones[k], i, duration_s, seed=seed,
                                  speaker_id=f"spk{k}", name=f"utt{i:03d}"))
    return out


def noise_clips(n: int = 4, duration_s: float = 3.0, amplitude: float = 0.3, seed: int = 0) -> list[Waveform]:
    return [synthesize(SynthSpec("white_noise", duration_s, amplitude, seed=seed * 7919 + 101 + i),
                       name=f"noise:white{i}") for i in range(n)]


def write_corpus(out_dir, n_utts: int = 64, tones=TONES_HZ, duration_s: float = 2.0,
                 seed: int = 0, n_noise: int = 4) -> dict:
    """Write WAVs, ``manifest.jsonl`` and a ``noise/`` folder under ``out_dir``."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "noise").mkdir(parents=True, exist_ok=True)
    lines = []
    for w in tone_corpus(n_utts, tones, duration_s, seed):
        rel = Path("audio") / f"{w.name}.wav"
        save_wav(out / rel, w)
        lines.append(json.dumps({"audio_filepath": str(rel), "duration": w.duration,
                                 "speaker_id": w.speaker_id}))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for w in noise_clips(n_noise, seed=seed):
        save_wav(out / "noise" / f"{w.name.split(':')[1]}.wav", w)
    return {"manifest": str(out / "manifest.jsonl"), "noise_dir": str(out / "noise"),
            "utterances": n_utts}
