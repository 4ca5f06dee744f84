"""
Log-mel features of a pure tone
===============================

Synthesize a 1 kHz tone, compute 80-band log-mel frames at 100 Hz and see
where the energy lands.
"""
import numpy as np

from nest_ssl.signal import featurize, mel_center_frequencies, mel_spectrogram, synthesize

# one second of a 1 kHz tone at half scale
wav = synthesize({"kind": "tone", "freq_hz": 1000, "duration_s": 1.0, "amplitude": 0.5})
print(f"{len(wav)} samples at {wav.sample_rate} Hz")

# raw log-mel: 400-sample Hann windows every 160 samples, no centering
mel = mel_spectrogram(wav)
print("frames x bands:", mel.frames.shape, f"hop {mel.hop_ms} ms")

# the loudest band sits just below 1 kHz
peak = int(np.argmax(mel.frames[0]))
print(f"peak band {peak}, centre {mel_center_frequencies()[peak]:.1f} Hz")

# the encoder and quantizer see utterance-normalized features
feats = featurize(wav)
print(f"normalized mean {feats.frames.mean():+.2e}, std {feats.frames.std():.3f}")
