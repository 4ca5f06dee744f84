"""
Frozen random-projection targets
================================

A fixed random matrix projects each 80-band frame to 16 dimensions and
the nearest codebook row (by cosine) becomes its token. Pooling 8 frames
gives targets at 12.5 Hz.
"""
import numpy as np

from nest_ssl.align import align_targets
from nest_ssl.quantizer import init_quantizer, quantize
from nest_ssl.signal import featurize, synthesize
from nest_ssl.toy import TONES_HZ

q = init_quantizer(seed=42, in_dim=80, code_dim=16, vocab=64)
print("projection", q.projection.shape, "codebook", q.codebook.shape)

# each tone settles on one token; the two lowest tones share a codeword
for hz in TONES_HZ:
    feats = featurize(synthesize({"kind": "tone", "freq_hz": hz, "duration_s": 0.5, "amplitude": 0.5}))
    frame_tokens = quantize(q, feats).tokens
    window_tokens = align_targets(q, feats).tokens
    print(f"{hz:6.0f} Hz  frame tokens {sorted(set(frame_tokens.tolist()))}  window tokens {window_tokens.tolist()}")

# the tables never change: bytes are identical after any number of lookups
before = q.to_bytes()
quantize(q, np.random.default_rng(0).standard_normal((1000, 80)))
print("unchanged after 1000 lookups:", q.to_bytes() == before)
