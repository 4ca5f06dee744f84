"""
Mixing in other speakers and noise
==================================

With probability 0.2 an utterance gets 40-60 % of its length overlaid,
in up to three pieces, by noise (10 %) or by another speaker from the same
batch (90 %), at an SNR between -5 and 20 dB.
"""
import numpy as np

from nest_ssl.augment import AugmentConfig, mix, plan_augmentation
from nest_ssl.rng import Xoshiro256
from nest_ssl.toy import noise_clips, tone_corpus

batch = tone_corpus(8, duration_s=2.0)
noise = noise_clips(2)
sources = {w.name: w for w in batch + noise}

# force augmentation so every draw produces a plan
cfg = AugmentConfig(p_aug=1.0)
primary = batch[0]
for seed in range(4):
    plan = plan_augmentation(primary, batch, noise, cfg, Xoshiro256(seed))
    print(f"seed {seed}: {plan.kind}, {plan.total_length / len(primary):.0%} of the utterance")
    for seg in plan.segments:
        print(f"    [{seg.primary_start:6d}, +{seg.length:5d})  from {seg.source_id:14s} at {seg.snr_db:5.1f} dB")

mixed = mix(primary, plan, sources)
changed = np.flatnonzero(mixed.samples != primary.samples)
print(f"last plan touched {changed.size} samples between {changed.min()} and {changed.max()}")
