"""
How much of an utterance gets masked?
=====================================

Each frame starts a 40-frame block with probability 0.01. Blocks overlap,
so far from the start a frame stays visible only if none of the 40 frames
up to it started one: the masked share is 1 - 0.99**40.
"""
from nest_ssl.align import downsample_mask
from nest_ssl.masking import MaskConfig, mask_stats, sample_mask
from nest_ssl.rng import Xoshiro256

report = mask_stats(p_m=0.01, l_m=40, T=4000, trials=200, seed=0)
print(f"empirical {report['empirical_interior_rate']:.4f}  closed form {report['analytic_interior_rate']:.4f}")

# first 2 s of a 10 s mask: # masked, . visible, one character per frame
spec = sample_mask(1000, MaskConfig(), Xoshiro256(7))
print("".join("#" if m else "." for m in spec.masked[:200]))

# only fully masked 8-frame windows carry loss
sel = downsample_mask(spec)
print(f"{int(sel.selected.sum())} of {len(sel)} windows selected")
