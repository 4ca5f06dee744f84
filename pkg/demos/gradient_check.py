"""
Checking the hand-written gradients
===================================

Compare reverse-mode gradients with central differences on random
coordinates, then break one gradient on purpose to see the check react.

Central differences carry an O(eps**2) truncation error. On a coordinate
whose gradient is close to zero that error can dominate the relative
measure, so a smaller step is shown alongside the default one.
"""
import numpy as np

from nest_ssl.model import EncoderConfig, grad_check, init_params, output_length

rng = np.random.default_rng(0)
for kind in ("ffn", "attention_ffn"):
    cfg = EncoderConfig(vocab=64, block_kind=kind)
    params = init_params(cfg, seed=0)
    T = 96
    W = output_length(T, cfg)
    batch = (rng.standard_normal((2, T, 80)), rng.integers(0, 64, (2, W)), [np.arange(W)] * 2)
    coarse = grad_check(params, batch, cfg, eps=1e-3, n_coords=50)
    fine = grad_check(params, batch, cfg, eps=1e-4, n_coords=50)
    bad = grad_check(params, batch, cfg, n_coords=10, names=["head.w"], corrupt={"head.w": 2.0})
    print(f"{kind:14s} max relative error {coarse:.1e} (eps 1e-3), {fine:.1e} (eps 1e-4);"
          f" head.w doubled {bad:.2f}")
