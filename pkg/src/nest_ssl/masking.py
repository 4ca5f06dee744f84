"""Block-wise random masking of input frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .signal import MelSpectrogram


@dataclass(frozen=True)
class MaskConfig:
    p_m: float = 0.01
    l_m: int = 40
    fill: str = "zero"

    def validate(self) -> list[str]:
        errs = []
        if not 0.0 <= self.p_m <= 1.0:
            errs.append("mask.p_m must be in [0, 1]")
        if self.l_m < 1:
            errs.append("mask.l_m must be >= 1")
        if self.fill != "zero":
            errs.append("mask.fill: only 'zero' is supported")
        return errs


@dataclass
class MaskSpec:
    masked: np.ndarray  # bool, (T,)
    starts: np.ndarray  # int64, sorted

    def __len__(self) -> int:
        return len(self.masked)

    @property
    def fraction(self) -> float:
        return float(self.masked.mean()) if len(self.masked) else 0.0


def mask_from_starts(T: int, starts, l_m: int) -> MaskSpec:
    """Union of ``[s, min(s + l_m, T))`` over all starts."""
    starts = np.unique(np.asarray(starts, dtype=np.int64))
    if starts.size and (starts[0] < 0 or starts[-1] >= T):
        raise ValueError("mask start outside [0, T)")
    delta = np.zeros(T + 1, dtype=np.int64)
    np.add.at(delta, starts, 1)
    np.add.at(delta, np.minimum(starts + l_m, T), -1)
    masked = np.cumsum(delta[:T]) > 0
    return MaskSpec(masked, starts)


def sample_mask(T: int, cfg: MaskConfig, rng) -> MaskSpec:
    """Each frame independently starts a block with probability ``p_m``.

    ``rng`` is anything with a numpy-style ``random(n)`` method. Exactly ``T``
    uniforms are consumed regardless of the outcome.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    u = np.asarray(rng.random(T))
    return mask_from_starts(T, np.flatnonzero(u < cfg.p_m), cfg.l_m)


def apply_mask(mel, spec: MaskSpec, cfg: MaskConfig = MaskConfig()):
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if len(spec.masked) != frames.shape[0]:
        raise LengthMismatch(f"mask length {len(spec.masked)} != {frames.shape[0]} frames")
    out = frames.copy()
    out[spec.masked] = 0.0
    if isinstance(mel, MelSpectrogram):
        return MelSpectrogram(out, mel.hop_ms, mel.source_id)
    return out


def analytic_mask_rate(index: int, p_m: float, l_m: int) -> float:
    """P(frame ``index`` is masked) away from the sequence end."""
    return 1.0 - (1.0 - p_m) ** min(index + 1, l_m)


def mask_stats(p_m: float = 0.01, l_m: int = 40, T: int = 4000, trials: int = 200,
               seed: int = 0) -> dict:
    """Monte-Carlo interior masking rate vs the closed form (``mask-stats`` report)."""
    from .rng import Xoshiro256

    cfg = MaskConfig(p_m, l_m)
    hits = 0
    count = 0
    for trial in range(trials):
        spec = sample_mask(T, cfg, Xoshiro256.derive("mask-stats", seed, trial))
        interior = spec.masked[l_m - 1:]
        hits += int(interior.sum())
        count += interior.size
    return {
        "p_m": p_m,
        "l_m": l_m,
        "T": T,
        "trials": trials,
        "empirical_interior_rate": hits / count,
        "analytic_interior_rate": analytic_mask_rate(l_m - 1, p_m, l_m),
    }
