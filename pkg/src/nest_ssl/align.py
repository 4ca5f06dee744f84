"""Bring 10 ms targets and masks down to the 80 ms encoder rate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooShort
from .masking import MaskSpec
from .quantizer import INPUT_RATE, Quantizer, TokenSequence, nearest_code, project
from .signal import MelSpectrogram


@dataclass(frozen=True)
class AlignConfig:
    factor: int = 8
    threshold: float = 0.9

    def validate(self) -> list[str]:
        errs = []
        if self.factor < 1:
            errs.append("align.factor must be >= 1")
        if not 0 < self.threshold <= 1:
            errs.append("align.threshold must be in (0, 1]")
        return errs


@dataclass
class SelectionMask:
    selected: np.ndarray       # bool, (W,)
    mask_fraction: np.ndarray  # float, (W,)

    def __len__(self) -> int:
        return len(self.selected)


def num_windows(T: int, factor: int = 8) -> int:
    return T // factor


def downsample_mask(mask, cfg: AlignConfig = AlignConfig()) -> SelectionMask:
    """Mean mask over non-overlapping windows; the trailing partial window is dropped."""
    masked = mask.masked if isinstance(mask, MaskSpec) else np.asarray(mask, dtype=bool)
    if len(masked) < cfg.factor:
        raise TooShort(f"mask of {len(masked)} frames < factor {cfg.factor}")
    W = len(masked) // cfg.factor
    counts = masked[: W * cfg.factor].reshape(W, cfg.factor).sum(axis=1)
    fraction = counts / cfg.factor
    # compare integer counts to avoid float rounding at the threshold
    selected = counts >= cfg.threshold * cfg.factor - 1e-9
    return SelectionMask(selected, fraction)


def align_targets(q: Quantizer, clean_mel, cfg: AlignConfig = AlignConfig()) -> TokenSequence:
    """One token per window: average the projected frames, then nearest code."""
    frames = clean_mel.frames if isinstance(clean_mel, MelSpectrogram) else np.asarray(clean_mel)
    if frames.shape[0] < cfg.factor:
        raise TooShort(f"{frames.shape[0]} frames < factor {cfg.factor}")
    W = frames.shape[0] // cfg.factor
    proj = project(q, frames[: W * cfg.factor])
    pooled = proj.reshape(W, cfg.factor, q.code_dim).mean(axis=1)
    return TokenSequence(nearest_code(q, pooled).astype(np.int64), INPUT_RATE / cfg.factor)


def loss_positions(sel) -> np.ndarray:
    selected = sel.selected if isinstance(sel, SelectionMask) else np.asarray(sel, dtype=bool)
    return np.flatnonzero(selected)
