"""Noisy-speech augmentation: plan where interference goes, then mix it in.

A plan covers 40-60% of the primary utterance with 1-3 non-overlapping
segments. All segments of a plan are either noise or speech; every speech
segment independently picks a batch member whose speaker differs from the
primary's.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import NoEligibleSpeaker, OffsetOutOfRange, UnresolvableSource
from .signal import Waveform

NOISE = "noise"
SPEECH = "speech"


@dataclass(frozen=True)
class AugmentConfig:
    p_aug: float = 0.2
    p_noise: float = 0.1
    p_speech: float = 0.9
    ratio_min: float = 0.4
    ratio_max: float = 0.6
    max_segments: int = 3
    snr_db_min: float = -5.0
    snr_db_max: float = 20.0

    def validate(self) -> list[str]:
        errs = []
        if not 0 <= self.p_aug <= 1:
            errs.append("augment.p_aug must be in [0, 1]")
        if abs(self.p_noise + self.p_speech - 1.0) > 1e-9 or min(self.p_noise, self.p_speech) < 0:
            errs.append("augment.p_noise + augment.p_speech must equal 1")
        if not 0 <= self.ratio_min <= self.ratio_max <= 1:
            errs.append("augment.ratio_min/ratio_max must satisfy 0 <= min <= max <= 1")
        if self.max_segments < 1:
            errs.append("augment.max_segments must be >= 1")
        if self.snr_db_min > self.snr_db_max:
            errs.append("augment.snr_db_min must be <= snr_db_max")
        return errs


@dataclass(frozen=True)
class Segment:
    primary_start: int
    length: int
    source: str  # NOISE or SPEECH
    source_id: str
    source_offset: int
    snr_db: float


@dataclass
class AugmentationPlan:
    segments: list[Segment] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.segments)

    @property
    def total_length(self) -> int:
        return sum(s.length for s in self.segments)

    @property
    def kind(self) -> Optional[str]:
        return self.segments[0].source if self.segments else None

    def to_dict(self) -> dict:
        return {"segments": [asdict(s) for s in self.segments]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationPlan":
        return cls([Segment(**s) for s in d["segments"]])


def _wav_id(w: Waveform, fallback: str) -> str:
    return w.name if w.name is not None else fallback


def _composition(total: int, parts: int, rng) -> list[int]:
    # uniform random composition of `total` into `parts` positive integers
    cuts = set()
    while len(cuts) < parts - 1:
        cuts.add(rng.integers(1, total))
    bounds = [0, *sorted(cuts), total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def plan_augmentation(primary: Waveform, batch: Sequence[Waveform], noise_pool: Sequence[Waveform],
                      cfg: AugmentConfig, rng, kind: Optional[str] = None) -> AugmentationPlan:
    """Draw an augmentation plan for ``primary``.

    ``rng`` must be an :class:`~nest_ssl.rng.Xoshiro256`. Passing ``kind``
    skips the augment/no-augment and noise/speech draws; the trainer uses
    ``kind="noise"`` to retry after :class:`NoEligibleSpeaker`.
    """
    n = len(primary)
    if kind is None:
        if rng.random() >= cfg.p_aug:
            return AugmentationPlan()
        kind = NOISE if rng.random() < cfg.p_noise else SPEECH

    lo = math.ceil(cfg.ratio_min * n)
    hi = math.floor(cfg.ratio_max * n)
    total = min(max(int(math.floor(rng.uniform(cfg.ratio_min, cfg.ratio_max) * n)), lo), hi)
    n_seg = rng.integers(1, cfg.max_segments + 1)
    if total < n_seg:
        return AugmentationPlan()  # utterance too short to host n_seg segments
    lengths = _composition(total, n_seg, rng)

    # scatter: n_seg sorted gap offsets in [0, n - total]
    slack = n - total
    offsets = sorted(rng.integers(0, slack + 1) for _ in range(n_seg))
    starts, used = [], 0
    for off, length in zip(offsets, lengths):
        starts.append(off + used)
        used += length

    if kind == SPEECH:
        pool = [(_wav_id(w, f"batch:{i}"), w) for i, w in enumerate(batch)
                if w.speaker_id != primary.speaker_id]
        if not pool:
            raise NoEligibleSpeaker(f"no speaker other than {primary.speaker_id!r} in batch")
    else:
        pool = [(_wav_id(w, f"noise:{i}"), w) for i, w in enumerate(noise_pool)]
        if not pool:
            raise ValueError("noise augmentation drawn with an empty noise pool")

    segments = []
    for start, length in zip(starts, lengths):
        fits = [(sid, w) for sid, w in pool if len(w) >= length]
        if not fits:
            raise ValueError(f"no {kind} source holds {length} samples")
        sid, src = fits[rng.integers(0, len(fits))]
        offset = rng.integers(0, len(src) - length + 1)
        snr = rng.uniform(cfg.snr_db_min, cfg.snr_db_max)
        segments.append(Segment(start, length, kind, sid, offset, float(snr)))
    return AugmentationPlan(segments)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


def mixing_gain(primary_seg: np.ndarray, source_seg: np.ndarray, snr_db: float) -> float:
    """Gain putting ``source_seg`` at ``snr_db`` below ``primary_seg`` (0 for silent sources)."""
    src_rms = _rms(source_seg)
    if src_rms == 0.0:
        return 0.0
    return _rms(primary_seg) / (src_rms * 10.0 ** (snr_db / 20.0))


def mix(primary: Waveform, plan: AugmentationPlan,
        sources: Union[Mapping[str, Waveform], Callable[[str], Waveform]]) -> Waveform:
    if not plan:
        return Waveform(primary.samples.copy(), primary.sample_rate, primary.speaker_id, primary.name)
    resolve = sources if callable(sources) else sources.__getitem__
    out = primary.samples.copy()
    for seg in plan.segments:
        try:
            src = resolve(seg.source_id)
        except KeyError as exc:
            raise UnresolvableSource(seg.source_id) from exc
        if seg.primary_start < 0 or seg.primary_start + seg.length > len(primary):
            raise OffsetOutOfRange(f"segment at {seg.primary_start}+{seg.length} exceeds primary")
        if seg.source_offset < 0 or seg.source_offset + seg.length > len(src):
            raise OffsetOutOfRange(f"source {seg.source_id} too short for offset {seg.source_offset}+{seg.length}")
        p = primary.samples[seg.primary_start: seg.primary_start + seg.length]
        s = src.samples[seg.source_offset: seg.source_offset + seg.length]
        out[seg.primary_start: seg.primary_start + seg.length] = p + mixing_gain(p, s, seg.snr_db) * s
    np.clip(out, -1.0, 1.0, out=out)
    return Waveform(out, primary.sample_rate, primary.speaker_id, primary.name)
