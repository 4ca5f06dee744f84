import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nest_ssl.augment import (NOISE, SPEECH, AugmentationPlan, AugmentConfig, Segment, mix, mixing_gain,
                              plan_augmentation)
from nest_ssl.errors import NoEligibleSpeaker, OffsetOutOfRange, UnresolvableSource
from nest_ssl.rng import Xoshiro256
from nest_ssl.signal import Waveform


def _wav(n, spk, name, seed=0, amp=0.1):
    x = np.random.default_rng(seed).uniform(-amp, amp, n)
    return Waveform(x, speaker_id=spk, name=name)


@pytest.fixture
def batch():
    return [_wav(16000, f"s{i % 4}", f"u{i}", seed=i) for i in range(8)]


@pytest.fixture
def noise():
    return [_wav(48000, None, f"noise:{i}", seed=100 + i, amp=0.3) for i in range(2)]


def test_never_when_p_aug_zero(batch, noise):
    cfg = AugmentConfig(p_aug=0.0)
    for t in range(200):
        assert not plan_augmentation(batch[0], batch, noise, cfg, Xoshiro256(t))


def test_distributions(batch, noise):
    cfg = AugmentConfig()
    n = 4000
    kinds, counts, ratios, snrs = [], [], [], []
    for t in range(n):
        plan = plan_augmentation(batch[0], batch, noise, cfg, Xoshiro256.derive("dist", t))
        if plan:
            kinds.append(plan.kind)
            counts.append(len(plan.segments))
            ratios.append(plan.total_length / len(batch[0]))
            snrs.extend(s.snr_db for s in plan.segments)
    rate = len(kinds) / n
    assert abs(rate - 0.2) < 4 * math.sqrt(0.2 * 0.8 / n)
    noise_frac = kinds.count(NOISE) / len(kinds)
    assert abs(noise_frac - 0.1) < 4 * math.sqrt(0.09 / len(kinds))
    assert set(counts) == {1, 2, 3}
    assert min(ratios) >= 0.4 and max(ratios) <= 0.6
    assert min(snrs) >= -5 and max(snrs) <= 20
    assert abs(np.mean(snrs) - 7.5) < 0.5


def test_speech_sources_other_speaker(batch, noise):
    cfg = AugmentConfig(p_aug=1.0, p_noise=0.0, p_speech=1.0)
    by_name = {w.name: w for w in batch}
    for t in range(300):
        plan = plan_augmentation(batch[0], batch, noise, cfg, Xoshiro256(t))
        for seg in plan.segments:
            assert seg.source == SPEECH
            assert by_name[seg.source_id].speaker_id != batch[0].speaker_id


def test_no_eligible_speaker(noise):
    same = [_wav(16000, "a", f"u{i}", seed=i) for i in range(4)]
    cfg = AugmentConfig(p_aug=1.0, p_noise=0.0, p_speech=1.0)
    with pytest.raises(NoEligibleSpeaker):
        plan_augmentation(same[0], same, noise, cfg, Xoshiro256(0))
    plan = plan_augmentation(same[0], same, noise, cfg, Xoshiro256(0), kind=NOISE)
    assert plan.kind == NOISE


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(50, 40000))
def test_segments_in_bounds_and_disjoint(seed, n):
    primary = _wav(n, "p", "p")
    pool = [_wav(max(n, 1000), "q", "q")]
    noise = [_wav(n + 10, None, "noise:0")]
    cfg = AugmentConfig(p_aug=1.0)
    plan = plan_augmentation(primary, pool, noise, cfg, Xoshiro256(seed))
    if not plan:
        return
    segs = sorted(plan.segments, key=lambda s: s.primary_start)
    assert math.ceil(0.4 * n) <= plan.total_length <= math.floor(0.6 * n)
    for a, b in zip(segs, segs[1:]):
        assert a.primary_start + a.length <= b.primary_start
    for s in segs:
        assert s.length >= 1 and 0 <= s.primary_start and s.primary_start + s.length <= n
    out = mix(primary, plan, {w.name: w for w in pool + noise})
    covered = np.zeros(n, bool)
    for s in segs:
        covered[s.primary_start: s.primary_start + s.length] = True
    assert np.array_equal(out.samples[~covered], primary.samples[~covered])
    assert np.abs(out.samples).max() <= 1.0


def test_mix_empty_plan_is_identity(batch):
    out = mix(batch[0], AugmentationPlan(), {})
    assert np.array_equal(out.samples, batch[0].samples)


def test_gain_value():
    p = np.full(100, 0.1)
    s = np.full(100, 0.2)
    assert mixing_gain(p, s, 0.0) == pytest.approx(0.5)
    assert mixing_gain(p, s, 20.0) == pytest.approx(0.05)


def test_silent_source_contributes_nothing(batch):
    silent = Waveform(np.zeros(16000), name="quiet")
    plan = AugmentationPlan([Segment(0, 8000, NOISE, "quiet", 0, 5.0)])
    out = mix(batch[0], plan, {"quiet": silent})
    assert np.array_equal(out.samples, batch[0].samples)


def test_mixed_snr_matches_request(batch):
    src = _wav(16000, "x", "src", seed=77, amp=0.05)
    plan = AugmentationPlan([Segment(1000, 6000, SPEECH, "src", 500, 3.0)])
    out = mix(batch[0], plan, {"src": src})
    p = batch[0].samples[1000:7000]
    added = out.samples[1000:7000] - p
    snr = 20 * math.log10(np.sqrt(np.mean(p ** 2)) / np.sqrt(np.mean(added ** 2)))
    assert snr == pytest.approx(3.0, abs=1e-9)


def test_mix_errors(batch):
    plan = AugmentationPlan([Segment(0, 100, NOISE, "missing", 0, 0.0)])
    with pytest.raises(UnresolvableSource):
        mix(batch[0], plan, {})
    plan = AugmentationPlan([Segment(15950, 100, NOISE, "u1", 0, 0.0)])
    with pytest.raises(OffsetOutOfRange):
        mix(batch[0], plan, {"u1": batch[1]})
    plan = AugmentationPlan([Segment(0, 100, NOISE, "u1", 15950, 0.0)])
    with pytest.raises(OffsetOutOfRange):
        mix(batch[0], plan, {"u1": batch[1]})


def test_plan_roundtrip(batch, noise):
    plan = plan_augmentation(batch[0], batch, noise, AugmentConfig(p_aug=1.0), Xoshiro256(3))
    assert AugmentationPlan.from_dict(plan.to_dict()) == plan


def test_config_validation():
    assert AugmentConfig().validate() == []
    errs = AugmentConfig(p_aug=2.0, p_noise=0.5, p_speech=0.6).validate()
    assert len(errs) == 2
