"""Masked-token pretraining: batches, the denoising step, AdamW + Noam, checkpoints.

Targets always come from the clean utterance; the encoder sees the
augmented, masked utterance. All randomness is drawn from xoshiro streams:
epoch order is keyed by ``(seed, epoch)`` and each step pulls one 64-bit key
from the run stream to seed its per-utterance streams, so a checkpoint only
needs the step counter and four words of generator state to resume exactly.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .align import AlignConfig, SelectionMask, align_targets, downsample_mask, loss_positions
from .augment import NOISE, AugmentationPlan, AugmentConfig, mix, plan_augmentation
from .errors import CheckpointError, ManifestParseError, MissingAudio, NoEligibleSpeaker, NonFiniteLoss
from .masking import MaskConfig, MaskSpec, apply_mask, sample_mask
from .model import EncoderConfig, backward, encoder_forward, init_params, is_decayed, masked_ce_loss, param_shapes
from .quantizer import Quantizer, TokenSequence, init_quantizer
from .rng import Xoshiro256
from .signal import MelConfig, MelSpectrogram, Waveform, featurize, load_wav

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 2000
    warmup_steps: int = 250
    peak_lr: float = 0.004
    weight_decay: float = 1e-3
    grad_clip_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 100

    def validate(self) -> list[str]:
        errs = []
        if self.warmup_steps < 1:
            errs.append("train.warmup_steps must be >= 1")
        if self.peak_lr <= 0:
            errs.append("train.peak_lr must be > 0")
        if self.grad_clip_norm <= 0:
            errs.append("train.grad_clip_norm must be > 0")
        if self.batch_size < 1:
            errs.append("train.batch_size must be >= 1")
        if self.weight_decay < 0:
            errs.append("train.weight_decay must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            errs.append("train.adam_beta1/adam_beta2 must be in [0, 1)")
        if self.checkpoint_every < 1:
            errs.append("train.checkpoint_every must be >= 1")
        return errs


def noam_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then inverse-sqrt decay."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return cfg.peak_lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


# --- corpus ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    audio_filepath: str
    duration: float
    speaker_id: str

    @property
    def utt_id(self) -> str:
        return Path(self.audio_filepath).stem


def read_manifest(path) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest; relative audio paths resolve against its folder."""
    path = Path(path)
    entries, seen = [], set()
    for line_no, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            audio = Path(obj["audio_filepath"])
            entry = ManifestEntry(
                str(audio if audio.is_absolute() else (path.parent / audio)),
                float(obj["duration"]),
                str(obj["speaker_id"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestParseError(line_no, f"{type(exc).__name__}: {exc}") from exc
        if entry.utt_id in seen:
            raise ManifestParseError(line_no, f"duplicate utterance id {entry.utt_id!r}")
        seen.add(entry.utt_id)
        entries.append(entry)
    return entries


def make_batches(manifest, cfg: TrainConfig, rng) -> list[list[str]]:
    """One epoch of shuffled utterance-id batches; the short tail batch is dropped."""
    if isinstance(manifest, (str, Path)):
        entries = read_manifest(manifest)
        for e in entries:
            if not Path(e.audio_filepath).exists():
                raise MissingAudio(e.audio_filepath)
    else:
        entries = list(manifest)
    order = rng.permutation(len(entries))
    n = len(entries) // cfg.batch_size
    return [[entries[i].utt_id for i in order[b * cfg.batch_size: (b + 1) * cfg.batch_size]]
            for b in range(n)]


class Corpus:
    """Utterances and noise pool, with per-utterance caches of clean features/targets."""

    def __init__(self, entries: Sequence[ManifestEntry], noise: Sequence[Waveform] = ()):
        self.entries = list(entries)
        self.by_id = {e.utt_id: e for e in self.entries}
        self.noise = list(noise)
        self._wavs: dict[str, Waveform] = {}
        self._clean: dict[str, tuple] = {}
        self._epochs: dict[tuple, list] = {}

    @classmethod
    def from_paths(cls, manifest, noise_dir=None) -> "Corpus":
        noise = []
        if noise_dir is not None:
            for p in sorted(Path(noise_dir).glob("*.wav")):
                w = load_wav(p)
                w.name = f"noise:{p.stem}"
                noise.append(w)
        return cls(read_manifest(manifest), noise)

    @classmethod
    def from_waveforms(cls, wavs: Sequence[Waveform], noise: Sequence[Waveform] = ()) -> "Corpus":
        """In-memory corpus; waveform names act as utterance ids."""
        entries = [ManifestEntry(f"{w.name}.wav", w.duration, w.speaker_id) for w in wavs]
        corpus = cls(entries, noise)
        corpus._wavs = {w.name: w for w in wavs}
        return corpus

    def __len__(self) -> int:
        return len(self.entries)

    def waveform(self, utt_id: str) -> Waveform:
        if utt_id not in self._wavs:
            e = self.by_id[utt_id]
            if not Path(e.audio_filepath).exists():
                raise MissingAudio(e.audio_filepath)
            w = load_wav(e.audio_filepath, speaker_id=e.speaker_id)
            w.name = utt_id
            self._wavs[utt_id] = w
        return self._wavs[utt_id]

    def resolve(self, source_id: str) -> Waveform:
        for w in self.noise:
            if w.name == source_id:
                return w
        if source_id in self.by_id:
            return self.waveform(source_id)
        raise KeyError(source_id)

    def clean_features(self, utt_id: str, run, quantizer: Quantizer):
        key = (utt_id, run.mel, run.align, quantizer.seed, quantizer.vocab, quantizer.normalize)
        if key not in self._clean:
            mel = featurize(self.waveform(utt_id), run.mel)
            self._clean[key] = (mel, align_targets(quantizer, mel, run.align))
        return self._clean[key]

    def batch_ids(self, step_index: int, cfg: TrainConfig) -> list[str]:
        """Ids for the 0-based ``step_index``; each epoch has its own keyed shuffle."""
        per_epoch = len(self.entries) // cfg.batch_size
        if per_epoch == 0:
            raise ValueError(f"corpus of {len(self.entries)} < batch_size {cfg.batch_size}")
        epoch, j = divmod(step_index, per_epoch)
        key = (cfg.seed, cfg.batch_size, epoch)
        if key not in self._epochs:
            self._epochs = {key: make_batches(self.entries, cfg, Xoshiro256.derive(cfg.seed, "epoch", epoch))}
        return self._epochs[key][j]


# --- batches --------------------------------------------------------------


@dataclass
class Example:
    utt_id: str
    speaker_id: Optional[str]
    clean: Waveform
    augmented: Waveform
    plan: AugmentationPlan
    clean_mel: MelSpectrogram
    input_mel: MelSpectrogram  # augmented then masked
    mask: MaskSpec
    targets: TokenSequence
    selection: SelectionMask

    @property
    def positions(self) -> np.ndarray:
        return loss_positions(self.selection)


@dataclass
class Batch:
    examples: list[Example]

    @property
    def selected_windows(self) -> int:
        return int(sum(len(e.positions) for e in self.examples))


def build_example(utt_id: str, batch_wavs: Sequence[Waveform], corpus: Corpus, run,
                  quantizer: Quantizer, rng: Xoshiro256) -> Example:
    clean = corpus.waveform(utt_id)
    clean_mel, targets = corpus.clean_features(utt_id, run, quantizer)
    try:
        plan = plan_augmentation(clean, batch_wavs, corpus.noise, run.augment, rng)
    except NoEligibleSpeaker:
        # keep the augmentation rate: retry the same utterance as noise
        plan = plan_augmentation(clean, batch_wavs, corpus.noise, run.augment, rng, kind=NOISE) \
            if corpus.noise else AugmentationPlan()
    if plan:
        augmented = mix(clean, plan, corpus.resolve)
        aug_mel = featurize(augmented, run.mel)
    else:
        augmented, aug_mel = clean, clean_mel
    mask = sample_mask(aug_mel.n_frames, run.mask, rng)
    selection = downsample_mask(mask, run.align)
    return Example(utt_id, clean.speaker_id, clean, augmented, plan, clean_mel,
                   apply_mask(aug_mel, mask, run.mask), mask, targets, selection)


def build_training_batch(ids: Sequence[str], corpus: Corpus, run, quantizer: Quantizer,
                         rng: Xoshiro256) -> Batch:
    """Per utterance: clean targets, augmented+masked input, window selection.

    Each utterance gets its own stream seeded from ``rng``, so examples do
    not depend on one another's draws.
    """
    keys = [rng.next_u64() for _ in ids]
    wavs = [corpus.waveform(i) for i in ids]
    return Batch([build_example(i, wavs, corpus, run, quantizer, Xoshiro256(k))
                  for i, k in zip(ids, keys)])


# --- optimisation ---------------------------------------------------------


@dataclass
class TrainState:
    run: object  # RunConfig
    params: dict
    m: dict
    v: dict
    step: int
    rng: Xoshiro256
    quantizer: Quantizer


def init_state(run) -> TrainState:
    seed = run.train.seed
    init_seed = Xoshiro256.derive(seed, "init").next_u64()
    params = init_params(run.encoder, init_seed)
    q = init_quantizer(run.quantizer.seed, run.quantizer.in_dim, run.quantizer.code_dim,
                       run.quantizer.vocab, run.quantizer.normalize, run.quantizer.norm_eps)
    return TrainState(run, params, {k: np.zeros_like(p) for k, p in params.items()},
                      {k: np.zeros_like(p) for k, p in params.items()}, 0,
                      Xoshiro256.derive(seed, "train"), q)


def batch_loss_and_grads(params, batch: Batch, cfg: EncoderConfig):
    """Mean CE over every selected window of the batch, plus parameter grads.

    Sequences are grouped by length and each group runs as one array.
    """
    total = batch.selected_windows
    groups: dict[int, list[Example]] = {}
    for ex in batch.examples:
        groups.setdefault(ex.input_mel.n_frames, []).append(ex)
    loss_sum, correct = 0.0, 0
    grads = None
    for _, exs in sorted(groups.items()):
        pos = [ex.positions for ex in exs]
        n = sum(len(p) for p in pos)
        if n == 0:
            continue
        feats = np.stack([ex.input_mel.frames for ex in exs])
        tg = np.stack([ex.targets.tokens for ex in exs])
        fwd = encoder_forward(params, feats, cfg)
        res = masked_ce_loss(fwd.logits, tg, pos)
        res.grad_logits *= n / total
        g = backward(fwd, res)
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
        loss_sum += res.loss * n
        correct += int(res.correct.sum())
    if total == 0:
        return 0.0, 0.0, None
    return loss_sum / total, correct / total, grads


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def apply_update(state: TrainState, grads: dict, lr: float) -> None:
    """AdamW with decoupled weight decay on matrices only."""
    cfg = state.run.train
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in state.params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        new = p - lr * update
        if is_decayed(name, p.shape):
            new = new - (lr * cfg.weight_decay) * p
        state.params[name] = new.astype(p.dtype)
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)


def train_step(state: TrainState, batch: Batch) -> dict:
    """One optimizer step; returns the metrics record for this step."""
    cfg = state.run.train
    step = state.step + 1
    lr = noam_lr(step, cfg)
    loss, acc, grads = batch_loss_and_grads(state.params, batch, state.run.encoder)
    selected = batch.selected_windows
    if grads is None:
        state.step = step
        return {"step": step, "loss": 0.0, "masked_acc": 0.0, "grad_norm": 0.0, "lr": lr,
                "selected_windows": 0, "skipped": True}
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"step {step}: loss {loss} over {selected} windows")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteLoss(f"step {step}: gradient norm {norm}")
    if norm > cfg.grad_clip_norm:
        scale = cfg.grad_clip_norm / norm
        grads = {k: (g * scale).astype(g.dtype) for k, g in grads.items()}
    apply_update(state, grads, lr)
    state.step = step
    return {"step": step, "loss": loss, "masked_acc": acc, "grad_norm": norm, "lr": lr,
            "selected_windows": selected, "skipped": False}


def next_batch(state: TrainState, corpus: Corpus) -> Batch:
    ids = corpus.batch_ids(state.step, state.run.train)
    batch_rng = Xoshiro256(state.rng.next_u64())
    return build_training_batch(ids, corpus, state.run, state.quantizer, batch_rng)


# --- checkpoints ----------------------------------------------------------


def state_tensors(state: TrainState) -> dict:
    t = {}
    for name in state.params:
        t[name] = state.params[name]
    for name in state.params:
        t[f"opt.m.{name}"] = state.m[name]
    for name in state.params:
        t[f"opt.v.{name}"] = state.v[name]
    t["quant.projection"] = state.quantizer.projection
    t["quant.codebook"] = state.quantizer.codebook
    t["quant.seed"] = ckpt.u64_to_limbs(state.quantizer.seed)
    t["train.config_hash"] = ckpt.u64_to_limbs(state.run.fingerprint())
    return t


def save_checkpoint(state: TrainState, path) -> Path:
    return ckpt.write(path, state_tensors(state), state.step, state.rng.state)


def load_checkpoint(path, run) -> TrainState:
    """Restore a state saved under ``run`` (same fingerprint required)."""
    data = ckpt.read(path)
    t = data.tensors
    stored = ckpt.limbs_to_u64(t["train.config_hash"])
    if stored != run.fingerprint():
        raise CheckpointError("checkpoint was written under a different configuration")
    names = list(param_shapes(run.encoder))
    missing = [n for n in names if n not in t]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {missing}")
    proj = t["quant.projection"].copy()
    book = t["quant.codebook"].copy()
    proj.setflags(write=False)
    book.setflags(write=False)
    q = Quantizer(proj, book, ckpt.limbs_to_u64(t["quant.seed"]),
                  run.quantizer.normalize, run.quantizer.norm_eps)
    return TrainState(
        run,
        {n: t[n].copy() for n in names},
        {n: t[f"opt.m.{n}"].copy() for n in names},
        {n: t[f"opt.v.{n}"].copy() for n in names},
        data.step,
        Xoshiro256.from_state(data.rng_state),
        q,
    )


# --- driver ---------------------------------------------------------------


def format_metrics(m: dict) -> str:
    keys = ("step", "loss", "masked_acc", "grad_norm", "lr", "selected_windows")
    return json.dumps({k: m[k] for k in keys})


def pretrain(state: TrainState, corpus: Corpus, total_steps: int, out_dir,
             checkpoint_every: Optional[int] = None, metrics_name: str = "metrics.jsonl") -> list[dict]:
    """Train until ``state.step == total_steps``, logging and checkpointing under ``out_dir``.

    Writes ``step{N}.ckpt`` at the starting step, every ``checkpoint_every``
    steps and at the end.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    every = checkpoint_every or state.run.train.checkpoint_every
    history = []
    save_checkpoint(state, out / f"step{state.step}.ckpt")
    with open(out / metrics_name, "w", encoding="utf-8") as fh:
        while state.step < total_steps:
            metrics = train_step(state, next_batch(state, corpus))
            history.append(metrics)
            fh.write(format_metrics(metrics) + "\n")
            if state.step % every == 0 or state.step == total_steps:
                save_checkpoint(state, out / f"step{state.step}.ckpt")
            if state.step % 100 == 0:
                log.info("step %d loss %.4f acc %.3f lr %.2e", state.step, metrics["loss"],
                         metrics["masked_acc"], metrics["lr"])
    return history
