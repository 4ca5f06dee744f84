"""Command-line entry point: ``nest-ssl <subcommand> ...``.

Exit status is 0 on success, 1 for invalid usage or configuration and 2 for
failures at run time. Every subcommand writes only under ``--out``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .align import align_targets
from .augment import mix, plan_augmentation
from .config import PathsConfig, QuantizerConfig, RunConfig, load_config
from .errors import ConfigValidationError, NestError
from .masking import mask_stats
from .model import EncoderConfig, grad_check, init_params
from .quantizer import init_quantizer, quantize
from .rng import Xoshiro256
from .signal import featurize, load_wav, mel_spectrogram, save_wav
from .toy import write_corpus
from .trainer import Corpus, build_training_batch, init_state, load_checkpoint, pretrain

log = logging.getLogger("nest_ssl")

COMMANDS = ("synth-data", "featurize", "quantize", "mask-stats", "augment-preview",
            "grad-check", "pretrain", "resume", "inspect-ckpt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    p = _Parser(prog="nest-ssl", description="Masked-token speech pretraining toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth-data", parents=[common], help="write the constant-tone toy corpus")
    s.add_argument("--utterances", type=int, default=64)
    s.add_argument("--duration", type=float, default=2.0)

    for name, help_ in (("featurize", "log-mel features of one WAV"),
                        ("quantize", "target tokens of one WAV")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("input", type=Path)

    s = sub.add_parser("mask-stats", parents=[common], help="Monte-Carlo masking rate report")
    s.add_argument("--p-m", type=float, default=None)
    s.add_argument("--l-m", type=int, default=None)
    s.add_argument("--frames", type=int, default=4000)
    s.add_argument("--trials", type=int, default=200)

    s = sub.add_parser("augment-preview", parents=[common], help="mix one utterance and save it")
    s.add_argument("--index", type=int, default=0, help="manifest entry to augment")
    s.add_argument("--force", action="store_true", help="always augment (p_aug = 1)")

    s = sub.add_parser("grad-check", parents=[common], help="tape gradients vs finite differences")
    s.add_argument("--coords", type=int, default=50)
    s.add_argument("--eps", type=float, default=1e-3)

    s = sub.add_parser("pretrain", parents=[common], help="run pretraining from scratch")
    s.add_argument("--steps", type=int, default=None)

    s = sub.add_parser("resume", parents=[common], help="continue from a checkpoint")
    s.add_argument("--resume", type=Path, required=True, metavar="CKPT")
    s.add_argument("--steps", type=int, default=None)

    s = sub.add_parser("inspect-ckpt", help="list checkpoint contents")
    s.add_argument("checkpoint", type=Path)
    return p


def _config(args) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig().validate()
    if getattr(args, "seed", None) is not None:
        run = run.with_seed(args.seed)
    return run


def _emit(obj, out_dir: Path = None, name: str = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None and name is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text + "\n", encoding="utf-8")


def _corpus(run: RunConfig) -> Corpus:
    if run.paths.manifest is None:
        raise ConfigValidationError(["paths.manifest is required for this command"])
    return Corpus.from_paths(run.paths.manifest, run.paths.noise_dir)


def toy_config(manifest: str = "manifest.jsonl", noise_dir: str = "noise") -> RunConfig:
    """Desk configuration for the tone corpus: vocab 64, d_model 64, two attention blocks."""
    return RunConfig(
        encoder=EncoderConfig(vocab=64, block_kind="attention_ffn"),
        quantizer=QuantizerConfig(vocab=64),
        paths=PathsConfig(manifest, noise_dir),
    ).validate()


def cmd_synth_data(args) -> int:
    seed = args.seed if args.seed is not None else 0
    info = write_corpus(args.out, args.utterances, duration_s=args.duration, seed=seed)
    (args.out / "run.toml").write_text(toy_config().with_seed(seed).to_toml(), encoding="utf-8")
    info["config"] = str(args.out / "run.toml")
    _emit(info)
    return 0


def cmd_featurize(args) -> int:
    run = _config(args)
    wav = load_wav(args.input)
    raw = mel_spectrogram(wav, run.mel)
    args.out.mkdir(parents=True, exist_ok=True)
    np.save(args.out / f"{args.input.stem}.logmel.npy", raw.frames)
    np.save(args.out / f"{args.input.stem}.features.npy", featurize(wav, run.mel).frames)
    _emit({"input": str(args.input), "frames": raw.n_frames, "n_mels": raw.frames.shape[1]})
    return 0


def cmd_quantize(args) -> int:
    run = _config(args)
    qc = run.quantizer
    q = init_quantizer(qc.seed, qc.in_dim, qc.code_dim, qc.vocab, qc.normalize, qc.norm_eps)
    feats = featurize(load_wav(args.input), run.mel)
    report = {
        "input": str(args.input),
        "tokens_100hz": quantize(q, feats).tokens.tolist(),
        "tokens_12_5hz": align_targets(q, feats, run.align).tokens.tolist(),
    }
    _emit(report, args.out, f"{args.input.stem}.tokens.json")
    return 0


def cmd_mask_stats(args) -> int:
    run = _config(args)
    report = mask_stats(
        args.p_m if args.p_m is not None else run.mask.p_m,
        args.l_m if args.l_m is not None else run.mask.l_m,
        args.frames, args.trials, run.train.seed,
    )
    _emit(report, args.out, "mask_stats.json")
    return 0


def cmd_augment_preview(args) -> int:
    run = _config(args)
    if args.force:
        run = run.replace(augment=dataclasses.replace(run.augment, p_aug=1.0))
    corpus = _corpus(run)
    primary = corpus.waveform(corpus.entries[args.index].utt_id)
    batch = [corpus.waveform(e.utt_id) for e in corpus.entries]
    rng = Xoshiro256.derive(run.train.seed, "augment-preview", args.index)
    plan = plan_augmentation(primary, batch, corpus.noise, run.augment, rng)
    mixed = mix(primary, plan, corpus.resolve)
    args.out.mkdir(parents=True, exist_ok=True)
    save_wav(args.out / f"{primary.name}.augmented.wav", mixed)
    doc = {"primary": primary.name, "speaker_id": primary.speaker_id, **plan.to_dict()}
    _emit(doc, args.out, f"{primary.name}.plan.json")
    return 0


def cmd_grad_check(args) -> int:
    run = _config(args)
    state = init_state(run)
    if run.paths.manifest is not None:
        corpus = _corpus(run)
        ids = corpus.batch_ids(0, run.train)[:2]
        batch = build_training_batch(ids, corpus, run, state.quantizer, Xoshiro256.derive(run.train.seed, "gc"))
        feats = np.stack([e.input_mel.frames for e in batch.examples])
        targets = np.stack([e.targets.tokens for e in batch.examples])
    else:
        rng = np.random.default_rng(run.train.seed)
        feats = rng.standard_normal((2, 96, run.encoder.in_dim))
        targets = rng.integers(0, run.encoder.vocab, (2, 12))
    positions = [np.arange(targets.shape[1])] * targets.shape[0]
    batch = (feats, targets, positions)
    err = grad_check(state.params, batch, run.encoder, args.eps, args.coords, run.train.seed)
    control = grad_check(state.params, batch, run.encoder, args.eps, 10, run.train.seed,
                         names=["head.w"], corrupt={"head.w": 2.0})
    _emit({"max_rel_err": err, "corrupted_control": control, "coords": args.coords, "eps": args.eps},
          args.out, "grad_check.json")
    return 0 if err < 1e-4 else 2


def cmd_pretrain(args) -> int:
    run = _config(args)
    steps = args.steps if args.steps is not None else run.train.total_steps
    state = init_state(run)
    pretrain(state, _corpus(run), steps, args.out)
    return 0


def cmd_resume(args) -> int:
    run = _config(args)
    steps = args.steps if args.steps is not None else run.train.total_steps
    state = load_checkpoint(args.resume, run)
    pretrain(state, _corpus(run), steps, args.out)
    return 0


def cmd_inspect_ckpt(args) -> int:
    _emit(ckpt.inspect(args.checkpoint))
    return 0


HANDLERS = {
    "synth-data": cmd_synth_data,
    "featurize": cmd_featurize,
    "quantize": cmd_quantize,
    "mask-stats": cmd_mask_stats,
    "augment-preview": cmd_augment_preview,
    "grad-check": cmd_grad_check,
    "pretrain": cmd_pretrain,
    "resume": cmd_resume,
    "inspect-ckpt": cmd_inspect_ckpt,
}


def run(argv=None) -> int:
    level = os.environ.get("NEST_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(COMMANDS)}")
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"nest-ssl: {exc}", file=sys.stderr)
        return 1
    except ConfigValidationError as exc:
        print(f"nest-ssl: {exc}", file=sys.stderr)
        return 1
    except (NestError, OSError, ValueError, KeyError) as exc:
        print(f"nest-ssl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
