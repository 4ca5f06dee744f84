"""Run configuration: every stage's settings in one TOML document."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .align import AlignConfig
from .augment import AugmentConfig
from .errors import ConfigValidationError
from .masking import MaskConfig
from .model import EncoderConfig
from .signal import MelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class QuantizerConfig:
    seed: int = 42
    in_dim: int = 80
    code_dim: int = 16
    vocab: int = 8192
    normalize: bool = True
    norm_eps: float = 1e-8

    def validate(self) -> list[str]:
        if min(self.in_dim, self.code_dim, self.vocab) < 1:
            return ["quantizer dims must be >= 1"]
        return []


@dataclass(frozen=True)
class PathsConfig:
    manifest: Optional[str] = None
    noise_dir: Optional[str] = None

    def validate(self) -> list[str]:
        return []


SECTIONS = {
    "mel": MelConfig,
    "mask": MaskConfig,
    "augment": AugmentConfig,
    "align": AlignConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "quantizer": QuantizerConfig,
    "paths": PathsConfig,
}


@dataclass(frozen=True)
class RunConfig:
    mel: MelConfig = MelConfig()
    mask: MaskConfig = MaskConfig()
    augment: AugmentConfig = AugmentConfig()
    align: AlignConfig = AlignConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    quantizer: QuantizerConfig = QuantizerConfig()
    paths: PathsConfig = PathsConfig()

    def violations(self) -> list[str]:
        errs = []
        for name in SECTIONS:
            errs.extend(getattr(self, name).validate())
        if self.encoder.subsampling != self.align.factor:
            errs.append(f"encoder.conv_strides {list(self.encoder.conv_strides)} (product "
                        f"{self.encoder.subsampling}) must match align.factor {self.align.factor}")
        if self.encoder.vocab != self.quantizer.vocab:
            errs.append(f"encoder.vocab {self.encoder.vocab} must equal quantizer.vocab {self.quantizer.vocab}")
        if not self.encoder.in_dim == self.quantizer.in_dim == self.mel.n_mels:
            errs.append(f"encoder.in_dim {self.encoder.in_dim}, quantizer.in_dim {self.quantizer.in_dim} "
                        f"and mel.n_mels {self.mel.n_mels} must agree")
        return errs

    def validate(self) -> "RunConfig":
        errs = self.violations()
        if errs:
            raise ConfigValidationError(errs)
        return self

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_seed(self, seed: int) -> "RunConfig":
        return self.replace(train=dataclasses.replace(self.train, seed=int(seed)))

    def fingerprint(self) -> int:
        """64-bit hash of everything that shapes a training trajectory.

        Step budget, checkpoint cadence and file paths are excluded so a run
        can be resumed with a larger ``--steps``.
        """
        d = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS if name != "paths"}
        for key in ("total_steps", "checkpoint_every"):
            d["train"].pop(key)
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")

    def to_toml(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, value in dataclasses.asdict(getattr(self, name)).items():
                if value is None:
                    continue
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
        return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return repr(v)


def from_dict(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Build and exhaustively validate a :class:`RunConfig` from parsed TOML."""
    errs = []
    sections = {}
    for name, value in doc.items():
        if name not in SECTIONS:
            errs.append(f"unknown section [{name}]")
            continue
        cls = SECTIONS[name]
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, v in value.items():
            if key not in known:
                errs.append(f"unknown key {name}.{key}")
                continue
            if isinstance(v, list):
                v = tuple(v)
            if name == "paths" and v is not None and base_dir is not None:
                v = str((base_dir / v).resolve())
            kwargs[key] = v
        try:
            sections[name] = cls(**kwargs)
        except TypeError as exc:
            errs.append(f"[{name}]: {exc}")
    run = RunConfig(**sections)
    errs.extend(run.violations())
    if errs:
        raise ConfigValidationError(errs)
    return run


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([f"{path}: {exc}"]) from exc
    return from_dict(doc, path.parent)
