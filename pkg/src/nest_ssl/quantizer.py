"""Frozen random-projection quantizer (BEST-RQ style target generator)."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyInput, InvalidDims
from .rng import Xoshiro256
from .signal import MelSpectrogram

INPUT_RATE = 100.0  # frames per second at 10 ms hop


@dataclass(frozen=True, eq=False)
class Quantizer:
    """Projection ``(in_dim, code_dim)`` and codebook ``(vocab, code_dim)``.

    Both matrices are float32 and flagged read-only; nothing in the package
    writes to them after construction.
    """

    projection: np.ndarray
    codebook: np.ndarray
    seed: int
    normalize: bool = True
    norm_eps: float = 1e-8

    @property
    def in_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def code_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def vocab(self) -> int:
        return self.codebook.shape[0]

    def to_bytes(self) -> bytes:
        return self.projection.tobytes() + self.codebook.tobytes()

    @functools.cached_property
    def _codes(self) -> np.ndarray:
        c = self.codebook.astype(np.float64)
        if self.normalize:
            c = c / (np.linalg.norm(c, axis=1, keepdims=True) + self.norm_eps)
        c.setflags(write=False)
        return c

    @functools.cached_property
    def _code_sq(self) -> np.ndarray:
        return np.einsum("kd,kd->k", self._codes, self._codes)


@dataclass
class TokenSequence:
    tokens: np.ndarray  # int64
    rate: float

    def __len__(self) -> int:
        return len(self.tokens)


def init_quantizer(seed: int = 42, in_dim: int = 80, code_dim: int = 16, vocab: int = 8192,
                   normalize: bool = True, norm_eps: float = 1e-8) -> Quantizer:
    """Draw projection then codebook, i.i.d. N(0, 1), row-major, from one stream."""
    if min(in_dim, code_dim, vocab) < 1:
        raise InvalidDims(f"dims must be >= 1, got in_dim={in_dim} code_dim={code_dim} vocab={vocab}")
    rng = Xoshiro256(seed)
    projection = rng.normal((in_dim, code_dim)).astype(np.float32)
    codebook = rng.normal((vocab, code_dim)).astype(np.float32)
    projection.setflags(write=False)
    codebook.setflags(write=False)
    return Quantizer(projection, codebook, int(seed), normalize, norm_eps)


def project(q: Quantizer, frames: np.ndarray) -> np.ndarray:
    """Apply the frozen projection in float64; ``(..., in_dim) -> (..., code_dim)``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != q.in_dim:
        raise DimMismatch(f"feature dim {frames.shape[-1]} != quantizer in_dim {q.in_dim}")
    return frames @ q.projection.astype(np.float64)


def nearest_code(q: Quantizer, vectors: np.ndarray) -> np.ndarray:
    """Nearest codebook row for each projected vector ``(N, code_dim)``.

    Squared distance is expanded as ``|u|^2 + |c|^2 - 2 u.c``; argmin returns
    the first minimum, so ties go to the smallest index.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if q.normalize:
        v = v / (np.linalg.norm(v, axis=1, keepdims=True) + q.norm_eps)
    u_sq = np.einsum("nd,nd->n", v, v)[:, None]
    dist = u_sq + q._code_sq[None, :] - 2.0 * (v @ q._codes.T)
    return np.argmin(dist, axis=1)


def quantize_frame(q: Quantizer, frame: np.ndarray) -> int:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (q.in_dim,):
        raise DimMismatch(f"frame shape {frame.shape} != ({q.in_dim},)")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return int(nearest_code(q, project(q, frame)[None, :])[0])


def quantize(q: Quantizer, mel) -> TokenSequence:
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyInput("mel spectrogram has no frames")
    return TokenSequence(nearest_code(q, project(q, frames)).astype(np.int64), INPUT_RATE)
