"""Miniature encoder with 8x convolutional subsampling and a token head.

Layout: three stride-2 convolutions (GELU after each), a fixed sinusoidal
position table, pre-norm residual blocks, a final layer norm and a linear
projection to the quantizer vocabulary. Gradients come from the tape in
:mod:`nest_ssl.autodiff`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import TooShort

Params = dict  # name -> ndarray


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_blocks: int = 2
    block_kind: str = "ffn"  # ffn | attention_ffn
    d_ff: Optional[int] = None  # defaults to 4 * d_model
    vocab: int = 8192
    in_dim: int = 80
    conv_kernel: int = 5
    conv_strides: tuple = (2, 2, 2)

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def subsampling(self) -> int:
        return int(np.prod(self.conv_strides))

    def validate(self) -> list[str]:
        errs = []
        if self.block_kind not in ("ffn", "attention_ffn"):
            errs.append("encoder.block_kind must be 'ffn' or 'attention_ffn'")
        if min(self.d_model, self.vocab, self.in_dim, self.conv_kernel) < 1 or self.n_blocks < 0:
            errs.append("encoder dims must be positive")
        if any(s < 1 for s in self.conv_strides):
            errs.append("encoder.conv_strides entries must be >= 1")
        return errs


def _conv_pad(kernel: int, stride: int) -> tuple[int, int]:
    # total padding K - stride gives out_len == T // stride
    total = kernel - stride
    if total < 0:
        raise ValueError("conv kernel must be >= stride")
    return (total + 1) // 2, total // 2


def output_length(T: int, cfg: EncoderConfig = EncoderConfig()) -> int:
    for s in cfg.conv_strides:
        T //= s
    return T


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    shapes = {}
    c_in = cfg.in_dim
    for i, _ in enumerate(cfg.conv_strides):
        shapes[f"enc.conv{i}.w"] = (cfg.conv_kernel, c_in, cfg.d_model)
        shapes[f"enc.conv{i}.b"] = (cfg.d_model,)
        c_in = cfg.d_model
    d, f = cfg.d_model, cfg.ff_dim
    for i in range(cfg.n_blocks):
        p = f"enc.block{i}"
        if cfg.block_kind == "attention_ffn":
            shapes[f"{p}.attn.norm.scale"] = (d,)
            shapes[f"{p}.attn.norm.offset"] = (d,)
            for m in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}.attn.{m}"] = (d, d)
            shapes[f"{p}.attn.bo"] = (d,)
        shapes[f"{p}.ffn.norm.scale"] = (d,)
        shapes[f"{p}.ffn.norm.offset"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["enc.final_norm.scale"] = (d,)
    shapes["enc.final_norm.offset"] = (d,)
    shapes["head.w"] = (d, cfg.vocab)
    shapes["head.b"] = (cfg.vocab,)
    return shapes


def is_decayed(name: str, shape: tuple) -> bool:
    """Weight decay applies to matrices and conv filters only."""
    return len(shape) >= 2


def init_params(cfg: EncoderConfig, seed: int = 0, dtype=np.float32) -> Params:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".scale"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            arr = rng.standard_normal(shape) / math.sqrt(fan_in)
        params[name] = arr.astype(dtype)
    return params


def positional_table(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / d_model))
    table = np.zeros((length, d_model))
    table[:, 0: 2 * (d_model // 2): 2] = np.sin(angle)
    table[:, 1: 2 * (d_model // 2): 2] = np.cos(angle)
    return table.astype(dtype)


@dataclass
class Forward:
    logits: np.ndarray  # (B, W, vocab)
    tape: ad.Tape
    output: ad.Node


def encoder_forward(params: Mapping[str, np.ndarray], masked_mel, cfg: EncoderConfig) -> Forward:
    """Run the encoder on ``(T, F)`` or ``(B, T, F)`` features.

    Sequences in a batch share a length and never interact. Computation runs
    in the dtype of the parameters.
    """
    dtype = params["head.w"].dtype
    x = np.asarray(getattr(masked_mel, "frames", masked_mel), dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    T = x.shape[1]
    if output_length(T, cfg) < 1:
        raise TooShort(f"{T} frames < subsampling factor {cfg.subsampling}")

    tape = ad.Tape()
    p = {name: tape.leaf(np.asarray(v), name) for name, v in params.items()}
    h = tape.leaf(x)
    for i, stride in enumerate(cfg.conv_strides):
        h = ad.conv1d(tape, h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride,
                      _conv_pad(cfg.conv_kernel, stride))
        h = ad.gelu(tape, h)
    h = ad.add_const(tape, h, positional_table(h.shape[1], cfg.d_model, dtype))
    for i in range(cfg.n_blocks):
        pre = f"enc.block{i}"
        if cfg.block_kind == "attention_ffn":
            z = ad.layer_norm(tape, h, p[f"{pre}.attn.norm.scale"], p[f"{pre}.attn.norm.offset"])
            z = ad.self_attention(tape, z, *(p[f"{pre}.attn.{m}"] for m in ("wq", "wk", "wv", "wo", "bo")))
            h = ad.add(tape, h, z)
        z = ad.layer_norm(tape, h, p[f"{pre}.ffn.norm.scale"], p[f"{pre}.ffn.norm.offset"])
        z = ad.gelu(tape, ad.linear(tape, z, p[f"{pre}.ffn.w1"], p[f"{pre}.ffn.b1"]))
        z = ad.linear(tape, z, p[f"{pre}.ffn.w2"], p[f"{pre}.ffn.b2"])
        h = ad.add(tape, h, z)
    h = ad.layer_norm(tape, h, p["enc.final_norm.scale"], p["enc.final_norm.offset"])
    out = ad.linear(tape, h, p["head.w"], p["head.b"])
    return Forward(out.value, tape, out)


@dataclass
class LossResult:
    loss: float
    grad_logits: np.ndarray   # d loss / d logits, same shape as logits
    correct: np.ndarray       # bool per selected position
    n_positions: int

    @property
    def skipped(self) -> bool:
        return self.n_positions == 0

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean()) if self.n_positions else 0.0


def masked_ce_loss(logits: np.ndarray, targets, positions) -> LossResult:
    """Mean cross-entropy over selected windows, accumulated in float64.

    Single sequence: ``logits (W, V)``, ``targets (W,)``, ``positions`` a list
    of window indices. Batched: ``logits (B, W, V)``, ``targets (B, W)`` and
    one index list per sequence. No positions gives loss 0 and ``skipped``.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 2
    lg = logits[None] if single else logits
    tg = np.asarray(getattr(targets, "tokens", targets))
    tg = tg[None] if single else tg
    pos = [positions] if single else positions
    B, W, V = lg.shape
    if tg.shape != (B, W):
        raise ValueError(f"targets shape {tg.shape} != {(B, W)}")

    rows, cols = [], []
    for b, idx in enumerate(pos):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= W):
            raise IndexError(f"loss position outside [0, {W})")
        rows.append(np.full(idx.size, b))
        cols.append(idx)
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    n = rows.size
    grad = np.zeros_like(lg)
    if n == 0:
        return LossResult(0.0, grad[0] if single else grad, np.zeros(0, bool), 0)

    z = lg[rows, cols].astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    tgt = tg[rows, cols]
    nll = logsumexp - z[np.arange(n), tgt]
    probs = np.exp(z - logsumexp[:, None])
    dz = probs
    dz[np.arange(n), tgt] -= 1.0
    grad[rows, cols] = (dz / n).astype(lg.dtype)
    correct = np.argmax(lg[rows, cols], axis=1) == tgt
    return LossResult(float(nll.mean()), grad[0] if single else grad, correct, n)


def backward(fwd: Forward, loss: LossResult) -> dict[str, np.ndarray]:
    g = loss.grad_logits
    if g.ndim == fwd.output.value.ndim - 1:
        g = g[None]
    return fwd.tape.backward(fwd.output, g)


def loss_and_grads(params, features, targets, positions, cfg: EncoderConfig):
    fwd = encoder_forward(params, features, cfg)
    loss = masked_ce_loss(fwd.logits, targets, positions)
    return loss, backward(fwd, loss)


def _loss(params, features, targets, positions, cfg) -> float:
    return masked_ce_loss(encoder_forward(params, features, cfg).logits, targets, positions).loss


def grad_check(params: Mapping[str, np.ndarray], batch, cfg: EncoderConfig, eps: float = 1e-3,
               n_coords: int = 50, seed: int = 0, names: Optional[Sequence[str]] = None,
               corrupt: Optional[Mapping[str, float]] = None) -> float:
    """Worst relative error between tape gradients and central differences.

    ``batch`` is ``(features, targets, positions)``. Everything runs in
    float64. ``corrupt`` scales chosen analytic gradients, which lets callers
    confirm the check actually detects a wrong gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    features, targets, positions = batch
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_and_grads(p64, features, targets, positions, cfg)
    for name, factor in (corrupt or {}).items():
        grads[name] = grads[name] * factor

    rng = np.random.default_rng(seed)
    pool = list(names) if names is not None else sorted(p64)
    worst = 0.0
    for _ in range(n_coords):
        name = pool[rng.integers(len(pool))]
        idx = tuple(int(rng.integers(s)) for s in p64[name].shape)
        orig = p64[name][idx]
        p64[name][idx] = orig + eps
        up = _loss(p64, features, targets, positions, cfg)
        p64[name][idx] = orig - eps
        down = _loss(p64, features, targets, positions, cfg)
        p64[name][idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
