"""A small reverse-mode tape over numpy arrays.

Only the handful of ops the encoder needs are provided. Each op computes its
output eagerly and records a closure mapping the output gradient to the
gradients of its inputs. :meth:`Tape.backward` replays the closures in exact
reverse recording order, which is a reverse topological order because an op
can only consume nodes recorded before it.
"""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np


class Node:
    __slots__ = ("value", "grad", "name", "index")

    def __init__(self, value: np.ndarray, name: Optional[str] = None, index: int = -1):
        self.value = value
        self.grad = None
        self.name = name
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node({self.name or self.index}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.ops: list[tuple[Node, tuple[Node, ...], Callable]] = []
        self.params: dict[str, Node] = {}

    def leaf(self, value: np.ndarray, name: Optional[str] = None) -> Node:
        node = Node(value, name, len(self.nodes))
        self.nodes.append(node)
        if name is not None:
            self.params[name] = node
        return node

    def record(self, value: np.ndarray, parents: Sequence[Node], backward_fn: Callable) -> Node:
        node = Node(value, None, len(self.nodes))
        self.nodes.append(node)
        self.ops.append((node, tuple(parents), backward_fn))
        return node

    def backward(self, out: Node, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Propagate ``grad_out`` from ``out``; returns gradients of named leaves.

        Leaves that do not influence ``out`` get an exact zero gradient.
        """
        for node in self.nodes:
            node.grad = None
        out.grad = np.asarray(grad_out, dtype=out.value.dtype)
        for node, parents, fn in reversed(self.ops):
            if node.grad is None:
                continue
            for parent, g in zip(parents, fn(node.grad)):
                if g is None:
                    continue
                # fan-out: gradients accumulate additively
                parent.grad = g if parent.grad is None else parent.grad + g
        return {
            name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
            for name, leaf in self.params.items()
        }


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- ops ------------------------------------------------------------------


def add(tape: Tape, a: Node, b: Node) -> Node:
    return tape.record(a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def add_const(tape: Tape, a: Node, c: np.ndarray) -> Node:
    return tape.record(a.value + c, (a,), lambda g: (g,))


def linear(tape: Tape, x: Node, w: Node, b: Optional[Node] = None) -> Node:
    """``x @ w (+ b)`` for ``x`` of shape ``(..., in)`` and ``w`` of shape ``(in, out)``."""
    y = x.value @ w.value
    if b is not None:
        y = y + b.value

    def backward(g):
        x2 = x.value.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.value.T
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return tape.record(y, parents, backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(tape: Tape, x: Node) -> Node:
    """tanh approximation of GELU."""
    v = x.value
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    y = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * dinner),)

    return tape.record(y, (x,), backward)


def layer_norm(tape: Tape, x: Node, scale: Node, offset: Node, eps: float = 1e-5) -> Node:
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * scale.value + offset.value

    def backward(g):
        n = v.shape[-1]
        gxhat = g * scale.value
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / n)
        gs = (g * xhat).reshape(-1, n).sum(axis=0)
        go = g.reshape(-1, n).sum(axis=0)
        return gx, gs, go

    return tape.record(y, (x, scale, offset), backward)


def conv1d(tape: Tape, x: Node, w: Node, b: Node, stride: int, pad: tuple[int, int]) -> Node:
    """Strided 1-D convolution over time.

    ``x``: ``(B, T, C_in)``; ``w``: ``(K, C_in, C_out)``; ``b``: ``(C_out,)``.
    Output length is ``(T + pad_l + pad_r - K) // stride + 1``.
    """
    K, c_in, c_out = w.shape
    B, T, _ = x.shape
    xp = np.pad(x.value, ((0, 0), pad, (0, 0)))
    t_out = (T + pad[0] + pad[1] - K) // stride + 1
    idx = stride * np.arange(t_out)[:, None] + np.arange(K)[None, :]
    cols = xp[:, idx, :].reshape(B, t_out, K * c_in)
    w2 = w.value.reshape(K * c_in, c_out)
    y = cols @ w2 + b.value

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gw = (cols.reshape(-1, K * c_in).T @ g2).reshape(K, c_in, c_out)
        gb = g2.sum(axis=0)
        gcols = (g @ w2.T).reshape(B, t_out, K, c_in)
        gxp = np.zeros_like(xp)
        stop = stride * (t_out - 1) + 1
        for k in range(K):
            gxp[:, k: k + stop: stride, :] += gcols[:, :, k, :]
        gx = gxp[:, pad[0]: pad[0] + T, :]
        return gx, gw, gb

    return tape.record(y, (x, w, b), backward)


def self_attention(tape: Tape, x: Node, wq: Node, wk: Node, wv: Node, wo: Node, bo: Node) -> Node:
    """Single-head scaled dot-product attention within each sequence of ``(B, W, D)``."""
    xv = x.value
    d = wq.shape[1]
    q = xv @ wq.value
    k = xv @ wk.value
    v = xv @ wv.value
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(d)
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    ctx = p @ v
    y = ctx @ wo.value + bo.value

    def backward(g):
        D = xv.shape[-1]
        gwo = ctx.reshape(-1, d).T @ g.reshape(-1, g.shape[-1])
        gbo = g.reshape(-1, g.shape[-1]).sum(axis=0)
        gctx = g @ wo.value.T
        gp = gctx @ v.transpose(0, 2, 1)
        gv = p.transpose(0, 2, 1) @ gctx
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) / math.sqrt(d)
        gq = gs @ k
        gk = gs.transpose(0, 2, 1) @ q
        x2 = xv.reshape(-1, D)
        gwq = x2.T @ gq.reshape(-1, d)
        gwk = x2.T @ gk.reshape(-1, d)
        gwv = x2.T @ gv.reshape(-1, d)
        gx = gq @ wq.value.T + gk @ wk.value.T + gv @ wv.value.T
        return gx, gwq, gwk, gwv, gwo, gbo

    return tape.record(y, (x, wq, wk, wv, wo, bo), backward)
