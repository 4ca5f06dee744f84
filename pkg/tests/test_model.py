import math

import numpy as np
import pytest

from nest_ssl import autodiff as ad
from nest_ssl.errors import TooShort
from nest_ssl.model import (EncoderConfig, encoder_forward, grad_check, init_params, is_decayed,
                            loss_and_grads, masked_ce_loss, output_length, param_shapes, positional_table)
from oracles import central_difference

SMALL = EncoderConfig(d_model=16, n_blocks=1, vocab=32)
ATTN = EncoderConfig(d_model=16, n_blocks=2, vocab=32, block_kind="attention_ffn")


def _batch(cfg, B=2, T=64, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((B, T, cfg.in_dim))
    W = output_length(T, cfg)
    targets = rng.integers(0, cfg.vocab, (B, W))
    return feats, targets, [np.arange(W)] * B


class TestShapes:
    def test_eight_x_subsampling(self):
        assert output_length(80) == 10
        assert output_length(83) == 10
        assert output_length(8) == 1

    def test_logit_shape(self):
        params = init_params(SMALL, 0)
        fwd = encoder_forward(params, np.zeros((80, 80)), SMALL)
        assert fwd.logits.shape == (1, 10, 32)

    def test_too_short(self):
        with pytest.raises(TooShort):
            encoder_forward(init_params(SMALL, 0), np.zeros((7, 80)), SMALL)

    def test_param_shapes_and_decay(self):
        shapes = param_shapes(ATTN)
        assert shapes["head.w"] == (16, 32)
        assert shapes["enc.conv0.w"] == (5, 80, 16)
        assert is_decayed("head.w", shapes["head.w"])
        assert not is_decayed("head.b", shapes["head.b"])
        assert not any(k.startswith("pos") for k in shapes)

    def test_position_table(self):
        pe = positional_table(10, 16)
        assert pe[0, 0::2].tolist() == [0.0] * 8
        assert pe[0, 1::2].tolist() == [1.0] * 8

    def test_init_deterministic(self):
        a, b = init_params(ATTN, 3), init_params(ATTN, 3)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert a["head.w"].dtype == np.float32


def test_dead_head_gives_bias():
    params = init_params(SMALL, 0)
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.arange(32, dtype=np.float32)
    fwd = encoder_forward(params, np.random.default_rng(0).standard_normal((40, 80)), SMALL)
    assert np.array_equal(fwd.logits[0], np.tile(params["head.b"], (5, 1)))


def test_batch_items_independent():
    params = {k: v.astype(np.float64) for k, v in init_params(ATTN, 1).items()}
    feats, _, _ = _batch(ATTN, B=3)
    full = encoder_forward(params, feats, ATTN).logits
    perm = encoder_forward(params, feats[[2, 0, 1]], ATTN).logits
    assert np.allclose(perm, full[[2, 0, 1]], atol=1e-12)
    solo = encoder_forward(params, feats[1], ATTN).logits[0]
    assert np.allclose(solo, full[1], atol=1e-12)


class TestLoss:
    def test_uniform_logits(self):
        res = masked_ce_loss(np.zeros((4, 8192)), np.zeros(4, int), [0, 1, 2, 3])
        assert res.loss == pytest.approx(math.log(8192))
        assert round(res.loss, 4) == 9.0109

    def test_two_way(self):
        assert masked_ce_loss(np.zeros((1, 2)), [1], [0]).loss == pytest.approx(math.log(2))

    def test_closed_form_four_way(self):
        lg = np.array([[0.0, 0.0, 0.0, math.log(3)]])
        assert masked_ce_loss(lg, [3], [0]).loss == pytest.approx(math.log(2), abs=1e-12)

    def test_monotone_in_target_logit(self):
        base = np.random.default_rng(3).standard_normal((1, 16))
        losses = []
        for bump in (0.0, 0.5, 1.0, 2.0):
            lg = base.copy()
            lg[0, 5] += bump
            losses.append(masked_ce_loss(lg, [5], [0]).loss)
        assert all(a > b >= 0 for a, b in zip(losses, losses[1:]))

    def test_saturated_stays_finite(self):
        lg = np.array([[1e4, -1e4, 0.0]])
        assert masked_ce_loss(lg, [0], [0]).loss == pytest.approx(0.0, abs=1e-12)
        assert masked_ce_loss(lg, [1], [0]).loss == pytest.approx(2e4)

    def test_only_selected_positions_count(self):
        lg = np.zeros((3, 4))
        lg[1, 2] = 50.0
        res = masked_ce_loss(lg, [0, 2, 0], [1])
        assert res.loss == pytest.approx(0.0, abs=1e-12)
        assert res.correct.tolist() == [True]
        assert not res.grad_logits[[0, 2]].any()

    def test_empty_selection_skips(self):
        res = masked_ce_loss(np.zeros((2, 5, 4)), np.zeros((2, 5), int), [[], []])
        assert res.skipped and res.loss == 0.0 and not res.grad_logits.any()

    def test_gradient_rows_sum_to_zero(self):
        lg = np.random.default_rng(0).standard_normal((6, 10))
        res = masked_ce_loss(lg, np.arange(6), range(6))
        assert np.allclose(res.grad_logits.sum(axis=1), 0.0, atol=1e-15)

    def test_bad_position(self):
        with pytest.raises(IndexError):
            masked_ce_loss(np.zeros((3, 4)), [0, 0, 0], [3])


class TestTape:
    def test_unused_leaf_zero_gradient(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones((2, 3)), "x")
        w = tape.leaf(np.ones((3, 2)), "w")
        tape.leaf(np.ones(5), "unused")
        y = ad.linear(tape, x, w)
        g = tape.backward(y, np.ones((2, 2)))
        assert np.array_equal(g["unused"], np.zeros(5))

    def test_fan_out_accumulates(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([2.0, 3.0]), "x")
        y = ad.add(tape, x, x)
        assert tape.backward(y, np.ones(2))["x"].tolist() == [2.0, 2.0]

    def test_linear_map_exact(self):
        # for a purely linear graph central differences carry no truncation error
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 3))
        c = rng.standard_normal((4, 3))

        def f(xv):
            return float(np.sum((xv @ w) * c))

        tape = ad.Tape()
        x = tape.leaf(x0, "x")
        y = ad.linear(tape, x, tape.leaf(w, "w"))
        gx = tape.backward(y, c)["x"]
        worst = 0.0
        for idx in np.ndindex(x0.shape):
            e = np.zeros_like(x0)
            e[idx] = 1.0
            num = central_difference(lambda t: f(x0 + t * e), 0.0, 1e-3)
            worst = max(worst, abs(num - gx[idx]) / max(abs(gx[idx]), 1e-12))
        assert worst < 1e-8


@pytest.mark.parametrize("cfg", [SMALL, ATTN], ids=["ffn", "attention_ffn"])
def test_grad_check(cfg):
    params = init_params(cfg, 0)
    assert grad_check(params, _batch(cfg), cfg, eps=1e-3, n_coords=60, seed=1) < 1e-4


def test_grad_check_detects_corruption():
    params = init_params(SMALL, 0)
    err = grad_check(params, _batch(SMALL), SMALL, n_coords=10, names=["head.w"], corrupt={"head.w": 2.0})
    assert err > 0.1


def test_grad_check_full_vocab():
    # a smaller step keeps O(h^2) truncation below tolerance on near-zero gradients
    cfg = EncoderConfig()
    err = grad_check(init_params(cfg, 0), _batch(cfg, B=1, T=48), cfg, eps=1e-4, n_coords=20)
    assert err < 1e-4


def test_float32_gradients_finite():
    params = init_params(ATTN, 0)
    feats, targets, pos = _batch(ATTN)
    loss, grads = loss_and_grads(params, feats.astype(np.float32), targets, pos, ATTN)
    assert math.isfinite(loss.loss)
    assert set(grads) == set(params)
    assert all(np.all(np.isfinite(g)) and g.dtype == np.float32 for g in grads.values())
