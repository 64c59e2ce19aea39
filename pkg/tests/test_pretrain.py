import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pat.model import ModelConfig
from pat.pretrain import (
    MAEConfig,
    MaskedAutoencoder,
    MaskPlan,
    mae_forward,
    masked_count,
    minute_mask,
    pretrain_loop,
    reconstruction_loss,
    sample_mask,
)
from pat.tensor import ContractError, ShapeError

TINY = ModelConfig(series_len=60, patch_size=6, embed_dim=16, num_layers=1, num_heads=2,
                   head_dim=8, ffn_dim=32, dropout=0.0, size_tag=None)
TINY_MAE = MAEConfig(mask_ratio=0.5, decoder_dim=8, decoder_heads=2, decoder_ffn_dim=16,
                     epochs=3, batch_size=2)


def brute_mse(x, r, weights=None):
    x, r = np.ravel(x), np.ravel(r)
    w = np.ones_like(x) if weights is None else np.ravel(weights)
    num = sum(wi * (a - b) ** 2 for a, b, wi in zip(x, r, w))
    return num / sum(w)


class TestMask:
    def test_paper_ratio_cardinality(self):
        plan = sample_mask(560, 0.9, np.random.default_rng(0))
        assert len(plan.masked_idx) == 504 and len(plan.visible_idx) == 56

    def test_deterministic(self):
        a = sample_mask(10, 0.5, np.random.default_rng(4))
        b = sample_mask(10, 0.5, np.random.default_rng(4))
        np.testing.assert_array_equal(a.masked_idx, b.masked_idx)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 700), st.floats(0.01, 0.99), st.integers(0, 2**31))
    def test_partition(self, n, ratio, seed):
        plan = sample_mask(n, ratio, np.random.default_rng(seed))
        both = np.concatenate([plan.visible_idx, plan.masked_idx])
        np.testing.assert_array_equal(np.sort(both), np.arange(n))
        assert len(plan.masked_idx) == masked_count(n, ratio)
        if 1 <= round(ratio * n) <= n - 1:
            assert abs(len(plan.masked_idx) - ratio * n) <= 0.5
        assert 1 <= len(plan.masked_idx) <= n - 1

    def test_tiny_counts_clamped(self):
        assert masked_count(2, 0.1) == 1
        assert masked_count(2, 0.9) == 1
        assert masked_count(560, 0.9) == 504

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ContractError):
            sample_mask(10, ratio, np.random.default_rng(0))

    def test_minute_mask(self):
        plan = MaskPlan(np.array([0, 2]), np.array([1]), 1 / 3)
        np.testing.assert_array_equal(minute_mask(plan, 2), [0, 0, 1, 1, 0, 0])


class TestReconstructionLoss:
    def _plan(self, n=10, k=9):
        return MaskPlan(np.arange(k, n), np.arange(k), k / n)

    def test_perfect(self):
        x = np.random.default_rng(0).normal(size=30)
        for mode in ("all", "masked_only"):
            assert float(reconstruction_loss(x, x, self._plan(), mode).data) == 0.0

    def test_unit_error(self):
        x = np.zeros(30)
        for mode in ("all", "masked_only"):
            assert float(reconstruction_loss(x, x + 1, self._plan(), mode).data) == pytest.approx(1.0)

    def test_masked_error_only(self):
        plan = self._plan()
        x = np.zeros(30)
        r = minute_mask(plan, 3).astype(float)
        assert float(reconstruction_loss(x, r, plan, "all").data) == pytest.approx(0.9)
        assert float(reconstruction_loss(x, r, plan, "masked_only").data) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(np.zeros(30), np.zeros(29), self._plan())

    def test_batch_matches_oracle(self):
        rng = np.random.default_rng(1)
        plans = [sample_mask(10, 0.3, rng) for _ in range(3)]
        x, r = rng.normal(size=(3, 30)), rng.normal(size=(3, 30))
        w = np.stack([minute_mask(p, 3) for p in plans])
        got = float(reconstruction_loss(x, r, plans, "masked_only", 3).data)
        assert got == pytest.approx(brute_mse(x, r, w), rel=1e-5)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 40), st.integers(1, 6), st.floats(0.05, 0.95))
    def test_all_mode_decomposes(self, seed, n, s, ratio):
        rng = np.random.default_rng(seed)
        plan = sample_mask(n, ratio, rng)
        x, r = rng.normal(size=n * s), rng.normal(size=n * s)
        m = minute_mask(plan, s)
        all_mode = float(reconstruction_loss(x, r, plan, "all", s).data)
        assert all_mode == pytest.approx(brute_mse(x, r), abs=1e-6)
        masked = float(reconstruction_loss(x, r, plan, "masked_only", s).data)
        visible = brute_mse(x, r, ~m) if (~m).any() else 0.0
        frac = m.mean()
        assert all_mode == pytest.approx(frac * masked + (1 - frac) * visible, abs=1e-6)


class TestMaskedAutoencoder:
    def test_latents_ignore_masked_content(self):
        rng = np.random.default_rng(0)
        model = MaskedAutoencoder(TINY, TINY_MAE, rng=0)
        for _ in range(10):
            x = rng.normal(size=60).astype(np.float32)
            plan = sample_mask(10, 0.9, rng)
            y = x.copy()
            y[minute_mask(plan, 6)] = rng.normal(size=54) * 100
            a = model.encode_visible(x, [plan])[0].data
            b = model.encode_visible(y, [plan])[0].data
            assert a.tobytes() == b.tobytes()
            assert a.shape == (1, 1, 16)

    def test_full_reconstruction_shape(self):
        model = MaskedAutoencoder(TINY, TINY_MAE, rng=0)
        plan = sample_mask(10, 0.5, np.random.default_rng(0))
        assert mae_forward(np.zeros(60), plan, model).shape == (60,)

    def test_plan_size_mismatch(self):
        model = MaskedAutoencoder(TINY, TINY_MAE, rng=0)
        with pytest.raises(ShapeError):
            model.encode_visible(np.zeros(60), [sample_mask(12, 0.5, np.random.default_rng(0))])

    def test_decoder_parameter_names(self):
        names = MaskedAutoencoder(TINY, TINY_MAE, rng=0).parameters()
        assert {"mask_token", "decoder_embed.weight", "decoder_pred.bias"} <= set(names)
        assert names["decoder_pred.weight"].shape == (8, 6)


class TestPretrainLoop:
    def test_empty(self):
        with pytest.raises(ContractError):
            pretrain_loop(np.zeros((0, 60)), TINY_MAE, TINY)

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            pretrain_loop(np.zeros((2, 61)), TINY_MAE, TINY)

    def test_deterministic_history(self):
        x = np.random.default_rng(0).normal(size=(4, 60))
        a = pretrain_loop(x, TINY_MAE, TINY).history
        b = pretrain_loop(x, TINY_MAE, TINY).history
        assert np.array(a).tobytes() == np.array(b).tobytes()
        assert len(a) == 3

    def test_loss_decreases(self):
        t = np.arange(60)
        x = np.stack([np.sin(2 * np.pi * t / 20 + ph) for ph in (0.0, 0.7, 1.4, 2.1)])
        cfg = MAEConfig(mask_ratio=0.5, decoder_dim=8, decoder_heads=2, decoder_ffn_dim=16,
                        epochs=60, batch_size=2, lr=3e-3)
        hist = pretrain_loop(x, cfg, TINY).history
        assert hist[-1] < 0.5 * hist[0]

    def test_masked_only_mode_runs(self):
        cfg = MAEConfig(mask_ratio=0.5, loss_mode="masked_only", decoder_dim=8, decoder_heads=2,
                        decoder_ffn_dim=16, epochs=1, batch_size=4)
        res = pretrain_loop(np.ones((3, 60)), cfg, TINY)
        assert np.isfinite(res.history[0]) and not res.model.training

    @pytest.mark.parametrize("kw", [dict(mask_ratio=1.0), dict(loss_mode="l1"),
                                    dict(decoder_dim=10, decoder_heads=4)])
    def test_config_rejects(self, kw):
        with pytest.raises(ContractError):
            MAEConfig(**kw)


@pytest.mark.parametrize("ratio", [0.25, 0.5, 0.75, 0.9])
def test_cardinality_grid(ratio):
    rng = np.random.default_rng(0)
    for n in range(2, 1001):
        plan = sample_mask(n, ratio, rng)
        k = int(np.floor(ratio * n + 0.5))
        if 1 <= k <= n - 1:
            assert len(plan.masked_idx) == k
        else:
            # tiny n at high ratios would round to "everything masked"
            assert k == n and n <= 5 and len(plan.masked_idx) == n - 1
        assert len(plan.visible_idx) + len(plan.masked_idx) == n


def test_loss_decreases_over_first_epochs_at_default_lr():
    t = np.arange(60)
    x = np.stack([np.sin(2 * np.pi * t / 20 + ph) for ph in np.linspace(0, 2, 6)])
    cfg = MAEConfig(mask_ratio=0.5, decoder_dim=8, decoder_heads=2, decoder_ffn_dim=16,
                    epochs=6, batch_size=2)
    hist = pretrain_loop(x, cfg, TINY).history
    rises = sum(b >= a for a, b in zip(hist[:5], hist[1:6]))
    assert rises <= 1, hist
