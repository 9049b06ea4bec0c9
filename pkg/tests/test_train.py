import numpy as np
import pytest

from bsrkit.burstgen import Burst, ShiftDistribution, generate_burst, make_texture
from bsrkit.decode import DecoderConfig
from bsrkit.errors import ConfigError, DimensionError, TrainingError
from bsrkit.pipeline import forward_burst, init_model
from bsrkit.tensor import Tensor, backward, mean, mul
from bsrkit.train import (
    AdamWState,
    TrainConfig,
    adamw_step,
    cosine_lr,
    gw_loss,
    mae_loss,
    prealign_pairs,
    train,
)

from conftest import check_gradients


SMALL_CFG = DecoderConfig(embed_dim=8, window=2, heads=2, scale=2)


def small_pairs(n_pairs=1, n_frames=2, seed=0):
    pairs = []
    for k in range(n_pairs):
        hr = make_texture(seed + k, size=32)  # 16x16 LR at scale 2
        burst, gt = generate_burst(
            hr, n_frames, 2, ShiftDistribution(), 0.0, seed=seed + k
        )
        pairs.append((burst, gt))
    return pairs


class TestLosses:
    def test_mae_identical_zero(self, rng):
        x = Tensor(rng.random((3, 6, 6)))
        assert mae_loss(x, Tensor(x.data.copy())).item() == 0.0

    def test_mae_constant_offset(self, rng):
        a = rng.random((3, 6, 6)) * 0.5
        assert abs(mae_loss(Tensor(a + 0.1), Tensor(a)).item() - 0.1) < 1e-12

    def test_mae_matches_loop_oracle(self, rng):
        a, b = rng.random((3, 5, 5)), rng.random((3, 5, 5))
        ref = np.abs(a - b).mean()
        assert abs(mae_loss(Tensor(a), Tensor(b)).item() - ref) < 1e-12

    def test_gw_identical_zero(self, rng):
        x = Tensor(rng.random((3, 6, 6)))
        assert gw_loss(x, Tensor(x.data.copy()), 4.0).item() == 0.0

    def test_gw_constant_offset_equals_mae(self, rng):
        a = rng.random((3, 6, 6)) * 0.5
        sr, gt = Tensor(a + 0.07), Tensor(a)
        assert abs(gw_loss(sr, gt, 4.0).item() - mae_loss(sr, gt).item()) < 1e-12

    def test_gw_alpha_zero_equals_mae(self, rng):
        sr, gt = Tensor(rng.random((3, 6, 6))), Tensor(rng.random((3, 6, 6)))
        assert abs(gw_loss(sr, gt, 0.0).item() - mae_loss(sr, gt).item()) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            mae_loss(Tensor(rng.random((3, 4, 4))), Tensor(rng.random((3, 5, 5))))

    def test_gw_differentiable(self, rng):
        sr = Tensor(rng.random((1, 5, 5)), requires_grad=True)
        gt = Tensor(rng.random((1, 5, 5)))
        check_gradients(lambda: gw_loss(sr, gt, 4.0), [sr])


class TestAdamW:
    def test_zero_grads_no_decay_keeps_params(self):
        cfg = TrainConfig(steps=1, weight_decay=0.0)
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamWState()
        adamw_step({"p": p}, state, cfg, lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        cfg = TrainConfig(steps=1, weight_decay=0.0)
        p = Tensor([5.0], requires_grad=True)
        p.grad = np.ones(1)  # d/dx of f(x) = x
        adamw_step({"p": p}, AdamWState(), cfg, lr=0.1)
        assert abs(p.data[0] - (5.0 - 0.1)) < 1e-6

    def test_quadratic_bowl_convergence(self):
        cfg = TrainConfig(steps=200, lr0=0.05, weight_decay=0.0)
        target = np.array([0.3, -1.2, 2.0])
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamWState()
        for step in range(200):
            p.zero_grad()
            loss = mean(mul(p - Tensor(target), p - Tensor(target)))
            backward(loss)
            adamw_step({"p": p}, state, cfg, lr=0.05)
        assert np.abs(p.data - target).max() < 1e-3

    def test_missing_grad_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(TrainingError):
            adamw_step({"p": p}, AdamWState(), TrainConfig(steps=1), lr=0.1)

    def test_nonfinite_grad_rejected_without_mutation(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([np.inf])
        with pytest.raises(TrainingError):
            adamw_step({"p": p}, AdamWState(), TrainConfig(steps=1), lr=0.1)
        assert p.data[0] == 1.0


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        cfg = TrainConfig(steps=100, lr0=1e-4)
        assert cosine_lr(0, cfg) == 1e-4
        assert abs(cosine_lr(100, cfg)) < 1e-20
        assert abs(cosine_lr(50, cfg) - 5e-5) < 1e-12

    def test_closed_form_everywhere(self):
        cfg = TrainConfig(steps=40, lr0=2e-3, eta_min=1e-5)
        for step in range(41):
            want = 1e-5 + (2e-3 - 1e-5) * (1 + np.cos(np.pi * step / 40)) / 2
            assert abs(cosine_lr(step, cfg) - want) < 1e-15

    def test_monotone_decreasing(self):
        cfg = TrainConfig(steps=30)
        lrs = [cosine_lr(s, cfg) for s in range(31)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))


class TestTrainLoop:
    def test_zero_steps_returns_init(self):
        pairs = small_pairs()
        cfg = TrainConfig(steps=0, seed=3)
        model, report, _ = train(
            pairs, cfg, fusion_mode="faf", decoder_cfg=SMALL_CFG, prealigned=True
        )
        ref = init_model(SMALL_CFG, "faf", seed=3)
        for (ka, ta), (kb, tb) in zip(
            sorted(model.named_parameters().items()),
            sorted(ref.named_parameters().items()),
        ):
            assert ka == kb
            assert np.array_equal(ta.data, tb.data)
        assert report.steps_run == 0
        assert report.loss_trace == []

    def test_seed_determinism(self):
        pairs = small_pairs(n_pairs=2)
        cfg = TrainConfig(steps=6, batch=2, lr0=1e-3, seed=7)
        _, rep_a, _ = train(pairs, cfg, decoder_cfg=SMALL_CFG, prealigned=True)
        _, rep_b, _ = train(pairs, cfg, decoder_cfg=SMALL_CFG, prealigned=True)
        assert rep_a.loss_trace == rep_b.loss_trace
        assert rep_a.lr_trace == rep_b.lr_trace

    def test_lr_trace_matches_schedule(self):
        pairs = small_pairs()
        cfg = TrainConfig(steps=5, lr0=1e-3, seed=0)
        _, report, _ = train(pairs, cfg, decoder_cfg=SMALL_CFG, prealigned=True)
        assert report.lr_trace == [cosine_lr(s, cfg) for s in range(5)]

    def test_loss_decreases_when_overfitting(self):
        pairs = small_pairs()
        cfg = TrainConfig(steps=40, batch=1, lr0=2e-3, seed=1, loss="mae")
        _, report, _ = train(pairs, cfg, decoder_cfg=SMALL_CFG, prealigned=True)
        first = np.mean(report.loss_trace[:5])
        last = np.mean(report.loss_trace[-5:])
        assert last < first

    def test_validation_records(self):
        pairs = small_pairs(n_pairs=2)
        cfg = TrainConfig(steps=4, val_interval=2, seed=0)
        _, report, _ = train(
            pairs, cfg, decoder_cfg=SMALL_CFG, val_pairs=pairs[:1], prealigned=True
        )
        assert [r["step"] for r in report.val_records] == [2, 4]
        for r in report.val_records:
            assert np.isfinite(r["psnr_db"]) and 0 <= r["ssim"] <= 1

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            train([], TrainConfig(steps=1))


class TestConfigValidation:
    def test_bad_loss(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss="l2")

    def test_bad_batch(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch=0)

    def test_roundtrip_dict(self):
        cfg = TrainConfig(steps=7, lr0=3e-4)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
