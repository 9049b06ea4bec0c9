"""Losses, AdamW with cosine annealing, and the training loop.

Training fits the extractor and decoder jointly on (burst, HR) pairs:
align once up front, then repeat extract -> fuse -> decode -> loss ->
backward -> step. The learning rate follows a cosine schedule from lr0
to eta_min. A non-finite loss aborts the run and restores the last
snapshot.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .align import EccConfig, align_burst
from .errors import ConfigError, DimensionError, NumericError, TrainingError
from .evalstats import psnr, ssim
from .imaging import Image
from .decode import bicubic_skip
from .pipeline import SuperResModel, forward_burst, init_model
from .tensor import Tensor, absolute, add, backward, forward_diff, mean, mul, sub

LOSS_KINDS = ("mae", "mae+gw")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch: int = 2
    lr0: float = 1e-4
    eta_min: float = 0.0
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    loss: str = "mae+gw"
    gw_alpha: float = 4.0
    seed: int = 0
    val_interval: int = 0  # 0 = validate only at the end

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")
        if self.lr0 <= 0 or self.eta_min < 0 or self.weight_decay < 0:
            raise ConfigError("invalid learning-rate or weight-decay settings")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return {
            "steps": self.steps,
            "batch": self.batch,
            "lr0": self.lr0,
            "eta_min": self.eta_min,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "loss": self.loss,
            "gw_alpha": self.gw_alpha,
            "seed": self.seed,
            "val_interval": self.val_interval,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# -- losses --------------------------------------------------------------


def _coerce_pair(sr, gt):
    sr = sr if isinstance(sr, Tensor) else Tensor(sr.pixels if isinstance(sr, Image) else sr)
    gt = gt if isinstance(gt, Tensor) else Tensor(gt.pixels if isinstance(gt, Image) else gt)
    if sr.shape != gt.shape:
        raise DimensionError(f"loss shapes differ: {sr.shape} vs {gt.shape}")
    return sr, gt


def mae_loss(sr, gt) -> Tensor:
    """Mean absolute error over all channels and pixels."""
    sr, gt = _coerce_pair(sr, gt)
    return mean(absolute(sub(sr, gt)))


def gw_loss(sr, gt, alpha=4.0) -> Tensor:
    """Gradient-weighted L1: pixels where the prediction's forward-difference
    gradient magnitudes disagree with the target's get up-weighted by
    (1 + alpha*gx)(1 + alpha*gy)."""
    sr, gt = _coerce_pair(sr, gt)
    gx = absolute(sub(absolute(forward_diff(sr, axis=2)),
                      absolute(forward_diff(gt, axis=2))))
    gy = absolute(sub(absolute(forward_diff(sr, axis=1)),
                      absolute(forward_diff(gt, axis=1))))
    weight = mul(add(1.0, mul(alpha, gx)), add(1.0, mul(alpha, gy)))
    return mean(mul(weight, absolute(sub(sr, gt))))


def training_loss(sr, gt, cfg: TrainConfig) -> Tensor:
    if cfg.loss == "mae":
        return mae_loss(sr, gt)
    return add(mae_loss(sr, gt), gw_loss(sr, gt, cfg.gw_alpha))


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamWState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def cosine_lr(step, cfg: TrainConfig) -> float:
    """lr0 at step 0, (lr0 + eta_min)/2 at the midpoint, eta_min at the end."""
    if cfg.steps <= 0:
        return cfg.lr0
    frac = min(max(step / cfg.steps, 0.0), 1.0)
    return cfg.eta_min + (cfg.lr0 - cfg.eta_min) * 0.5 * (1.0 + np.cos(np.pi * frac))


def adamw_step(named_params, state: AdamWState, cfg: TrainConfig, lr):
    """Decoupled-weight-decay adaptive-moment update, in place.

    All gradients are validated before any parameter is touched, so a
    failing step never leaves the model partially updated.
    """
    for name, p in named_params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name} has no gradient")
        if not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient on {name}")
    b1, b2 = cfg.betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in named_params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data = p.data - lr * (update + cfg.weight_decay * p.data)


# -- training loop ---------------------------------------------------------


@dataclass
class TrainReport:
    steps_run: int
    loss_trace: list
    lr_trace: list
    val_records: list
    aborted: bool
    seed: int
    wall_time_seconds: float

    def to_dict(self):
        return {
            "steps_run": self.steps_run,
            "loss_trace": self.loss_trace,
            "lr_trace": self.lr_trace,
            "val_records": self.val_records,
            "aborted": self.aborted,
            "seed": self.seed,
            "wall_time_seconds": self.wall_time_seconds,
        }


def prealign_pairs(pairs, align_cfg: EccConfig | None = None):
    """Align every burst once; returns [(aligned_burst, gt_image), ...]."""
    out = []
    for burst, gt in pairs:
        if burst.n_frames > 1:
            burst, _ = align_burst(burst, align_cfg)
        out.append((burst, gt))
    return out


def evaluate_pairs(model, aligned_pairs, skips=None):
    """Mean PSNR/SSIM of the model over pre-aligned (burst, gt) pairs."""
    ps, ss = [], []
    for i, (burst, gt) in enumerate(aligned_pairs):
        skip = skips[i] if skips is not None else None
        pred = forward_burst(model, burst, skip=skip).data
        ps.append(psnr(pred, gt.pixels))
        ss.append(ssim(pred, gt.pixels))
    return float(np.mean(ps)), float(np.mean(ss))


def train(pairs, cfg: TrainConfig, fusion_mode="faf", model: SuperResModel | None = None,
          decoder_cfg=None, val_pairs=None, align_cfg=None, prealigned=False):
    """Fit extractor + decoder on (burst, HR) pairs.

    Bursts are aligned once up front unless ``prealigned``. Deterministic
    for a fixed config and seed. Returns (model, TrainReport).
    """
    if not pairs:
        raise ConfigError("training needs at least one pair")
    t_start = time.perf_counter()
    if model is None:
        model = init_model(decoder_cfg, fusion_mode, seed=cfg.seed)
    work = pairs if prealigned else prealign_pairs(pairs, align_cfg)
    val_work = None
    val_skips = None
    if val_pairs is not None:
        val_work = val_pairs if prealigned else prealign_pairs(val_pairs, align_cfg)
        val_skips = [bicubic_skip(b.base, model.decoder_cfg.scale) for b, _ in val_work]
    gts = [Tensor(gt.pixels) for _, gt in work]
    skips = [bicubic_skip(b.base, model.decoder_cfg.scale) for b, _ in work]

    rng = np.random.default_rng(cfg.seed)
    state = AdamWState()
    params = model.named_parameters()
    loss_trace = []
    lr_trace = []
    val_records = []
    aborted = False

    def validate(step):
        if val_work:
            vp, vs = evaluate_pairs(model, val_work, val_skips)
            val_records.append({"step": step, "psnr_db": vp, "ssim": vs})

    steps_run = 0
    for step in range(cfg.steps):
        indices = rng.integers(0, len(work), size=cfg.batch)
        model.zero_grads()
        batch_loss = 0.0
        # adamw_step validates every gradient before mutating, so on
        # abort the model is exactly the last successfully stepped state
        try:
            for idx in indices:
                sr = forward_burst(model, work[idx][0], skip=skips[idx])
                loss = training_loss(sr, gts[idx], cfg)
                backward(loss)
                batch_loss += loss.item()
            batch_loss /= cfg.batch
            if not np.isfinite(batch_loss):
                raise TrainingError("non-finite loss")
            for p in params.values():
                if p.grad is not None:
                    p.grad = p.grad / cfg.batch
            adamw_step(params, state, cfg, cosine_lr(step, cfg))
        except (TrainingError, NumericError):
            aborted = True
            break
        loss_trace.append(batch_loss)
        lr_trace.append(cosine_lr(step, cfg))
        steps_run += 1
        if cfg.val_interval and (step + 1) % cfg.val_interval == 0:
            validate(step + 1)
    if not aborted and (not val_records or val_records[-1]["step"] != steps_run):
        validate(steps_run)
    model.step += steps_run
    report = TrainReport(
        steps_run=steps_run,
        loss_trace=loss_trace,
        lr_trace=lr_trace,
        val_records=val_records,
        aborted=aborted,
        seed=cfg.seed,
        wall_time_seconds=time.perf_counter() - t_start,
    )
    return model, report, state
