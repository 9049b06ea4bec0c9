"""Desk-scale trend experiments.

Three presets mirror the reference ablations: validation quality versus
the number of burst inputs, shifted bursts versus stacked copies of the
base frame, and the three fusion rules under one budget. Every variant
trains from the same initialization on the same batch schedule, so rows
differ only in the inputs or the fusion rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import EccConfig
from .burstgen import Burst, ShiftDistribution, generate_burst, make_texture
from .decode import DecoderConfig
from .errors import ConfigError
from .imaging import upsample
from .evalstats import psnr, ssim
from .pipeline import init_model
from .train import TrainConfig, evaluate_pairs, prealign_pairs, train

PRESETS = ("burst_count_sweep", "copies_vs_shifted", "fusion_ablation")


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 20
    n_val: int = 5
    n_frames: int = 8
    hr_size: int = 128
    scale: int = 4
    steps: int = 800
    batch: int = 2
    lr0: float = 3e-3
    loss: str = "mae"
    seed: int = 0

    def to_dict(self):
        return {
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_frames": self.n_frames,
            "hr_size": self.hr_size,
            "scale": self.scale,
            "steps": self.steps,
            "batch": self.batch,
            "lr0": self.lr0,
            "loss": self.loss,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def train_config(self):
        return TrainConfig(
            steps=self.steps,
            batch=self.batch,
            lr0=self.lr0,
            loss=self.loss,
            seed=self.seed,
        )


def make_trend_dataset(cfg: ExperimentConfig, copies=False, align_cfg=None,
                       prealign=True):
    """Deterministic synthetic dataset of (burst, HR) pairs, aligned once."""
    dist = ShiftDistribution.zero() if copies else ShiftDistribution()
    train_pairs, val_pairs = [], []
    for k in range(cfg.n_train + cfg.n_val):
        seed = cfg.seed * 100003 + 500 + k
        hr = make_texture(seed, size=cfg.hr_size)
        burst, gt = generate_burst(
            hr, cfg.n_frames, cfg.scale, dist, noise_sigma=0.0, seed=seed
        )
        (train_pairs if k < cfg.n_train else val_pairs).append((burst, gt))
    if prealign:
        train_pairs = prealign_pairs(train_pairs, align_cfg)
        val_pairs = prealign_pairs(val_pairs, align_cfg)
    return train_pairs, val_pairs


def _take_prefix(pairs, n):
    return [(b.prefix(n), gt) for b, gt in pairs]


def _train_variant(train_pairs, val_pairs, cfg: ExperimentConfig, fusion_mode):
    model = init_model(
        DecoderConfig(scale=cfg.scale), fusion_mode, seed=cfg.seed, zero_head=True
    )
    model, report, _ = train(
        train_pairs,
        cfg.train_config(),
        model=model,
        val_pairs=val_pairs,
        prealigned=True,
    )
    final = report.val_records[-1]
    return {
        "psnr_db": final["psnr_db"],
        "ssim": final["ssim"],
        "steps_run": report.steps_run,
        "final_train_loss": report.loss_trace[-1] if report.loss_trace else None,
    }


def _bicubic_row(val_pairs, scale):
    ps, ss = [], []
    for burst, gt in val_pairs:
        up = upsample(burst.base, scale, "bicubic").pixels
        ps.append(psnr(up, gt.pixels))
        ss.append(ssim(up, gt.pixels))
    return {"psnr_db": float(np.mean(ps)), "ssim": float(np.mean(ss))}


def burst_count_sweep(cfg: ExperimentConfig, counts=(1, 4, 8)):
    """Same budget, varying number of burst inputs (prefix of one dataset)."""
    counts = sorted(counts)
    if counts[-1] > cfg.n_frames:
        raise ConfigError("requested burst count exceeds generated frames")
    train_pairs, val_pairs = make_trend_dataset(cfg)
    rows = []
    for n in counts:
        res = _train_variant(
            _take_prefix(train_pairs, n), _take_prefix(val_pairs, n), cfg, "faf"
        )
        rows.append({"burst_inputs": n, **res})
    psnrs = [r["psnr_db"] for r in rows]
    return {
        "preset": "burst_count_sweep",
        "config": cfg.to_dict(),
        "bicubic_baseline": _bicubic_row(val_pairs, cfg.scale),
        "rows": rows,
        "trend": {
            "monotone_nondecreasing": all(
                b >= a for a, b in zip(psnrs, psnrs[1:])
            ),
            "max_minus_min_db": psnrs[-1] - psnrs[0],
        },
    }


def copies_vs_shifted(cfg: ExperimentConfig):
    """Shifted bursts versus the base frame stacked N times, same budget."""
    shifted_train, shifted_val = make_trend_dataset(cfg)
    copies_train, copies_val = make_trend_dataset(cfg, copies=True)
    rows = []
    res_c = _train_variant(copies_train, copies_val, cfg, "faf")
    rows.append({"burst_inputs_data": f"(base frame)x{cfg.n_frames}", **res_c})
    res_s = _train_variant(shifted_train, shifted_val, cfg, "faf")
    rows.append({"burst_inputs_data": f"{cfg.n_frames} burst images", **res_s})
    return {
        "preset": "copies_vs_shifted",
        "config": cfg.to_dict(),
        "rows": rows,
        "trend": {
            "shifted_minus_copies_db": res_s["psnr_db"] - res_c["psnr_db"],
            "shifted_wins": res_s["psnr_db"] > res_c["psnr_db"],
        },
    }


def fusion_ablation(cfg: ExperimentConfig, modes=("vaf", "faf", "faf_star")):
    """VAF vs FAF vs FAF* under identical budgets and inputs."""
    train_pairs, val_pairs = make_trend_dataset(cfg)
    rows = []
    for mode in modes:
        res = _train_variant(train_pairs, val_pairs, cfg, mode)
        rows.append({"alignment": "homography", "fusion": mode,
                     "decoding": "window-attention", **res})
    by_mode = {r["fusion"]: r["psnr_db"] for r in rows}
    return {
        "preset": "fusion_ablation",
        "config": cfg.to_dict(),
        "rows": rows,
        "trend": {
            "faf_minus_vaf_db": by_mode["faf"] - by_mode["vaf"],
            "faf_star_minus_faf_db": by_mode["faf_star"] - by_mode["faf"],
        },
    }


def run_preset(name, cfg: ExperimentConfig):
    if name == "burst_count_sweep":
        return burst_count_sweep(cfg)
    if name == "copies_vs_shifted":
        return copies_vs_shifted(cfg)
    if name == "fusion_ablation":
        return fusion_ablation(cfg)
    raise ConfigError(f"unknown experiment preset {name!r}")
