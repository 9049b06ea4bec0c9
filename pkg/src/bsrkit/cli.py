"""Command-line entry point: ``bsrkit <subcommand>``.

Subcommands wire the pipeline end to end. Every command takes --out and
writes only beneath it; results are canonical JSON whose only
non-reproducible field is the top-level ``timestamp_utc``. Failures
print a JSON error object to stderr and exit with the error's code.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .align import EccConfig, align_burst, measure_shifts, shift_histogram
from .burstgen import (
    Burst,
    ShiftDistribution,
    generate_burst,
    load_burst,
    load_dataset,
    make_texture,
    save_dataset_entry,
)
from .decode import DecoderConfig
from .errors import BsrError, ConfigError, FormatError
from .evalstats import diversity_summary, metric_report
from .experiments import PRESETS, ExperimentConfig, run_preset
from .fuse import FUSION_MODES, ExtractorParams, extract_features, fuse, fusion_weight_maps
from .imaging import Image, read_png, write_png
from .pipeline import init_model, load_checkpoint, save_checkpoint, superresolve
from .tensor import write_bft
from .train import TrainConfig, evaluate_pairs, prealign_pairs, train
from .util import dump_json

CONFIG_SCHEMA_VERSION = 1

_SECTION_FIELDS = {
    "align": {f.name for f in dataclass_fields(EccConfig)},
    "decode": {f.name for f in dataclass_fields(DecoderConfig)},
    "train": {f.name for f in dataclass_fields(TrainConfig)},
    "experiment": {f.name for f in dataclass_fields(ExperimentConfig)},
    "generate": {
        "frames", "scale", "noise_sigma", "buckets", "rotation_jitter",
        "zero_shift", "size", "count",
    },
    "fuse": {"mode", "channels"},
}


def load_pipeline_config(path):
    """Validated merged config: schema version checked, unknown keys rejected."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    version = raw.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}"
        )
    for key, section in raw.items():
        if key == "schema_version":
            continue
        if key not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        unknown = set(section) - _SECTION_FIELDS[key]
        if unknown:
            raise ConfigError(
                f"unknown keys in config section {key!r}: {sorted(unknown)}"
            )
    return raw


def _section(config, name, builder, **overrides):
    data = dict(config.get(name, {})) if config else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return builder(data)


def _timestamp():
    return datetime.now(timezone.utc).isoformat()


def _write_report(out_dir, name, payload):
    payload = {"timestamp_utc": _timestamp(), **payload}
    dump_json(payload, Path(out_dir) / name)
    return payload


def _load_model(args, decoder_cfg=None, fusion_mode=None):
    if getattr(args, "checkpoint", None):
        model, _ = load_checkpoint(Path(args.checkpoint))
        if fusion_mode:
            model.fusion_mode = fusion_mode
        return model
    return init_model(decoder_cfg, fusion_mode or "faf", seed=args.seed, zero_head=True)


# -- subcommands ---------------------------------------------------------


def cmd_generate(args, config):
    gen = dict(config.get("generate", {})) if config else {}
    frames = args.frames if args.frames is not None else gen.get("frames", 8)
    scale = args.scale if args.scale is not None else gen.get("scale", 4)
    sigma = args.noise_sigma if args.noise_sigma is not None else gen.get("noise_sigma", 0.0)
    size = args.size if args.size is not None else gen.get("size", 128)
    count = args.count if args.count is not None else gen.get("count", 1)
    zero_shift = args.zero_shift or gen.get("zero_shift", False)
    if zero_shift:
        dist = ShiftDistribution.zero()
    else:
        dist = ShiftDistribution(
            buckets=tuple(gen.get("buckets", (0.50, 0.25, 0.25))),
            rotation_jitter=gen.get("rotation_jitter", 0.3),
        )
    out = Path(args.out)
    entries = []
    for i in range(count):
        seed = args.seed + i
        if args.hr:
            hr = read_png(Path(args.hr))
        else:
            hr = make_texture(seed, size=size)
        burst, gt = generate_burst(hr, frames, scale, dist, sigma, seed=seed)
        entry = out / f"burst_{i:04d}"
        save_dataset_entry(burst, gt, entry, seed=seed, dist=dist)
        entries.append(
            {
                "path": entry.name,
                "seed": seed,
                "n_frames": burst.n_frames,
                "true_shifts_lr": burst.true_shifts_lr(),
            }
        )
    report = {
        "command": "generate",
        "scale": scale,
        "noise_sigma": sigma,
        "dist": dist.to_dict(),
        "entries": entries,
    }
    _write_report(out, "generate_report.json", report)
    return 0


def cmd_align(args, config):
    cfg = _section(config, "align", lambda d: EccConfig(**d))
    burst, meta = load_burst(Path(args.burst))
    aligned, results = align_burst(burst, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(aligned.frames):
        write_png(frame, out / f"aligned_{i:02d}.png")
    report = {
        "command": "align",
        "burst": Path(args.burst).name,
        "motion_model": cfg.motion_model,
        "frames": [
            {
                "frame": i,
                "homography": res.homography.m.tolist(),
                "final_ecc": res.final_ecc,
                "iterations_used": res.iterations_used,
                "converged": res.converged,
            }
            for i, res in enumerate(results)
        ],
    }
    _write_report(out, "align_report.json", report)
    return 0


def cmd_fuse(args, config):
    fuse_cfg = dict(config.get("fuse", {})) if config else {}
    mode = args.mode or fuse_cfg.get("mode", "faf")
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    burst, _ = load_burst(Path(args.burst))
    if args.align:
        cfg = _section(config, "align", lambda d: EccConfig(**d))
        burst, _ = align_burst(burst, cfg)
    if args.checkpoint:
        model, _ = load_checkpoint(Path(args.checkpoint))
        extractor = model.extractor
    else:
        channels = fuse_cfg.get("channels", 16)
        extractor = ExtractorParams.init(channels=channels, seed=args.seed)
    fs = extract_features(burst, extractor)
    fused = fuse(fs, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bft(out / "fused.bft", fused.data)
    maps = fusion_weight_maps(fs, mode)
    for i, m in enumerate(maps):
        write_bft(out / f"weight_{i:02d}.bft", m.data)
        if args.heatmaps:
            lo, hi = m.data.min(), m.data.max()
            span = hi - lo if hi > lo else 1.0
            write_png(Image.from_array(((m.data - lo) / span)[None]),
                      out / f"weight_{i:02d}.png")
    report = {
        "command": "fuse",
        "mode": mode,
        "n_frames": burst.n_frames,
        "fused_shape": list(fused.shape),
        "weight_maps": [f"weight_{i:02d}.bft" for i in range(len(maps))],
    }
    _write_report(out, "fuse_report.json", report)
    return 0


def cmd_superresolve(args, config):
    burst, _ = load_burst(Path(args.burst))
    decoder_cfg = _section(config, "decode", lambda d: DecoderConfig(**d))
    model = _load_model(args, decoder_cfg)
    ecc_cfg = _section(config, "align", lambda d: EccConfig(**d))
    sr = superresolve(model, burst, ecc_cfg, align=not args.no_align)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(sr, out / "sr.png")
    report = {
        "command": "superresolve",
        "burst": Path(args.burst).name,
        "aligned": not args.no_align,
        "checkpoint": Path(args.checkpoint).name if args.checkpoint else None,
        "fusion_mode": model.fusion_mode,
        "output": "sr.png",
        "output_size": [sr.channels, sr.height, sr.width],
    }
    if args.gt:
        from .evalstats import psnr, ssim

        gt = read_png(Path(args.gt))
        report["psnr_db"] = psnr(sr, gt)
        report["ssim"] = ssim(sr, gt)
    _write_report(out, "superresolve_report.json", report)
    return 0


def cmd_train(args, config):
    train_cfg = _section(config, "train", lambda d: TrainConfig(**{**d, "seed": d.get("seed", args.seed)}))
    decoder_cfg = _section(config, "decode", lambda d: DecoderConfig(**d))
    ecc_cfg = _section(config, "align", lambda d: EccConfig(**d))
    fusion_mode = args.fusion_mode or (config.get("fuse", {}).get("mode", "faf") if config else "faf")
    pairs = load_dataset(Path(args.data))
    val_pairs = load_dataset(Path(args.val_data)) if args.val_data else None
    model = init_model(decoder_cfg, fusion_mode, seed=train_cfg.seed, zero_head=True)
    model, report, state = train(
        pairs, train_cfg, model=model, val_pairs=val_pairs, align_cfg=ecc_cfg
    )
    out = Path(args.out)
    save_checkpoint(out / "checkpoint", model, optimizer_state=state)
    payload = {
        "command": "train",
        "fusion_mode": fusion_mode,
        "train_config": train_cfg.to_dict(),
        "decoder_config": decoder_cfg.to_dict(),
        "n_pairs": len(pairs),
        "report": report.to_dict(),
        "checkpoint": "checkpoint",
    }
    # wall time is environment noise, not a result
    payload["report"]["wall_time_seconds"] = round(payload["report"]["wall_time_seconds"], 6)
    wall = payload["report"].pop("wall_time_seconds")
    payload["wall_time_seconds"] = wall
    _write_report(out, "train_report.json", payload)
    return 0


def cmd_evaluate(args, config):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names = sorted(p.name for p in pred_dir.glob("*.png"))
    if not names:
        raise FormatError(f"{pred_dir}: no PNG predictions found")
    triples = []
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            raise FormatError(f"{gt_dir}: missing ground truth for {name}")
        triples.append((name, read_png(pred_dir / name), read_png(gt_path)))
    rep = metric_report(triples)
    out = Path(args.out)
    payload = {"command": "evaluate", "pred": pred_dir.name, "gt": gt_dir.name,
               **rep.to_dict()}
    _write_report(out, "evaluate_report.json", payload)
    print(json.dumps({"psnr_db": rep.psnr_db, "ssim": rep.ssim}))
    return 0


def cmd_analyze(args, config):
    out = Path(args.out)
    if args.shifts:
        cfg = _section(config, "align", lambda d: EccConfig(**d))
        burst, meta = load_burst(Path(args.shifts))
        shifts = measure_shifts(burst, cfg)
        hist = shift_histogram(shifts, burst.scale)
        payload = {
            "command": "analyze",
            "kind": "shifts",
            "burst": Path(args.shifts).name,
            "scale": burst.scale,
            "measured_shifts_lr": [list(s) for s in shifts],
            "histogram": hist,
        }
        true_shifts = meta.get("true_shifts_lr")
        if true_shifts:
            errors = [
                float(np.hypot(ex - tx, ey - ty))
                for (ex, ey), (tx, ty) in zip(shifts, (s for s in true_shifts[1:]))
            ]
            payload["true_shift_errors_lr"] = errors
        _write_report(out, "analyze_report.json", payload)
        return 0
    if args.glcm:
        image_dir = Path(args.glcm)
        names = sorted(p for p in image_dir.glob("*.png"))
        if not names:
            raise FormatError(f"{image_dir}: no PNG images found")
        images = [read_png(p) for p in names]
        payload = {
            "command": "analyze",
            "kind": "glcm",
            "images": [p.name for p in names],
            "diversity": diversity_summary(images),
        }
        _write_report(out, "analyze_report.json", payload)
        return 0
    raise ConfigError("analyze requires --shifts or --glcm")


def cmd_experiment(args, config):
    cfg = _section(config, "experiment",
                   lambda d: ExperimentConfig(**{**d, "seed": d.get("seed", args.seed)}))
    result = run_preset(args.preset, cfg)
    out = Path(args.out)
    _write_report(out, "experiment_report.json", {"command": "experiment", **result})
    return 0


# -- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bsrkit",
        description="Burst-image super-resolution toolkit",
    )
    parser.add_argument("--version", action="version", version=f"bsrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="pipeline config JSON")

    p = sub.add_parser("generate", help="synthesize LR bursts with known shifts")
    common(p)
    p.add_argument("--hr", help="source HR PNG (default: procedural texture)")
    p.add_argument("--size", type=int, help="procedural HR size (default 128)")
    p.add_argument("--frames", type=int, help="frames per burst (default 8)")
    p.add_argument("--scale", type=int, help="downsampling factor (default 4)")
    p.add_argument("--noise-sigma", type=float, help="LR read-noise sigma")
    p.add_argument("--count", type=int, help="number of bursts (default 1)")
    p.add_argument("--zero-shift", action="store_true", help="copies mode")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("align", help="register a burst onto its base frame")
    common(p)
    p.add_argument("--burst", required=True, help="burst directory")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("fuse", help="extract features and fuse a burst")
    common(p)
    p.add_argument("--burst", required=True)
    p.add_argument("--mode", choices=FUSION_MODES)
    p.add_argument("--checkpoint", help="load extractor weights from checkpoint")
    p.add_argument("--align", action="store_true", help="align before fusing")
    p.add_argument("--heatmaps", action="store_true", help="also write PNG heatmaps")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("superresolve", help="full pipeline to an HR prediction")
    common(p)
    p.add_argument("--burst", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--gt", help="optional ground-truth PNG for metrics")
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_superresolve)

    p = sub.add_parser("train", help="fit extractor + decoder on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset dir of burst_* entries")
    p.add_argument("--val-data", help="validation dataset dir")
    p.add_argument("--fusion-mode", choices=FUSION_MODES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of predictions vs ground truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="shift statistics or GLCM diversity")
    common(p)
    p.add_argument("--shifts", help="burst directory to measure shifts on")
    p.add_argument("--glcm", help="directory of PNGs for texture statistics")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="run a trend-study preset")
    common(p)
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_pipeline_config(args.config) if args.config else None
        return args.func(args, config)
    except BsrError as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc),
                           "exit_code": exc.exit_code}}
        print(json.dumps(error), file=sys.stderr)
        return exc.exit_code


def console_entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
