"""Model assembly, checkpointing, and end-to-end super-resolution.

A model is the extractor plus decoder parameter set with its config and
fusion mode. Checkpoints are a directory holding manifest.json plus one
.bft file per named parameter (and, when present, optimizer moments).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .align import EccConfig, align_burst
from .burstgen import Burst
from .decode import DecoderConfig, DecoderParams, decode
from .errors import FormatError
from .fuse import FUSION_MODES, ExtractorParams, extract_features, fuse
from .imaging import Image
from .tensor import Tensor, read_bft, write_bft

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_SCHEMA_VERSION = 1


@dataclass
class SuperResModel:
    extractor: ExtractorParams
    decoder: DecoderParams
    decoder_cfg: DecoderConfig
    fusion_mode: str = "faf"
    step: int = 0

    def named_parameters(self):
        params = dict(self.extractor.named_tensors())
        params.update(self.decoder.named_tensors())
        return params

    def zero_grads(self):
        for t in self.named_parameters().values():
            t.zero_grad()


def init_model(decoder_cfg: DecoderConfig | None = None, fusion_mode="faf",
               seed=0, zero_head=False) -> SuperResModel:
    cfg = decoder_cfg or DecoderConfig()
    if fusion_mode not in FUSION_MODES:
        raise FormatError(f"unknown fusion mode {fusion_mode!r}")
    return SuperResModel(
        extractor=ExtractorParams.init(channels=cfg.embed_dim, seed=seed),
        decoder=DecoderParams.init(cfg, seed=seed + 1, zero_head=zero_head),
        decoder_cfg=cfg,
        fusion_mode=fusion_mode,
    )


def forward_burst(model: SuperResModel, aligned: Burst, skip=None) -> Tensor:
    """extract -> fuse -> decode on an already aligned burst."""
    fs = extract_features(aligned, model.extractor)
    fused = fuse(fs, model.fusion_mode)
    return decode(fused, model.decoder, model.decoder_cfg, aligned.base, skip=skip)


def superresolve(model: SuperResModel, burst: Burst,
                 ecc_cfg: EccConfig | None = None, align=True) -> Image:
    """Full pipeline: align (optional), extract, fuse, decode."""
    if align and burst.n_frames > 1:
        burst, _ = align_burst(burst, ecc_cfg)
    return Image.from_array(forward_burst(model, burst).data)


def save_checkpoint(ckpt_dir, model: SuperResModel, optimizer_state=None):
    """Write manifest.json plus one .bft per parameter tensor."""
    ckpt_dir = Path(ckpt_dir)
    params_dir = ckpt_dir / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    named = model.named_parameters()
    for name, tensor in named.items():
        write_bft(params_dir / f"{name}.bft", tensor.data)
    optimizer = None
    if optimizer_state is not None:
        opt_dir = ckpt_dir / "optimizer"
        opt_dir.mkdir(parents=True, exist_ok=True)
        moments = []
        for name in named:
            write_bft(opt_dir / f"{name}.m.bft", optimizer_state.m[name])
            write_bft(opt_dir / f"{name}.v.bft", optimizer_state.v[name])
            moments.append(name)
        optimizer = {"type": "adamw", "t": optimizer_state.t, "tensors": moments}
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": "bsrkit-checkpoint",
        "step": model.step,
        "fusion_mode": model.fusion_mode,
        "decoder_config": model.decoder_cfg.to_dict(),
        "extractor": {
            "channels": model.extractor.channels,
            "in_channels": model.extractor.in_channels,
        },
        "parameters": sorted(named),
        "optimizer": optimizer,
    }
    with open(ckpt_dir / CHECKPOINT_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory; returns (model, optimizer_state | None)."""
    from .train import AdamWState  # deferred: train imports pipeline types

    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise FormatError(f"{ckpt_dir}: missing {CHECKPOINT_MANIFEST}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise FormatError(f"{ckpt_dir}: unsupported checkpoint schema version")
    cfg = DecoderConfig.from_dict(manifest["decoder_config"])
    model = init_model(cfg, manifest["fusion_mode"], seed=0)
    model.step = manifest["step"]
    named = model.named_parameters()
    if sorted(named) != manifest["parameters"]:
        raise FormatError(f"{ckpt_dir}: parameter set does not match manifest")
    for name, tensor in named.items():
        arr = read_bft(ckpt_dir / "params" / f"{name}.bft")
        if arr.shape != tensor.data.shape:
            raise FormatError(f"{ckpt_dir}: shape mismatch for {name}")
        tensor.data = arr
    opt_state = None
    if manifest.get("optimizer"):
        opt = manifest["optimizer"]
        opt_state = AdamWState(t=opt["t"], m={}, v={})
        for name in opt["tensors"]:
            opt_state.m[name] = read_bft(ckpt_dir / "optimizer" / f"{name}.m.bft")
            opt_state.v[name] = read_bft(ckpt_dir / "optimizer" / f"{name}.v.bft")
    return model, opt_state
