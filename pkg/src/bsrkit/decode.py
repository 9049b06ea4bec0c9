"""Burst representation decoding.

The fused feature map runs through two cascaded hourglass stages, each
an encoder of three window-attention blocks, a 2x strided-conv
downsample whose transposed-conv upsample re-enters through an additive
skip, and a decoder of three more blocks. A head convolution expands to
3*s^2 channels and pixel shuffle rearranges them into the HR grid; the
bicubic-upsampled base frame is added as a global skip before the final
clamp, so the trunk learns a residual.

Every residual branch ends in a zero-initialized projection (attention
output, feed-forward contraction, hourglass up-convolution), which makes
a freshly initialized trunk the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .imaging import Image, upsample
from .tensor import (
    Tensor,
    add,
    clamp,
    conv2d,
    conv_transpose2d,
    depthwise_conv2d,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int = 16
    window: int = 4
    heads: int = 2
    blocks_per_stage: int = 3
    stages: int = 2
    scale: int = 4
    leff_hidden_ratio: int = 2

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if min(self.window, self.heads, self.blocks_per_stage, self.stages,
               self.scale, self.leff_hidden_ratio) < 1:
            raise ConfigError("decoder config extents must be positive")

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim,
            "window": self.window,
            "heads": self.heads,
            "blocks_per_stage": self.blocks_per_stage,
            "stages": self.stages,
            "scale": self.scale,
            "leff_hidden_ratio": self.leff_hidden_ratio,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LeWinParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    k_b: Tensor
    v_w: Tensor
    v_b: Tensor
    out_w: Tensor
    out_b: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    expand_w: Tensor
    expand_b: Tensor
    depthwise_w: Tensor
    depthwise_b: Tensor
    contract_w: Tensor
    contract_b: Tensor

    @classmethod
    def init(cls, cfg: DecoderConfig, rng):
        c = cfg.embed_dim
        hc = c * cfg.leff_hidden_ratio
        u = lambda *shape, fan: Tensor(
            rng.uniform(-1.0 / np.sqrt(fan), 1.0 / np.sqrt(fan), shape),
            requires_grad=True,
        )
        zeros = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)
        ones = lambda *shape: Tensor(np.ones(shape), requires_grad=True)
        return cls(
            ln1_gamma=ones(c), ln1_beta=zeros(c),
            q_w=u(c, c, fan=c), q_b=zeros(c),
            k_w=u(c, c, fan=c), k_b=zeros(c),
            v_w=u(c, c, fan=c), v_b=zeros(c),
            out_w=zeros(c, c), out_b=zeros(c),  # residual terminal
            ln2_gamma=ones(c), ln2_beta=zeros(c),
            expand_w=u(hc, c, 1, 1, fan=c), expand_b=zeros(hc),
            depthwise_w=u(hc, 3, 3, fan=9), depthwise_b=zeros(hc),
            contract_w=zeros(c, hc, 1, 1), contract_b=zeros(c),  # residual terminal
        )

    def named_tensors(self):
        return {
            "ln1.gamma": self.ln1_gamma, "ln1.beta": self.ln1_beta,
            "attn.q.weight": self.q_w, "attn.q.bias": self.q_b,
            "attn.k.weight": self.k_w, "attn.k.bias": self.k_b,
            "attn.v.weight": self.v_w, "attn.v.bias": self.v_b,
            "attn.out.weight": self.out_w, "attn.out.bias": self.out_b,
            "ln2.gamma": self.ln2_gamma, "ln2.beta": self.ln2_beta,
            "leff.expand.weight": self.expand_w, "leff.expand.bias": self.expand_b,
            "leff.depthwise.weight": self.depthwise_w,
            "leff.depthwise.bias": self.depthwise_b,
            "leff.contract.weight": self.contract_w,
            "leff.contract.bias": self.contract_b,
        }


@dataclass
class HourglassParams:
    enc: list
    dec: list
    down_w: Tensor
    down_b: Tensor
    up_w: Tensor
    up_b: Tensor

    @classmethod
    def init(cls, cfg: DecoderConfig, rng):
        c = cfg.embed_dim
        bound = 1.0 / np.sqrt(c * 9)
        return cls(
            enc=[LeWinParams.init(cfg, rng) for _ in range(cfg.blocks_per_stage)],
            dec=[LeWinParams.init(cfg, rng) for _ in range(cfg.blocks_per_stage)],
            down_w=Tensor(rng.uniform(-bound, bound, (c, c, 3, 3)), requires_grad=True),
            down_b=Tensor(np.zeros(c), requires_grad=True),
            up_w=Tensor(np.zeros((c, c, 2, 2)), requires_grad=True),  # residual terminal
            up_b=Tensor(np.zeros(c), requires_grad=True),
        )

    def named_tensors(self):
        out = {}
        for b, blk in enumerate(self.enc):
            for name, t in blk.named_tensors().items():
                out[f"enc{b}.{name}"] = t
        for b, blk in enumerate(self.dec):
            for name, t in blk.named_tensors().items():
                out[f"dec{b}.{name}"] = t
        out["down.weight"] = self.down_w
        out["down.bias"] = self.down_b
        out["up.weight"] = self.up_w
        out["up.bias"] = self.up_b
        return out


@dataclass
class DecoderParams:
    stages: list
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, cfg: DecoderConfig, seed=0, zero_head=False):
        rng = np.random.default_rng(seed)
        stages = [HourglassParams.init(cfg, rng) for _ in range(cfg.stages)]
        c_out = 3 * cfg.scale * cfg.scale
        if zero_head:
            head_w = Tensor(np.zeros((c_out, cfg.embed_dim, 3, 3)), requires_grad=True)
        else:
            bound = 1.0 / np.sqrt(cfg.embed_dim * 9)
            head_w = Tensor(
                rng.uniform(-bound, bound, (c_out, cfg.embed_dim, 3, 3)),
                requires_grad=True,
            )
        return cls(
            stages=stages,
            head_w=head_w,
            head_b=Tensor(np.zeros(c_out), requires_grad=True),
        )

    def named_tensors(self):
        out = {}
        for s, stage in enumerate(self.stages):
            for name, t in stage.named_tensors().items():
                out[f"decoder.stage{s}.{name}"] = t
        out["decoder.head.weight"] = self.head_w
        out["decoder.head.bias"] = self.head_b
        return out


# -- window helpers ------------------------------------------------------


def window_partition(x: Tensor, w: int) -> Tensor:
    """(C, H, W) -> (num_windows, w*w, C) tokens."""
    c, h, wd = x.shape
    if h % w or wd % w:
        raise DimensionError(f"spatial size {h}x{wd} not divisible by window {w}")
    t = reshape(x, (c, h // w, w, wd // w, w))
    t = transpose(t, (1, 3, 2, 4, 0))
    return reshape(t, ((h // w) * (wd // w), w * w, c))


def window_merge(tokens: Tensor, w: int, h: int, wd: int) -> Tensor:
    """Inverse of window_partition back to (C, H, W)."""
    c = tokens.shape[-1]
    t = reshape(tokens, (h // w, wd // w, w, w, c))
    t = transpose(t, (4, 0, 2, 1, 3))
    return reshape(t, (c, h, wd))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    nw, n, c = x.shape
    t = reshape(x, (nw, n, heads, c // heads))
    return transpose(t, (0, 2, 1, 3))  # (nw, heads, n, dh)


def _merge_heads(x: Tensor) -> Tensor:
    nw, heads, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (nw, n, heads * dh))


def wmsa_attention(tokens: Tensor, p: LeWinParams, cfg: DecoderConfig) -> Tensor:
    """Per-window multi-head attention weights (nw, heads, n, n)."""
    q = _split_heads(add(matmul(tokens, p.q_w), p.q_b), cfg.heads)
    k = _split_heads(add(matmul(tokens, p.k_w), p.k_b), cfg.heads)
    dh = cfg.embed_dim // cfg.heads
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), dh**-0.5)
    return softmax(scores, axis=-1)


def wmsa(x: Tensor, p: LeWinParams, cfg: DecoderConfig) -> Tensor:
    """Window-partitioned multi-head self-attention over (C, H, W)."""
    c, h, wd = x.shape
    tokens = window_partition(x, cfg.window)
    attn = wmsa_attention(tokens, p, cfg)
    v = _split_heads(add(matmul(tokens, p.v_w), p.v_b), cfg.heads)
    out = _merge_heads(matmul(attn, v))
    out = add(matmul(out, p.out_w), p.out_b)
    return window_merge(out, cfg.window, h, wd)


def leff(x: Tensor, p: LeWinParams) -> Tensor:
    """Locally-enhanced feed-forward: pointwise expand, depthwise 3x3,
    pointwise contract, GELU between stages."""
    e = gelu(conv2d(x, p.expand_w, p.expand_b, padding=0))
    d = gelu(depthwise_conv2d(e, p.depthwise_w, p.depthwise_b, padding=1))
    return conv2d(d, p.contract_w, p.contract_b, padding=0)


def lewin_block(x: Tensor, p: LeWinParams, cfg: DecoderConfig) -> Tensor:
    """x + WMSA(LN(x)), then + LeFF(LN(.)); shape preserved."""
    y = add(x, wmsa(layer_norm(x, p.ln1_gamma, p.ln1_beta, axis=0), p, cfg))
    return add(y, leff(layer_norm(y, p.ln2_gamma, p.ln2_beta, axis=0), p))


def hourglass_stage(x: Tensor, p: HourglassParams, cfg: DecoderConfig) -> Tensor:
    """Encoder blocks, 2x down/up residual branch, skip add, decoder blocks."""
    c, h, wd = x.shape
    if h % (2 * cfg.window) or wd % (2 * cfg.window):
        raise DimensionError(
            f"spatial size {h}x{wd} must be divisible by 2*window={2 * cfg.window}"
        )
    e = x
    for blk in p.enc:
        e = lewin_block(e, blk, cfg)
    d = conv2d(e, p.down_w, p.down_b, padding=1, stride=2)
    u = conv_transpose2d(d, p.up_w, p.up_b, stride=2)
    y = add(e, u)
    for blk in p.dec:
        y = lewin_block(y, blk, cfg)
    return y


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(r^2*c, H, W) -> (c, rH, rW); out[ch, r*i+a, r*j+b] = in[ch*r^2+a*r+b, i, j]."""
    c, h, w = x.shape
    if c % (r * r):
        raise DimensionError(f"channel count {c} not divisible by r^2={r * r}")
    if r == 1:
        return x
    cout = c // (r * r)
    t = reshape(x, (cout, r, r, h, w))
    t = transpose(t, (0, 3, 1, 4, 2))
    return reshape(t, (cout, r * h, r * w))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse rearrangement: (c, rH, rW) -> (r^2*c, H, W)."""
    c, h, w = x.shape
    if h % r or w % r:
        raise DimensionError(f"spatial size {h}x{w} not divisible by r={r}")
    if r == 1:
        return x
    t = reshape(x, (c, h // r, r, w // r, r))
    t = transpose(t, (0, 2, 4, 1, 3))
    return reshape(t, (c * r * r, h // r, w // r))


def bicubic_skip(base: Image, scale: int) -> Tensor:
    """Constant global-skip tensor: bicubic upsample of the base frame."""
    return Tensor(upsample(base, scale, "bicubic").pixels)


def decode(m: Tensor, params: DecoderParams, cfg: DecoderConfig, base: Image,
           skip: Tensor | None = None) -> Tensor:
    """Fused features -> clamped HR prediction (3, s*H, s*W).

    ``base`` is the burst's base frame; its bicubic upsample enters
    through the global skip, so the trunk predicts a residual. Pass a
    precomputed ``skip`` to avoid resampling per call.
    """
    if m.shape[0] != cfg.embed_dim:
        raise DimensionError(
            f"fused map has {m.shape[0]} channels, config expects {cfg.embed_dim}"
        )
    x = m
    for stage in params.stages:
        x = hourglass_stage(x, stage, cfg)
    head = conv2d(x, params.head_w, params.head_b, padding=1)
    hr = pixel_shuffle(head, cfg.scale)
    if skip is None:
        skip = bicubic_skip(base, cfg.scale)
    return clamp(add(hr, skip), 0.0, 1.0)


def decode_to_image(m, params, cfg, base) -> Image:
    return Image.from_array(decode(m, params, cfg, base).data)
