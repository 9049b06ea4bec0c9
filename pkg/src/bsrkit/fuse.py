"""Affinity-based burst fusion.

Per-frame features come from a two-layer convolutional extractor. The
affinity map between frames i and j is the per-pixel channel dot
product of their features. Three fusion rules are provided:

* vanilla (VAF):   M = sum_i A[0,i] * F_i
* federated (FAF): M = A[0,0] * F_0 + sum_{i>0} (A[0,i] - A[0,0]) * F_i
* federated-star:  the FAF sum repeated with every frame as reference

Difference maps are signed and unnormalized; the federated rule's cross
terms factor exactly as ((F_i - F_0) . F_0) * F_i, which is checked by
a dedicated dual-path implementation. Everything is differentiable
w.r.t. the extractor parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .burstgen import Burst
from .errors import ConfigError, DimensionError
from .imaging import Image
from .tensor import Tensor, add, conv2d, mul, relu, softmax, sub, tensor_sum

FUSION_MODES = ("vaf", "faf", "faf_star")


@dataclass
class ExtractorParams:
    """Two 3x3 conv layers (in -> C, activation, C -> C), padding 1."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    channels: int = 16
    in_channels: int = 3
    version: int = 0

    @classmethod
    def init(cls, channels=16, in_channels=3, seed=0):
        rng = np.random.default_rng(seed)

        def uniform(*shape):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

        return cls(
            conv1_w=uniform(channels, in_channels, 3, 3),
            conv1_b=Tensor(np.zeros(channels), requires_grad=True),
            conv2_w=uniform(channels, channels, 3, 3),
            conv2_b=Tensor(np.zeros(channels), requires_grad=True),
            channels=channels,
            in_channels=in_channels,
        )

    def named_tensors(self):
        return {
            "extractor.conv1.weight": self.conv1_w,
            "extractor.conv1.bias": self.conv1_b,
            "extractor.conv2.weight": self.conv2_w,
            "extractor.conv2.bias": self.conv2_b,
        }


@dataclass
class FeatureStack:
    """Per-frame feature tensors F_i, all sharing one (C, H, W) shape."""

    features: list
    produced_by: int = 0

    def __post_init__(self):
        if not self.features:
            raise DimensionError("feature stack needs at least one frame")
        shape = self.features[0].shape
        for f in self.features[1:]:
            if f.shape != shape:
                raise DimensionError("all feature maps must share one shape")

    @property
    def n(self):
        return len(self.features)

    @property
    def shape(self):
        return self.features[0].shape


def extract_features(burst, params: ExtractorParams) -> FeatureStack:
    """F_i = conv2(relu(conv1(frame_i))) on aligned, equal-sized frames."""
    frames = burst.frames if isinstance(burst, Burst) else list(burst)
    features = []
    for frame in frames:
        x = Tensor(frame.pixels) if isinstance(frame, Image) else frame
        if x.shape[0] != params.in_channels:
            raise DimensionError(
                f"extractor expects {params.in_channels} channels, got {x.shape[0]}"
            )
        h = relu(conv2d(x, params.conv1_w, params.conv1_b, padding=1))
        features.append(conv2d(h, params.conv2_w, params.conv2_b, padding=1))
    return FeatureStack(features, produced_by=params.version)


def affinity(fs: FeatureStack, i: int, j: int) -> Tensor:
    """Per-pixel channel dot product A[i,j] = F_i . F_j, shape (H, W)."""
    n = fs.n
    if not (0 <= i < n and 0 <= j < n):
        raise DimensionError(f"affinity indices ({i},{j}) out of range for {n} frames")
    return tensor_sum(mul(fs.features[i], fs.features[j]), axis=0)


def fuse_vaf(fs: FeatureStack) -> Tensor:
    """Vanilla fusion: every frame weighted by its affinity to the base."""
    out = mul(affinity(fs, 0, 0), fs.features[0])
    for i in range(1, fs.n):
        out = add(out, mul(affinity(fs, 0, i), fs.features[i]))
    return out


def difference_maps(fs: FeatureStack):
    """Signed maps D_0 = A[0,0]; D_i = A[0,i] - A[0,0] for i > 0."""
    a00 = affinity(fs, 0, 0)
    maps = [a00]
    for i in range(1, fs.n):
        maps.append(sub(affinity(fs, 0, i), a00))
    return maps


def fuse_faf(fs: FeatureStack) -> Tensor:
    """Federated fusion: base self-affinity term plus signed-difference
    weighted frame-specific terms."""
    maps = difference_maps(fs)
    out = mul(maps[0], fs.features[0])
    for i in range(1, fs.n):
        out = add(out, mul(maps[i], fs.features[i]))
    return out


def fuse_faf_factored(fs: FeatureStack) -> Tensor:
    """Same fusion via the Euclidean factorization of the cross terms:
    M = A[0,0]*F_0 + sum_{i>0} ((F_i - F_0) . F_0) * F_i."""
    f0 = fs.features[0]
    out = mul(affinity(fs, 0, 0), f0)
    for i in range(1, fs.n):
        fi = fs.features[i]
        weight = tensor_sum(mul(sub(fi, f0), f0), axis=0)
        out = add(out, mul(weight, fi))
    return out


def fuse_faf_star(fs: FeatureStack) -> Tensor:
    """Federated fusion summed over every frame taken as the reference."""
    out = None
    for k in range(fs.n):
        akk = affinity(fs, k, k)
        term = mul(akk, fs.features[k])
        for i in range(fs.n):
            if i == k:
                continue
            term = add(term, mul(sub(affinity(fs, k, i), akk), fs.features[i]))
        out = term if out is None else add(out, term)
    return out


def fusion_weight_maps(fs: FeatureStack, mode: str):
    """The per-frame (H, W) weight maps each fusion rule actually applies.

    Recomposing sum_i map_i * F_i reproduces the fused output exactly.
    """
    if mode == "vaf":
        return [affinity(fs, 0, i) for i in range(fs.n)]
    if mode == "faf":
        return difference_maps(fs)
    if mode == "faf_star":
        maps = []
        for i in range(fs.n):
            w = affinity(fs, i, i)
            for k in range(fs.n):
                if k == i:
                    continue
                w = add(w, sub(affinity(fs, k, i), affinity(fs, k, k)))
            maps.append(w)
        return maps
    raise ConfigError(f"unknown fusion mode {mode!r}")


def fuse(fs: FeatureStack, mode: str, normalize_weights=False) -> Tensor:
    """Dispatch on fusion mode.

    ``normalize_weights`` is an ablation-only toggle (off by default):
    it softmaxes the weight maps across frames before recombination.
    """
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    if normalize_weights:
        from .tensor import reshape

        # build an (N, H, W) stack, softmax over the frame axis, recombine
        maps = fusion_weight_maps(fs, mode)
        h, w = maps[0].shape
        rows = [reshape(m, (1, h, w)) for m in maps]
        stack = rows[0]
        for r in rows[1:]:
            stack = _concat0(stack, r)
        weights = softmax(stack, axis=0)
        out = None
        for i in range(fs.n):
            term = mul(_take0(weights, i, h, w), fs.features[i])
            out = term if out is None else add(out, term)
        return out
    if mode == "vaf":
        return fuse_vaf(fs)
    if mode == "faf":
        return fuse_faf(fs)
    return fuse_faf_star(fs)


def _concat0(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 0 (internal, differentiable)."""
    from .tensor import _make

    na = a.shape[0]

    def rule(g):
        return g[:na], g[na:]

    return _make(np.concatenate([a.data, b.data], axis=0), (a, b), rule)


def _take0(x: Tensor, i: int, h: int, w: int) -> Tensor:
    """Select slice i along axis 0 (internal, differentiable)."""
    from .tensor import _make

    def rule(g):
        out = np.zeros_like(x.data)
        out[i] = g
        return (out,)

    return _make(x.data[i], (x,), rule)
