"""Synthetic low-resolution burst generation with known sub-pixel shifts.

Bursts are built by warping a high-resolution source with near-rigid
transforms *before* area downsampling, so the LR frames genuinely carry
sub-pixel information. Shift magnitudes follow the measured bucket
statistics of real handheld bursts: 50% below 1 HR pixel, 25% in [1, 2),
25% at 2 or more (capped at 4).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .imaging import Homography, Image, downsample, read_png, warp, write_png

BURST_META_NAME = "burst.json"
BURST_SCHEMA_VERSION = 1

SHIFT_BUCKET_EDGES = (0.0, 1.0, 2.0)  # HR pixels; last bucket capped below
DEFAULT_MAX_SHIFT = 4.0


@dataclass(frozen=True)
class ShiftDistribution:
    """Bucketized distribution of inter-frame shift magnitudes (HR pixels)."""

    buckets: tuple = (0.50, 0.25, 0.25)
    rotation_jitter: float = 0.3  # max |rotation| in degrees
    max_shift: float = DEFAULT_MAX_SHIFT
    zero_shift: bool = False  # degenerate copies mode

    def __post_init__(self):
        if len(self.buckets) != 3 or any(p < 0 for p in self.buckets):
            raise ConfigError("shift distribution needs 3 non-negative bucket weights")
        if abs(sum(self.buckets) - 1.0) > 1e-9:
            raise ConfigError("shift bucket probabilities must sum to 1")
        if self.rotation_jitter < 0 or self.max_shift < SHIFT_BUCKET_EDGES[2]:
            raise ConfigError("invalid rotation jitter or shift cap")

    @classmethod
    def zero(cls):
        """All-zero-shift distribution (the copies condition)."""
        return cls(buckets=(1.0, 0.0, 0.0), rotation_jitter=0.0, zero_shift=True)

    def sample_magnitude(self, rng):
        bucket = int(rng.choice(3, p=np.asarray(self.buckets, dtype=np.float64)))
        lo = SHIFT_BUCKET_EDGES[bucket]
        hi = SHIFT_BUCKET_EDGES[bucket + 1] if bucket < 2 else self.max_shift
        return float(rng.uniform(lo, hi))

    def to_dict(self):
        return {
            "buckets": list(self.buckets),
            "rotation_jitter": self.rotation_jitter,
            "max_shift": self.max_shift,
            "zero_shift": self.zero_shift,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            buckets=tuple(d["buckets"]),
            rotation_jitter=d["rotation_jitter"],
            max_shift=d.get("max_shift", DEFAULT_MAX_SHIFT),
            zero_shift=d.get("zero_shift", False),
        )


@dataclass
class Burst:
    """Ordered LR frame sequence; frame 0 is the base/reference frame."""

    frames: list
    scale: int
    true_transforms: list | None = None  # LR-scale Homography per frame
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.frames:
            raise DimensionError("a burst needs at least one frame")
        f0 = self.frames[0]
        for f in self.frames[1:]:
            if (f.channels, f.height, f.width) != (f0.channels, f0.height, f0.width):
                raise DimensionError("all burst frames must share one geometry")
        if self.true_transforms is not None and len(self.true_transforms) != len(
            self.frames
        ):
            raise DimensionError("one true transform per frame required")

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def base(self):
        return self.frames[0]

    def true_shifts_lr(self):
        """Per-frame (dx, dy) displacement of frame content vs the base,
        in LR pixels, evaluated at the frame center. None if unknown."""
        if self.true_transforms is None:
            return None
        cx = (self.base.width - 1) / 2.0
        cy = (self.base.height - 1) / 2.0
        out = []
        for t in self.true_transforms:
            x, y = t.apply(np.array([cx]), np.array([cy]))
            out.append((float(x[0] - cx), float(y[0] - cy)))
        return out

    def prefix(self, n):
        """First n frames as a new burst (metadata sliced to match)."""
        if not 1 <= n <= self.n_frames:
            raise DimensionError(f"prefix length {n} out of range")
        tt = self.true_transforms[:n] if self.true_transforms is not None else None
        return Burst(list(self.frames[:n]), self.scale, tt, self.noise_sigma)


def _sample_transform(dist: ShiftDistribution, rng, hr_h, hr_w) -> Homography:
    """Near-rigid HR-space transform: translation drawn from the bucket
    distribution plus small rotation about the image center."""
    mag = dist.sample_magnitude(rng)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    tx = mag * np.cos(theta)
    ty = mag * np.sin(theta)
    rot = rng.uniform(-dist.rotation_jitter, dist.rotation_jitter)
    cx = (hr_w - 1) / 2.0
    cy = (hr_h - 1) / 2.0
    return Homography.translation(tx, ty).compose(
        Homography.rotation_about(rot, cx, cy)
    )


def generate_burst(hr: Image, n: int, s: int, dist: ShiftDistribution,
                   noise_sigma: float = 0.0, seed: int = 0):
    """Synthesize an n-frame LR burst from an HR image.

    Frame 0 is the clean downsampled HR; later frames are warped in HR
    space, downsampled, and perturbed with Gaussian read noise. Returns
    (burst, hr) with true transforms recorded at the LR scale.
    """
    if n < 1:
        raise DimensionError("burst length must be >= 1")
    if hr.height % s or hr.width % s:
        raise DimensionError(
            f"HR size {hr.height}x{hr.width} not divisible by scale {s}"
        )
    if noise_sigma < 0:
        raise ConfigError("noise sigma must be non-negative")
    rng = np.random.default_rng(seed)
    base = downsample(hr, s)
    frames = [base]
    transforms = [Homography.identity()]
    for _ in range(1, n):
        if dist.zero_shift:
            t_hr = Homography.identity()
            lr = Image(base.pixels.copy())
        else:
            t_hr = _sample_transform(dist, rng, hr.height, hr.width)
            lr = downsample(warp(hr, t_hr), s)
        if noise_sigma > 0:
            noisy = lr.pixels + rng.normal(0.0, noise_sigma, lr.pixels.shape)
            lr = Image.from_array(noisy)
        frames.append(lr)
        transforms.append(t_hr.rescale(1.0 / s))
    return Burst(frames, s, transforms, noise_sigma), hr


def crop_patch_pairs(burst: Burst, hr: Image, patch: int, stride: int):
    """Tile a burst/HR pair into aligned (LR patch, HR patch) pairs.

    Patches are ``patch`` pixels at LR scale and patch*s at HR scale,
    cut at the same LR origins across every frame. True transforms are
    re-expressed in each patch's local coordinates.
    """
    if patch < 1 or stride < 1:
        raise DimensionError("patch and stride must be positive")
    h, w = burst.base.height, burst.base.width
    if patch > h or patch > w:
        raise DimensionError(f"patch {patch} exceeds frame size {h}x{w}")
    s = burst.scale
    pairs = []
    for top in range(0, h - patch + 1, stride):
        for left in range(0, w - patch + 1, stride):
            frames = [
                Image(np.ascontiguousarray(
                    f.pixels[:, top : top + patch, left : left + patch]))
                for f in burst.frames
            ]
            tt = None
            if burst.true_transforms is not None:
                shift_in = Homography.translation(left, top)
                shift_out = Homography.translation(-left, -top)
                tt = [shift_out.compose(t).compose(shift_in)
                      for t in burst.true_transforms]
            hr_patch = Image(np.ascontiguousarray(
                hr.pixels[:, top * s : (top + patch) * s, left * s : (left + patch) * s]
            ))
            pairs.append((Burst(frames, s, tt, burst.noise_sigma), hr_patch))
    return pairs


# -- procedural HR sources ---------------------------------------------


def make_texture(seed: int, size: int = 128, channels: int = 3) -> Image:
    """Procedural HR image with a natural-ish 1/f spectrum.

    Multi-octave smoothed noise plus a few hard-edged rectangles, so the
    result carries both broadband texture (registration-friendly, no
    periodic false optima) and genuine above-Nyquist detail for the LR
    degradation to alias. Normalized into [0.05, 0.95].
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    base = np.zeros((size, size))
    for octave, sigma in enumerate([0.7, 1.5, 3.0, 6.0, 12.0, 24.0]):
        base += gaussian_filter(rng.standard_normal((size, size)), sigma) * (
            1.5**octave
        ) * (0.45 if octave == 0 else 1.0)
    for _ in range(5):
        r0, c0 = rng.integers(0, size - 20, 2)
        rh, cw = rng.integers(10, 40, 2)
        base[r0 : r0 + rh, c0 : c0 + cw] += rng.uniform(-3.0, 3.0)
    # thin bright/dark line segments: strong above-Nyquist detail
    for _ in range(6):
        r0, c0 = rng.integers(4, size - 4, 2)
        length = int(rng.integers(size // 8, size // 2))
        angle = rng.uniform(0.0, np.pi)
        rr = np.clip(np.round(r0 + np.arange(length) * np.sin(angle)), 0, size - 1)
        cc = np.clip(np.round(c0 + np.arange(length) * np.cos(angle)), 0, size - 1)
        base[rr.astype(int), cc.astype(int)] += rng.uniform(-4.0, 4.0)
    lo, hi = base.min(), base.max()
    norm = 0.05 + 0.9 * (base - lo) / (hi - lo)
    if channels == 1:
        return Image.from_array(norm[None])
    planes = np.stack(
        [
            np.clip(norm * rng.uniform(0.9, 1.1) + rng.uniform(-0.04, 0.04), 0, 1)
            for _ in range(3)
        ]
    )
    return Image.from_array(planes)


# -- burst directory format ---------------------------------------------


def save_burst(burst: Burst, out_dir, seed=None, dist: ShiftDistribution | None = None):
    """Write frames as frame_XX.png plus a burst.json sidecar."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(burst.frames):
        write_png(frame, out_dir / f"frame_{i:02d}.png")
    meta = {
        "schema_version": BURST_SCHEMA_VERSION,
        "n_frames": burst.n_frames,
        "scale": burst.scale,
        "noise_sigma": burst.noise_sigma,
        "seed": seed,
        "dist": dist.to_dict() if dist is not None else None,
        "true_transforms": (
            [t.m.tolist() for t in burst.true_transforms]
            if burst.true_transforms is not None
            else None
        ),
        "true_shifts_lr": burst.true_shifts_lr(),
    }
    with open(out_dir / BURST_META_NAME, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def save_dataset_entry(burst, hr, entry_dir, seed=None, dist=None):
    """One dataset entry: a burst directory plus its ground-truth hr.png."""
    meta = save_burst(burst, entry_dir, seed=seed, dist=dist)
    write_png(hr, entry_dir / "hr.png")
    return meta


def load_dataset(root):
    """Load every burst_* entry under ``root`` into (Burst, hr) pairs."""
    entries = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("burst_"))
    if not entries:
        raise FormatError(f"{root}: no burst_* entries found")
    pairs = []
    for entry in entries:
        burst, _ = load_burst(entry)
        hr_path = entry / "hr.png"
        if not hr_path.exists():
            raise FormatError(f"{entry}: missing hr.png ground truth")
        pairs.append((burst, read_png(hr_path)))
    return pairs


def load_burst(burst_dir):
    """Read a burst directory written by save_burst; returns (Burst, meta)."""
    meta_path = burst_dir / BURST_META_NAME
    if not meta_path.exists():
        raise FormatError(f"{burst_dir}: missing {BURST_META_NAME}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != BURST_SCHEMA_VERSION:
        raise FormatError(f"{burst_dir}: unsupported burst schema version")
    frames = []
    for i in range(meta["n_frames"]):
        path = burst_dir / f"frame_{i:02d}.png"
        if not path.exists():
            raise FormatError(f"{burst_dir}: missing frame {path.name}")
        frames.append(read_png(path))
    tt = meta.get("true_transforms")
    transforms = [Homography(np.array(m)) for m in tt] if tt else None
    burst = Burst(frames, meta["scale"], transforms, meta.get("noise_sigma", 0.0))
    return burst, meta
