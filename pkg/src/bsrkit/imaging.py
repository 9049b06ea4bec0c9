"""Image containers, resampling, projective warping, and PNG I/O.

Images are channel-planar float64 arrays (C, H, W) with values in
[0, 1]; every public operation clamps on output. Warping uses inverse
mapping with replicate borders so frame edges never pick up dark
fringes that would pollute downstream affinity statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PilImage

from .errors import DimensionError, FormatError, TransformError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601


@dataclass(frozen=True)
class Image:
    """Channel-planar image, 1 or 3 channels, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] not in (1, 3):
            raise DimensionError(f"image must be (C,H,W) with C in {{1,3}}, got {p.shape}")
        if p.shape[1] < 1 or p.shape[2] < 1:
            raise DimensionError("image extents must be positive")

    @classmethod
    def from_array(cls, arr):
        """Build from any float array-like, clamping into [0, 1]."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
        if not np.isfinite(a).all():
            raise FormatError("image data contains NaN or Inf")
        return cls(np.ascontiguousarray(np.clip(a, 0.0, 1.0)))

    @property
    def channels(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def luma(self):
        """Scalar (H, W) intensity plane; Rec.601 weights for RGB."""
        if self.channels == 1:
            return self.pixels[0].copy()
        r, g, b = self.pixels
        return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform on pixel coordinates (x=col, y=row).

    Normalized so m[2,2] == 1; must be invertible.
    """

    m: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        a = np.asarray(self.m, dtype=np.float64)
        if a.shape != (3, 3):
            raise TransformError(f"homography must be 3x3, got {a.shape}")
        if abs(a[2, 2]) < 1e-12:
            raise TransformError("homography has vanishing normalization element")
        a = a / a[2, 2]
        if abs(np.linalg.det(a)) < 1e-12:
            raise TransformError("homography is singular")
        object.__setattr__(self, "m", np.ascontiguousarray(a))

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    @classmethod
    def rotation_about(cls, degrees, cx, cy):
        """Rotation by ``degrees`` about the point (cx, cy)."""
        th = np.deg2rad(degrees)
        c, s = np.cos(th), np.sin(th)
        m = np.array(
            [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
                [0.0, 0.0, 1.0],
            ]
        )
        return cls(m)

    def inverse(self):
        return Homography(np.linalg.inv(self.m))

    def compose(self, other):
        """self applied after ``other``: (self @ other)(p) = self(other(p))."""
        return Homography(self.m @ other.m)

    def rescale(self, factor):
        """Conjugate into coordinates scaled by ``factor`` (x' = factor * x)."""
        s = np.diag([factor, factor, 1.0])
        s_inv = np.diag([1.0 / factor, 1.0 / factor, 1.0])
        return Homography(s @ self.m @ s_inv)

    def apply(self, xs, ys):
        """Map coordinate arrays; returns (X, Y)."""
        w = self.m[2, 0] * xs + self.m[2, 1] * ys + self.m[2, 2]
        x = (self.m[0, 0] * xs + self.m[0, 1] * ys + self.m[0, 2]) / w
        y = (self.m[1, 0] * xs + self.m[1, 1] * ys + self.m[1, 2]) / w
        return x, y

    def is_identity(self, tol=0.0):
        return np.abs(self.m - np.eye(3)).max() <= tol


# -- sampling kernels --------------------------------------------------


def sample_bilinear(plane, xs, ys):
    """Bilinear sample of an (H, W) plane at float coords, replicate border."""
    h, w = plane.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    top = plane[y0c, x0c] * (1.0 - fx) + plane[y0c, x1c] * fx
    bot = plane[y1c, x0c] * (1.0 - fx) + plane[y1c, x1c] * fx
    return top * (1.0 - fy) + bot * fy


def _cubic_weights(t):
    """Keys cubic convolution weights (a = -0.5) for fractional offset t."""
    a = -0.5
    d = np.stack([t + 1.0, t, 1.0 - t, 2.0 - t])
    ad = np.abs(d)
    w_near = (a + 2.0) * ad**3 - (a + 3.0) * ad**2 + 1.0
    w_far = a * (ad**3 - 5.0 * ad**2 + 8.0 * ad - 4.0)
    return np.where(ad <= 1.0, w_near, np.where(ad < 2.0, w_far, 0.0))


def sample_bicubic(plane, xs, ys):
    """Keys bicubic sample of an (H, W) plane, replicate border."""
    h, w = plane.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    wx = _cubic_weights(fx)  # (4, ...)
    wy = _cubic_weights(fy)
    out = np.zeros_like(xs, dtype=np.float64)
    for j in range(4):
        yj = np.clip(y0 + (j - 1), 0, h - 1)
        row = np.zeros_like(xs, dtype=np.float64)
        for i in range(4):
            xi = np.clip(x0 + (i - 1), 0, w - 1)
            row += wx[i] * plane[yj, xi]
        out += wy[j] * row
    return out


_SAMPLERS = {"bilinear": sample_bilinear, "bicubic": sample_bicubic}


def warp(img: Image, h: Homography, interpolation="bilinear") -> Image:
    """Inverse-mapping warp: output pixel p samples the input at h^-1 p.

    Output size equals input size; out-of-bounds samples replicate the
    nearest border pixel. The exact-identity transform short-circuits to
    a bit-exact copy.
    """
    if interpolation not in _SAMPLERS:
        raise DimensionError(f"unknown interpolation {interpolation!r}")
    if h.is_identity():
        return Image(img.pixels.copy())
    sampler = _SAMPLERS[interpolation]
    inv = h.inverse()
    ys, xs = np.mgrid[0 : img.height, 0 : img.width].astype(np.float64)
    sx, sy = inv.apply(xs, ys)
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        out[c] = sampler(img.pixels[c], sx, sy)
    return Image.from_array(out)


def downsample(img: Image, s: int) -> Image:
    """Area-average pooling over s x s blocks."""
    if s < 1:
        raise DimensionError("scale factor must be >= 1")
    if img.height % s or img.width % s:
        raise DimensionError(
            f"image size {img.height}x{img.width} not divisible by scale {s}"
        )
    if s == 1:
        return Image(img.pixels.copy())
    c, h, w = img.pixels.shape
    blocks = img.pixels.reshape(c, h // s, s, w // s, s)
    return Image.from_array(blocks.mean(axis=(2, 4)))


def upsample(img: Image, s: int, interpolation="bicubic") -> Image:
    """Resample to s x size using half-pixel-centered inverse mapping."""
    if s < 1:
        raise DimensionError("scale factor must be >= 1")
    if s == 1:
        return Image(img.pixels.copy())
    sampler = _SAMPLERS[interpolation]
    ho, wo = img.height * s, img.width * s
    ys, xs = np.mgrid[0:ho, 0:wo].astype(np.float64)
    sx = (xs + 0.5) / s - 0.5
    sy = (ys + 0.5) / s - 0.5
    out = np.empty((img.channels, ho, wo))
    for c in range(img.channels):
        out[c] = sampler(img.pixels[c], sx, sy)
    return Image.from_array(out)


def halve(plane):
    """2x2 area reduction of an (H, W) plane, cropping odd edges."""
    h, w = plane.shape
    h2, w2 = h - h % 2, w - w % 2
    p = plane[:h2, :w2]
    return 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])


# -- PNG I/O -----------------------------------------------------------


def read_png(path) -> Image:
    """Read an 8-bit grayscale or RGB PNG; values map to v / 255."""
    with PilImage.open(path) as pil:
        if pil.mode not in ("L", "RGB"):
            raise FormatError(
                f"{path}: unsupported PNG mode {pil.mode!r} (need 8-bit L or RGB)"
            )
        arr = np.asarray(pil, dtype=np.uint8)
    if arr.ndim == 2:
        planes = arr[None].astype(np.float64)
    else:
        planes = arr.transpose(2, 0, 1).astype(np.float64)
    return Image(np.ascontiguousarray(planes / 255.0))


def write_png(img: Image, path):
    """Write as 8-bit PNG; values map to round(v * 255), clamped."""
    q = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    if img.channels == 1:
        pil = PilImage.fromarray(q[0], mode="L")
    else:
        pil = PilImage.fromarray(q.transpose(1, 2, 0), mode="RGB")
    pil.save(path, format="PNG")
