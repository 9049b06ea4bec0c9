"""Quality metrics (PSNR, SSIM) and GLCM texture statistics.

Metrics are computed directly on the predicted image, never on a
GT-warped version of it. PSNR is capped at 100 dB; SSIM uses the
standard 11x11 Gaussian window (sigma 1.5) over valid positions only.
GLCM features come from a symmetric, normalized co-occurrence matrix;
``energy`` is the square root of the angular second moment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .imaging import Image

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _as_planes(img):
    if isinstance(img, Image):
        return img.pixels
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def psnr(sr, gt) -> float:
    """Peak signal-to-noise ratio in dB at dynamic range 1.0, capped at 100."""
    a, b = _as_planes(sr), _as_planes(gt)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return min(10.0 * np.log10(1.0 / max(mse, _PSNR_MSE_FLOOR)), PSNR_CAP_DB)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = size // 2
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_sums(plane, window):
    """Weighted local sums over every valid window position."""
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(plane, (k, k))
    return np.einsum("ijab,ab->ij", view, window, optimize=True)


def _ssim_plane(a, b, window):
    mu_a = _windowed_sums(a, window)
    mu_b = _windowed_sums(b, window)
    e_aa = _windowed_sums(a * a, window)
    e_bb = _windowed_sums(b * b, window)
    e_ab = _windowed_sums(a * b, window)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(sr, gt) -> float:
    """Mean local SSIM; channels averaged; valid-window positions only."""
    a, b = _as_planes(sr), _as_planes(gt)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[1], a.shape[2]) < SSIM_WINDOW:
        raise DimensionError(
            f"image {a.shape[1]}x{a.shape[2]} smaller than SSIM window {SSIM_WINDOW}"
        )
    window = _gaussian_window()
    return float(np.mean([_ssim_plane(a[c], b[c], window) for c in range(a.shape[0])]))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    per_image: list

    def to_dict(self):
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "per_image": self.per_image,
        }


def metric_report(pairs) -> MetricReport:
    """Aggregate PSNR/SSIM over (name, prediction, ground truth) triples."""
    per_image = []
    for name, pred, gt in pairs:
        per_image.append({"name": name, "psnr_db": psnr(pred, gt), "ssim": ssim(pred, gt)})
    if not per_image:
        raise DimensionError("metric report needs at least one image pair")
    return MetricReport(
        psnr_db=float(np.mean([r["psnr_db"] for r in per_image])),
        ssim=float(np.mean([r["ssim"] for r in per_image])),
        per_image=per_image,
    )


# -- GLCM texture features ----------------------------------------------


@dataclass
class GlcmFeatures:
    contrast: float
    entropy: float
    dissimilarity: float
    correlation: float
    energy: float
    correlation_defined: bool
    levels: int
    offset: tuple

    def to_dict(self):
        return {
            "contrast": self.contrast,
            "entropy": self.entropy,
            "dissimilarity": self.dissimilarity,
            "correlation": self.correlation if self.correlation_defined else None,
            "correlation_defined": self.correlation_defined,
            "energy": self.energy,
            "levels": self.levels,
            "offset": list(self.offset),
        }


def quantize(plane, levels):
    """Map [0, 1] values onto integer bins 0..levels-1 (floor rule)."""
    return np.minimum((plane * levels).astype(np.int64), levels - 1)


def glcm_matrix(img, levels=16, offset=(0, 1)):
    """Symmetric, normalized co-occurrence matrix of the luma plane."""
    if levels < 2:
        raise DimensionError("glcm needs at least 2 gray levels")
    di, dj = offset
    plane = img.luma() if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    q = quantize(plane, levels)
    h, w = q.shape
    if h <= abs(di) or w <= abs(dj):
        raise DimensionError("glcm offset exceeds image extent")
    src = q[max(0, -di) : h - max(0, di), max(0, -dj) : w - max(0, dj)]
    dst = q[max(0, di) : h - max(0, -di), max(0, dj) : w - max(0, -dj)]
    pairs = src * levels + dst
    counts = np.bincount(pairs.reshape(-1), minlength=levels * levels).reshape(
        levels, levels
    )
    sym = counts + counts.T
    return sym / sym.sum()


def glcm_features(img, levels=16, offset=(0, 1)) -> GlcmFeatures:
    """Haralick features from the symmetric normalized GLCM.

    Correlation is undefined (NaN, flag unset) for zero-variance images.
    """
    p = glcm_matrix(img, levels, offset)
    idx = np.arange(levels, dtype=np.float64)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    contrast = float(np.sum(p * (ii - jj) ** 2))
    dissimilarity = float(np.sum(p * np.abs(ii - jj)))
    energy = float(np.sqrt(np.sum(p * p)))
    nz = p[p > 0]
    entropy = float(-np.sum(nz * np.log2(nz)))
    marg = p.sum(axis=1)  # symmetric: row and column marginals agree
    mu = float(np.sum(idx * marg))
    var = float(np.sum((idx - mu) ** 2 * marg))
    if var < 1e-15:
        correlation = float("nan")
        defined = False
    else:
        correlation = float(np.sum(p * (ii - mu) * (jj - mu)) / var)
        defined = True
    return GlcmFeatures(
        contrast=contrast,
        entropy=entropy,
        dissimilarity=dissimilarity,
        correlation=correlation,
        energy=energy,
        correlation_defined=defined,
        levels=levels,
        offset=tuple(offset),
    )


FEATURE_NAMES = ("contrast", "entropy", "dissimilarity", "correlation", "energy")


def diversity_summary(images, levels=16, offset=(0, 1), bins=12):
    """Per-feature histograms and means over a set of images."""
    if not images:
        raise DimensionError("diversity summary needs at least one image")
    feats = [glcm_features(img, levels, offset) for img in images]
    summary = {"levels": levels, "offset": list(offset), "count": len(feats)}
    per_feature = {}
    for name in FEATURE_NAMES:
        values = np.array(
            [
                getattr(f, name)
                for f in feats
                if name != "correlation" or f.correlation_defined
            ]
        )
        if values.size == 0:
            per_feature[name] = {"mean": None, "histogram": None, "defined": 0}
            continue
        lo, hi = float(values.min()), float(values.max())
        if hi - lo < 1e-12:
            edges = np.linspace(lo - 0.5, hi + 0.5, bins + 1)
        else:
            edges = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(values, bins=edges)
        per_feature[name] = {
            "mean": float(values.mean()),
            "histogram": {
                "edges": [float(e) for e in edges],
                "counts": [int(c) for c in counts],
            },
            "defined": int(values.size),
        }
    summary["features"] = per_feature
    return summary
