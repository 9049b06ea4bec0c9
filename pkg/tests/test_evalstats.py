import numpy as np
import pytest

from bsrkit import evalstats
from bsrkit.errors import DimensionError
from bsrkit.evalstats import (
    diversity_summary,
    glcm_features,
    glcm_matrix,
    metric_report,
    psnr,
    ssim,
)
from bsrkit.imaging import Image


def rand_image(rng, c=3, h=24, w=24):
    return Image.from_array(rng.random((c, h, w)))


class TestPsnr:
    def test_identical_hits_cap(self, rng):
        img = rand_image(rng)
        assert psnr(img, img) == 100.0

    def test_constant_difference_exact(self):
        a = Image.from_array(np.full((3, 8, 8), 0.5))
        b = Image.from_array(np.full((3, 8, 8), 0.6))
        assert abs(psnr(a, b) - 20.0) < 1e-12

    def test_matches_direct_formula(self, rng):
        a, b = rand_image(rng), rand_image(rng)
        mse = np.mean((a.pixels - b.pixels) ** 2)
        assert abs(psnr(a, b) - 10.0 * np.log10(1.0 / mse)) < 1e-9

    def test_symmetry(self, rng):
        a, b = rand_image(rng), rand_image(rng)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            psnr(rand_image(rng, h=8), rand_image(rng, h=9))


def ssim_loop_oracle(a, b):
    """Direct sliding-window implementation of the standard SSIM formula."""
    window = np.outer(*(2 * [np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5**2))]))
    window = window / window.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for c in range(a.shape[0]):
        pa, pb = a[c], b[c]
        h, w = pa.shape
        for i in range(h - 10):
            for j in range(w - 10):
                wa = pa[i : i + 11, j : j + 11]
                wb = pb[i : i + 11, j : j + 11]
                mu_a = (window * wa).sum()
                mu_b = (window * wb).sum()
                var_a = (window * wa * wa).sum() - mu_a**2
                var_b = (window * wb * wb).sum() - mu_b**2
                cov = (window * wa * wb).sum() - mu_a * mu_b
                num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
                vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        img = rand_image(rng, h=16, w=16)
        assert abs(ssim(img, img) - 1.0) < 1e-9

    def test_inverted_binary_is_negative(self, rng):
        bits = (np.random.default_rng(5).random((1, 16, 16)) > 0.5).astype(float)
        a = Image.from_array(bits)
        b = Image.from_array(1.0 - bits)
        assert ssim(a, b) < 0.0

    def test_matches_loop_oracle(self, rng):
        a = rand_image(rng, c=1, h=14, w=14)
        b = rand_image(rng, c=1, h=14, w=14)
        assert abs(ssim(a, b) - ssim_loop_oracle(a.pixels, b.pixels)) < 1e-6

    def test_matches_loop_oracle_rgb(self, rng):
        a = rand_image(rng, c=3, h=12, w=13)
        b = rand_image(rng, c=3, h=12, w=13)
        assert abs(ssim(a, b) - ssim_loop_oracle(a.pixels, b.pixels)) < 1e-6

    def test_too_small_rejected(self, rng):
        with pytest.raises(DimensionError):
            ssim(rand_image(rng, h=8, w=8), rand_image(rng, h=8, w=8))


class TestGlcm:
    def test_constant_image(self):
        img = Image.from_array(np.full((1, 8, 8), 0.4))
        f = glcm_features(img, levels=16)
        assert f.contrast == 0.0
        assert f.dissimilarity == 0.0
        assert f.energy == 1.0
        assert f.entropy == 0.0
        assert not f.correlation_defined
        assert np.isnan(f.correlation)

    def test_checkerboard_hand_values(self):
        ys, xs = np.mgrid[0:8, 0:8]
        checker = ((ys + xs) % 2).astype(np.float64)
        img = Image.from_array(checker[None])
        m = glcm_matrix(img, levels=2, offset=(0, 1))
        assert np.allclose(m, [[0.0, 0.5], [0.5, 0.0]], atol=1e-12)
        f = glcm_features(img, levels=2, offset=(0, 1))
        assert f.contrast == 1.0
        assert f.dissimilarity == 1.0
        assert abs(f.energy - np.sqrt(0.5)) < 1e-12
        assert abs(f.entropy - 1.0) < 1e-12
        assert abs(f.correlation + 1.0) < 1e-12

    def test_matrix_is_normalized_and_symmetric(self, rng):
        img = rand_image(rng, c=1)
        m = glcm_matrix(img, levels=16)
        assert abs(m.sum() - 1.0) < 1e-12
        assert np.allclose(m, m.T, atol=1e-15)

    def test_features_match_loop_oracle(self, rng):
        img = rand_image(rng, c=1, h=12, w=12)
        levels = 8
        f = glcm_features(img, levels=levels, offset=(0, 1))

        q = np.minimum((img.pixels[0] * levels).astype(int), levels - 1)
        counts = np.zeros((levels, levels))
        h, w = q.shape
        for i in range(h):
            for j in range(w - 1):
                counts[q[i, j], q[i, j + 1]] += 1
                counts[q[i, j + 1], q[i, j]] += 1
        p = counts / counts.sum()
        contrast = sum(
            p[a, b] * (a - b) ** 2 for a in range(levels) for b in range(levels)
        )
        dissim = sum(
            p[a, b] * abs(a - b) for a in range(levels) for b in range(levels)
        )
        energy = np.sqrt((p**2).sum())
        entropy = -sum(
            p[a, b] * np.log2(p[a, b])
            for a in range(levels)
            for b in range(levels)
            if p[a, b] > 0
        )
        marg = p.sum(axis=1)
        mu = sum(a * marg[a] for a in range(levels))
        var = sum((a - mu) ** 2 * marg[a] for a in range(levels))
        corr = sum(
            p[a, b] * (a - mu) * (b - mu) for a in range(levels) for b in range(levels)
        ) / var
        assert abs(f.contrast - contrast) < 1e-9
        assert abs(f.dissimilarity - dissim) < 1e-9
        assert abs(f.energy - energy) < 1e-9
        assert abs(f.entropy - entropy) < 1e-9
        assert abs(f.correlation - corr) < 1e-9

    def test_entropy_bounds_and_energy_range(self, rng):
        for levels in (4, 16):
            img = rand_image(rng, c=1)
            f = glcm_features(img, levels=levels)
            assert 0.0 <= f.entropy <= 2.0 * np.log2(levels)
            assert 0.0 < f.energy <= 1.0

    def test_entropy_monotone_in_levels(self, rng):
        img = rand_image(rng, c=1, h=20, w=20)
        e8 = glcm_features(img, levels=8).entropy
        e16 = glcm_features(img, levels=16).entropy
        e32 = glcm_features(img, levels=32).entropy
        assert e16 >= e8 - 1e-12
        assert e32 >= e16 - 1e-12

    def test_rgb_uses_luma(self, rng):
        img = rand_image(rng, c=3)
        f = glcm_features(img)
        g = glcm_features(Image.from_array(img.luma()[None]))
        assert abs(f.contrast - g.contrast) < 1e-12


class TestDiversity:
    def test_single_constant_image(self):
        img = Image.from_array(np.full((1, 8, 8), 0.25))
        s = diversity_summary([img])
        assert s["count"] == 1
        assert s["features"]["contrast"]["mean"] == 0.0
        assert s["features"]["correlation"]["defined"] == 0

    def test_duplicated_image_mass_at_one_point(self, rng):
        img = rand_image(rng, c=1)
        s = diversity_summary([img] * 5)
        hist = s["features"]["contrast"]["histogram"]["counts"]
        assert sum(1 for c in hist if c > 0) == 1
        assert sum(hist) == 5

    def test_checker_contrast_exceeds_blur(self, rng):
        from scipy.ndimage import gaussian_filter

        ys, xs = np.mgrid[0:16, 0:16]
        checkers = [
            Image.from_array((((ys + xs + k) % 2).astype(float))[None])
            for k in range(3)
        ]
        blurred = [
            Image.from_array(
                gaussian_filter(np.random.default_rng(k).random((16, 16)), 2.0)[None]
            )
            for k in range(3)
        ]
        s_checker = diversity_summary(checkers)
        s_blur = diversity_summary(blurred)
        assert (
            s_checker["features"]["contrast"]["mean"]
            > s_blur["features"]["contrast"]["mean"]
        )


class TestMetricReport:
    def test_aggregates(self, rng):
        a, b = rand_image(rng, h=16, w=16), rand_image(rng, h=16, w=16)
        rep = metric_report([("x", a, a), ("y", a, b)])
        assert rep.per_image[0]["psnr_db"] == 100.0
        assert abs(rep.per_image[0]["ssim"] - 1.0) < 1e-9
        assert rep.psnr_db == np.mean([r["psnr_db"] for r in rep.per_image])
        d = rep.to_dict()
        assert set(d) == {"psnr_db", "ssim", "per_image"}
