import numpy as np
import pytest
from PIL import Image as PilImage

from bsrkit import imaging
from bsrkit.errors import DimensionError, FormatError, TransformError
from bsrkit.imaging import Homography, Image


def random_image(rng, c=3, h=24, w=24):
    return Image.from_array(rng.random((c, h, w)))


class TestContainers:
    def test_clamped_on_construction(self):
        img = Image.from_array(np.array([[[-0.5, 1.5], [0.25, 0.75]]]))
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_bad_channel_count(self):
        with pytest.raises(DimensionError):
            Image.from_array(np.zeros((2, 4, 4)))

    def test_homography_normalization(self):
        h = Homography(2.0 * np.eye(3))
        assert h.m[2, 2] == 1.0
        assert np.allclose(h.m, np.eye(3))

    def test_singular_rejected(self):
        m = np.eye(3)
        m[0, 0] = 0.0
        m[0, 1] = 0.0
        with pytest.raises(TransformError):
            Homography(m)

    def test_compose_and_inverse(self, rng):
        a = Homography.translation(2.0, -1.0)
        b = Homography.rotation_about(5.0, 8.0, 8.0)
        ab = a.compose(b)
        pt = ab.apply(np.array([3.0]), np.array([4.0]))
        bx, by = b.apply(np.array([3.0]), np.array([4.0]))
        ax, ay = a.apply(bx, by)
        assert abs(pt[0] - ax) < 1e-12 and abs(pt[1] - ay) < 1e-12
        ident = ab.compose(ab.inverse())
        assert np.abs(ident.m - np.eye(3)).max() < 1e-12


class TestWarp:
    def test_identity_bit_exact(self, rng):
        img = random_image(rng)
        out = imaging.warp(img, Homography.identity())
        assert np.array_equal(out.pixels, img.pixels)

    def test_integer_shift_roundtrip(self, rng):
        img = random_image(rng, c=1)
        fwd = imaging.warp(img, Homography.translation(1.0, 0.0))
        back = imaging.warp(fwd, Homography.translation(-1.0, 0.0))
        interior = (slice(None), slice(1, -1), slice(1, -1))
        assert np.abs(back.pixels[interior] - img.pixels[interior]).max() < 1e-9

    def test_halfpixel_shift_on_ramp(self):
        w = 16
        ramp = np.tile(np.linspace(0.1, 0.9, w), (w, 1))
        img = Image.from_array(ramp[None])
        out = imaging.warp(img, Homography.translation(0.5, 0.0))
        # content moves +0.5 px: output(x) = ramp(x - 0.5)
        step = (0.9 - 0.1) / (w - 1)
        expect = ramp - 0.5 * step
        inner = (slice(None), slice(2, -2), slice(2, -2))
        assert np.abs(out.pixels[inner] - expect[None][inner]).max() < 1e-9

    @pytest.mark.parametrize("interp,tol", [("bilinear", 2e-2), ("bicubic", 5e-3)])
    def test_warp_inverse_interior(self, rng, interp, tol):
        # smooth image so resampling loss stays within documented bounds
        from scipy.ndimage import gaussian_filter

        base = gaussian_filter(rng.random((32, 32)), 1.5)
        base = (base - base.min()) / (base.max() - base.min())
        img = Image.from_array(base[None])
        h = Homography.translation(1.3, -0.8).compose(
            Homography.rotation_about(1.0, 16.0, 16.0)
        )
        fwd = imaging.warp(img, h, interp)
        back = imaging.warp(fwd, h.inverse(), interp)
        inner = (slice(None), slice(4, -4), slice(4, -4))
        mae = np.abs(back.pixels[inner] - img.pixels[inner]).mean()
        assert mae < tol

    def test_bicubic_exact_on_linear_signal(self):
        w = 16
        ramp = np.tile(np.linspace(0.2, 0.8, w), (w, 1))
        img = Image.from_array(ramp[None])
        out = imaging.warp(img, Homography.translation(0.25, 0.0), "bicubic")
        step = (0.8 - 0.2) / (w - 1)
        inner = (slice(None), slice(2, -2), slice(2, -2))
        assert np.abs(out.pixels[inner] - (ramp - 0.25 * step)[None][inner]).max() < 1e-9


class TestResampling:
    def test_downsample_constant(self):
        img = Image.from_array(np.full((3, 8, 8), 0.4))
        out = imaging.downsample(img, 4)
        assert out.pixels.shape == (3, 2, 2)
        assert np.allclose(out.pixels, 0.4, atol=1e-15)

    def test_downsample_checker_mean(self):
        img = Image.from_array(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
        out = imaging.downsample(img, 2)
        assert np.allclose(out.pixels, 0.5, atol=1e-15)

    def test_downsample_loop_oracle(self, rng):
        img = random_image(rng, c=1, h=8, w=8)
        out = imaging.downsample(img, 2)
        for i in range(4):
            for j in range(4):
                block = img.pixels[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                assert abs(out.pixels[0, i, j] - block.mean()) < 1e-12

    def test_downsample_preserves_mean(self, rng):
        img = random_image(rng, h=16, w=16)
        out = imaging.downsample(img, 4)
        assert abs(out.pixels.mean() - img.pixels.mean()) < 1e-12

    def test_downsample_divisibility(self, rng):
        with pytest.raises(DimensionError):
            imaging.downsample(random_image(rng, h=9, w=9), 2)

    def test_upsample_shape_and_constant(self):
        img = Image.from_array(np.full((1, 4, 4), 0.3))
        out = imaging.upsample(img, 4)
        assert out.pixels.shape == (1, 16, 16)
        assert np.abs(out.pixels - 0.3).max() < 1e-12

    def test_upsample_then_downsample_near_identity(self, rng):
        from scipy.ndimage import gaussian_filter

        base = gaussian_filter(rng.random((8, 8)), 1.0)
        img = Image.from_array(base[None])
        up = imaging.upsample(img, 2, "bilinear")
        down = imaging.downsample(up, 2)
        assert np.abs(down.pixels - img.pixels).mean() < 2e-2


class TestPng:
    def test_roundtrip_quantization_bound(self, rng, tmp_path):
        img = random_image(rng)
        path = tmp_path / "img.png"
        imaging.write_png(img, path)
        back = imaging.read_png(path)
        assert np.abs(back.pixels - img.pixels).max() <= 1.0 / 255.0 + 1e-12

    def test_black_roundtrip_exact(self, tmp_path):
        img = Image.from_array(np.zeros((3, 6, 6)))
        path = tmp_path / "black.png"
        imaging.write_png(img, path)
        back = imaging.read_png(path)
        assert np.array_equal(back.pixels, np.zeros((3, 6, 6)))

    def test_read_write_read_idempotent(self, rng, tmp_path):
        img = random_image(rng, c=1)
        p1 = tmp_path / "a.png"
        p2 = tmp_path / "b.png"
        imaging.write_png(img, p1)
        first = imaging.read_png(p1)
        imaging.write_png(first, p2)
        second = imaging.read_png(p2)
        assert np.array_equal(first.pixels, second.pixels)

    def test_16bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        PilImage.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(path)
        with pytest.raises(FormatError):
            imaging.read_png(path)

    def test_palette_rejected(self, tmp_path):
        path = tmp_path / "pal.png"
        pil = PilImage.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).convert("P")
        pil.save(path)
        with pytest.raises(FormatError):
            imaging.read_png(path)
