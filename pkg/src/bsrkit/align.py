"""Frame-to-base registration by enhanced-correlation-coefficient maximization.

Forward-additive scheme over a coarse-to-fine pyramid: at each iteration
the moving frame and its intensity gradients are warped onto the base
grid, the Jacobian of the warp w.r.t. the motion parameters is formed,
and the closed-form update that maximizes the zero-mean normalized
correlation is applied. The criterion is invariant to photometric gain
and bias by construction. An update that would lower the correlation at
a level is rejected and iteration stops there, so the per-level score
trace is non-decreasing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .burstgen import Burst
from .errors import (
    BsrError,
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    DimensionError,
)
from .imaging import Homography, Image, halve, sample_bilinear, warp
from .util import worker_count

MOTION_MODELS = ("translation", "euclidean", "affine", "homography")

_MIN_PYRAMID_DIM = 16
_RHO_SLACK = 1e-12


@dataclass(frozen=True)
class EccConfig:
    motion_model: str = "homography"
    max_iterations: int = 100
    epsilon: float = 1e-6
    pyramid_levels: int = 3
    gaussian_blur_sigma: float = 1.0

    def __post_init__(self):
        if self.motion_model not in MOTION_MODELS:
            raise ConfigError(f"unknown motion model {self.motion_model!r}")
        if self.max_iterations < 1 or self.pyramid_levels < 1:
            raise ConfigError("max_iterations and pyramid_levels must be >= 1")
        if self.epsilon <= 0 or self.gaussian_blur_sigma < 0:
            raise ConfigError("epsilon must be > 0 and blur sigma >= 0")


@dataclass
class AlignmentResult:
    """Estimated warp registering a frame onto the base frame."""

    homography: Homography
    final_ecc: float
    iterations_used: int
    converged: bool
    ecc_trace: list = field(default_factory=list)  # finest-level scores


# -- motion-model parametrizations --------------------------------------
# Parameters map base-frame coordinates to moving-frame coordinates and
# are updated additively from the identity.


def _identity_params(model):
    if model == "translation":
        return np.zeros(2)
    if model == "euclidean":
        return np.zeros(3)  # theta, tx, ty
    if model == "affine":
        return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])  # homography


def _params_to_matrix(model, p):
    m = np.eye(3)
    if model == "translation":
        m[0, 2], m[1, 2] = p
    elif model == "euclidean":
        c, s = np.cos(p[0]), np.sin(p[0])
        m[:2] = [[c, -s, p[1]], [s, c, p[2]]]
    else:
        m[0] = [p[0], p[1], p[2]]
        m[1] = [p[3], p[4], p[5]]
        if model == "homography":
            m[2, 0], m[2, 1] = p[6], p[7]
    return m


def _upscale_params(model, p):
    """Re-express parameters when moving to the 2x finer pyramid level."""
    q = p.copy()
    if model == "translation":
        q *= 2.0
    elif model == "euclidean":
        q[1] *= 2.0
        q[2] *= 2.0
    else:
        q[2] *= 2.0
        q[5] *= 2.0
        if model == "homography":
            q[6] /= 2.0
            q[7] /= 2.0
    return q


def _warp_coords(model, p, xs, ys):
    m = _params_to_matrix(model, p)
    den = m[2, 0] * xs + m[2, 1] * ys + 1.0
    x = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den
    y = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den
    return x, y, den


def _steepest_descent(model, p, xs, ys, wx, wy, warped_x, warped_y, den):
    """G matrix (N x P): warped image gradient times warp Jacobian."""
    if model == "translation":
        cols = (wx, wy)
    elif model == "euclidean":
        c, s = np.cos(p[0]), np.sin(p[0])
        jtheta = wx * (-s * xs - c * ys) + wy * (c * xs - s * ys)
        cols = (jtheta, wx, wy)
    elif model == "affine":
        cols = (wx * xs, wx * ys, wx, wy * xs, wy * ys, wy)
    else:
        inv = 1.0 / den
        proj = (wx * warped_x + wy * warped_y) * inv
        cols = (
            wx * xs * inv,
            wx * ys * inv,
            wx * inv,
            wy * xs * inv,
            wy * ys * inv,
            wy * inv,
            -proj * xs,
            -proj * ys,
        )
    return np.stack(cols, axis=1)


def _ecc_level(template, moving, grads, p, model, cfg, margin, keep_trace):
    """Run ECC iterations at one pyramid level.

    Each closed-form update goes through a backtracking line search on
    the correlation score, so accepted iterates never lower it and the
    recorded trace is non-decreasing. Returns (params, trace,
    iterations, converged).
    """
    h, w = template.shape
    ys, xs = np.mgrid[margin : h - margin, margin : w - margin]
    xs = xs.reshape(-1).astype(np.float64)
    ys = ys.reshape(-1).astype(np.float64)
    t = template[margin : h - margin, margin : w - margin].reshape(-1)
    t = t - t.mean()
    norm_t = np.linalg.norm(t)
    if norm_t < 1e-10:
        raise DegenerateInputError("template region has no intensity variance")
    gy, gx = grads

    def correlate(q):
        wx_c, wy_c, den = _warp_coords(model, q, xs, ys)
        iw = sample_bilinear(moving, wx_c, wy_c)
        iw = iw - iw.mean()
        norm_i = np.linalg.norm(iw)
        if norm_i < 1e-10:
            raise ConvergenceError("warped frame collapsed to constant")
        rho = float(t @ iw) / (norm_t * norm_i)
        return rho, iw, norm_i, wx_c, wy_c, den

    rho, iw, norm_i, wx_c, wy_c, den = correlate(p)
    trace = [rho]
    iterations = 0
    converged = False
    for _ in range(cfg.max_iterations):
        wgx = sample_bilinear(gx, wx_c, wy_c)
        wgy = sample_bilinear(gy, wx_c, wy_c)
        g_mat = _steepest_descent(model, p, xs, ys, wgx, wgy, wx_c, wy_c, den)
        c_mat = g_mat.T @ g_mat
        gt = g_mat.T @ t
        gw = g_mat.T @ iw
        try:
            sol = np.linalg.solve(c_mat, np.stack([gt, gw], axis=1))
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular normal equations") from None
        num = norm_i * norm_i - gw @ sol[:, 1]
        den_l = float(t @ iw) - gt @ sol[:, 1]
        if den_l <= 0:
            raise ConvergenceError("frames appear uncorrelated under this warp")
        err = (num / den_l) * t - iw
        dp = np.linalg.solve(c_mat, g_mat.T @ err)
        if not np.isfinite(dp).all():
            raise ConvergenceError("non-finite parameter update")

        # backtracking line search: never accept a score-lowering step
        step = 1.0
        accepted = None
        for _bt in range(10):
            cand = p + step * dp
            rho_c, *state = correlate(cand)
            if rho_c >= rho - _RHO_SLACK:
                accepted = (cand, rho_c, state, step)
                break
            step *= 0.5
        if accepted is None:
            converged = True  # numerical optimum: no step improves the score
            break
        p, rho, (iw, norm_i, wx_c, wy_c, den), step = accepted
        trace.append(rho)
        iterations += 1
        if step * np.linalg.norm(dp) < cfg.epsilon:
            converged = True
            break
    return p, (trace if keep_trace else []), iterations, converged


def _prepare_plane(img: Image, sigma):
    plane = img.luma()
    if plane.std() < 1e-8:
        raise DegenerateInputError("image has (near-)zero intensity variance")
    if sigma > 0:
        plane = gaussian_filter(plane, sigma, mode="nearest")
    return plane


def estimate_transform(frame: Image, base: Image, cfg: EccConfig | None = None) -> AlignmentResult:
    """Estimate the warp that registers ``frame`` onto ``base``.

    Raises ConvergenceError (carrying the last valid estimate) if the
    update diverges and DegenerateInputError on zero-variance input.
    """
    cfg = cfg or EccConfig()
    if (frame.height, frame.width) != (base.height, base.width):
        raise DimensionError(
            f"frame {frame.height}x{frame.width} and base "
            f"{base.height}x{base.width} differ"
        )
    tpl0 = _prepare_plane(base, cfg.gaussian_blur_sigma)
    mov0 = _prepare_plane(frame, cfg.gaussian_blur_sigma)

    min_dim = min(tpl0.shape)
    levels = 1
    while levels < cfg.pyramid_levels and min_dim // (2**levels) >= _MIN_PYRAMID_DIM:
        levels += 1
    tpls, movs = [tpl0], [mov0]
    for _ in range(levels - 1):
        tpls.append(halve(tpls[-1]))
        movs.append(halve(movs[-1]))

    margin0 = max(3, round(0.08 * min_dim))
    model = cfg.motion_model

    def to_finest(params, lvl):
        for _ in range(lvl):
            params = _upscale_params(model, params)
        return Homography(np.linalg.inv(_params_to_matrix(model, params)))
    p = _identity_params(model)
    total_iters = 0
    finest_trace = []
    converged = False
    for lvl in range(levels - 1, -1, -1):
        margin = max(2, round(margin0 / 2**lvl))
        keep_trace = lvl == 0
        try:
            p, trace, iters, converged = _ecc_level(
                tpls[lvl], movs[lvl], np.gradient(movs[lvl]), p, model, cfg,
                margin, keep_trace,
            )
        except ConvergenceError as exc:
            exc.last_result = AlignmentResult(
                homography=to_finest(p, lvl),
                final_ecc=float("nan"),
                iterations_used=total_iters,
                converged=False,
            )
            raise
        total_iters += iters
        if keep_trace:
            finest_trace = trace
        if lvl > 0:
            p = _upscale_params(model, p)

    return AlignmentResult(
        homography=Homography(np.linalg.inv(_params_to_matrix(model, p))),
        final_ecc=finest_trace[-1] if finest_trace else float("nan"),
        iterations_used=total_iters,
        converged=converged,
        ecc_trace=finest_trace,
    )


def _plain_ncc(a: Image, b: Image):
    x = a.luma().reshape(-1)
    y = b.luma().reshape(-1)
    x = x - x.mean()
    y = y - y.mean()
    d = np.linalg.norm(x) * np.linalg.norm(y)
    return float(x @ y / d) if d > 0 else 0.0


def align_burst(burst: Burst, cfg: EccConfig | None = None):
    """Warp frames 2..N onto the base frame; frame 1 is untouched.

    A frame whose estimation fails falls back to the identity transform
    with converged=False. Returns (aligned burst, per-frame results).
    """
    cfg = cfg or EccConfig()

    def run(i):
        frame = burst.frames[i]
        try:
            return estimate_transform(frame, burst.base, cfg)
        except (ConvergenceError, DegenerateInputError):
            return AlignmentResult(
                homography=Homography.identity(),
                final_ecc=_plain_ncc(frame, burst.base),
                iterations_used=0,
                converged=False,
            )
        except BsrError as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc

    indices = range(1, burst.n_frames)
    workers = min(worker_count(), max(1, burst.n_frames - 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(i) for i in indices]

    all_results = [
        AlignmentResult(Homography.identity(), 1.0, 0, True, [1.0])
    ] + results
    aligned = [Image(burst.base.pixels.copy())]
    for i, res in zip(indices, results):
        aligned.append(warp(burst.frames[i], res.homography))
    out = Burst(aligned, burst.scale, burst.true_transforms, burst.noise_sigma)
    return out, all_results


def measure_shifts(burst: Burst, cfg: EccConfig | None = None):
    """Per-frame (dx, dy) content displacement vs the base frame, LR pixels.

    Evaluated at the image center from the estimated transform; one entry
    per non-base frame.
    """
    if burst.n_frames < 2:
        raise DimensionError(f"shift measurement needs >= 2 frames, got {burst.n_frames}")
    cfg = cfg or EccConfig()
    cx = (burst.base.width - 1) / 2.0
    cy = (burst.base.height - 1) / 2.0
    shifts = []
    for i in range(1, burst.n_frames):
        res = estimate_transform(burst.frames[i], burst.base, cfg)
        fwd = res.homography.inverse()  # base -> moving: content displacement
        x, y = fwd.apply(np.array([cx]), np.array([cy]))
        shifts.append((float(x[0] - cx), float(y[0] - cy)))
    return shifts


def shift_histogram(shifts_lr, scale):
    """Bucketize shift magnitudes in HR pixels: [0,1), [1,2), [2,inf).

    Also reports a fine-grained sub-pixel histogram over [0, 1).
    """
    mags = np.array([scale * float(np.hypot(dx, dy)) for dx, dy in shifts_lr])
    buckets = {
        "under_1px": float(np.mean(mags < 1.0)) if len(mags) else 0.0,
        "1_to_2px": float(np.mean((mags >= 1.0) & (mags < 2.0))) if len(mags) else 0.0,
        "over_2px": float(np.mean(mags >= 2.0)) if len(mags) else 0.0,
    }
    sub = mags[mags < 1.0]
    edges = np.linspace(0.0, 1.0, 11)
    counts, _ = np.histogram(sub, bins=edges)
    return {
        "count": int(len(mags)),
        "unit": "hr_pixels",
        "magnitudes": [float(m) for m in mags],
        "bucket_fractions": buckets,
        "subpixel_histogram": {
            "edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
        "mean_magnitude": float(mags.mean()) if len(mags) else 0.0,
    }
