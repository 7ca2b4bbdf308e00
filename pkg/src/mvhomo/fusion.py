"""Mask-guided fusion of a homography with a motion-vector flow.

The learned fusion network is replaced by iteratively reweighted DLT, with the
Laplace motion-rejection mask as the weights.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .masking import DEFAULT_TAU, motion_rejection_mask

DEFAULT_ITERS = 5
DEFAULT_STRIDE = 8
# fraction of the pixel count below which the whole MV field is rejected
REJECT_FRACTION = 1e-3
# residual quantile used as the robust kernel scale while the fit is still far off
SCALE_QUANTILE = 0.3


def sample_points(width: int, height: int, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """One pixel per ``stride x stride`` cell that fits in the frame, ``(N, 2)``.

    The pixel is the cell's centre rounded down, so odd strides hit it exactly.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    off = (stride - 1) // 2
    xs = np.arange(width // stride) * stride + off
    ys = np.arange(height // stride) * stride + off
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]).astype(float)


def mv_correspondences(v_flow, stride: int = DEFAULT_STRIDE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point matches ``(p, p + v_flow(p))`` at sampled pixels; returns ``(src, dst, weights)``."""
    v_flow = np.asarray(v_flow, dtype=float)
    _, height, width = v_flow.shape
    src = sample_points(width, height, stride)
    ix, iy = src[:, 0].astype(np.intp), src[:, 1].astype(np.intp)
    dst = src + np.column_stack([v_flow[0, iy, ix], v_flow[1, iy, ix]])
    return src, dst, np.ones(len(src))


def irls_fuse(h_in, v_flow, tau: float = DEFAULT_TAU, iters: int = DEFAULT_ITERS,
              stride: int = DEFAULT_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """Refit ``h`` to the MV correspondences, reweighting by the rejection mask.

    Each iteration builds the mask from the current homography flow and re-solves a
    weighted DLT. The DLT weights use the same Laplace kernel with scale
    ``max(tau, q30)``, where ``q30`` is the 30th percentile of the correspondence
    residuals; once the fit is close the scale is ``tau`` and the weights are the mask
    itself. If the mask mass ever falls below ``1e-3`` of the pixel count the MV field
    is considered useless and ``h_in`` is returned with that mask. The returned mask
    is the one induced by the returned homography.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    v_flow = np.asarray(v_flow, dtype=float)
    _, height, width = v_flow.shape
    if v_flow.size == 0:
        raise ValueError("v_flow is empty")
    h_in = geometry.normalize(h_in)
    src, dst, _ = mv_correspondences(v_flow, stride)

    h = h_in
    for _ in range(iters):
        mask = motion_rejection_mask(geometry.homography_flow(h, width, height), v_flow, tau)
        if mask.sum() < REJECT_FRACTION * mask.size:
            return h_in, mask
        resid = np.abs(geometry.apply(h, src) - dst).sum(axis=1)
        scale = max(tau, float(np.quantile(resid, SCALE_QUANTILE)))
        h = geometry.dlt_solve(src, dst, np.exp(-resid / scale))
    mask = motion_rejection_mask(geometry.homography_flow(h, width, height), v_flow, tau)
    return h, mask
