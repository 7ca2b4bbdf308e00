"""Confidence masks and the Laplace likelihood that ties them to motion vectors.

Masks are ``(H, W)`` float arrays in ``[0, 1]``; flows are ``(2, H, W)``. Means use
``np.mean``, whose pairwise summation fixes the reduction order.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .errors import DimensionMismatch

DEFAULT_TAU = 2.0
DEFAULT_TAU_C = 0.05
DEFAULT_ALPHA = 0.2
SIGMA_FLOOR = 0.05
BCE_EPS = 1e-7


def _same_shape(*arrays) -> None:
    shapes = {np.shape(a)[-2:] for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatch(f"spatial shapes differ: {sorted(shapes)}")


def flow_residual(h_flow, v_flow) -> np.ndarray:
    """Per-pixel L1 distance ``|u - mu_u| + |v - mu_v|`` between two flows."""
    h_flow = np.asarray(h_flow, dtype=float)
    v_flow = np.asarray(v_flow, dtype=float)
    if h_flow.shape != v_flow.shape or h_flow.ndim != 3 or h_flow.shape[0] != 2:
        raise DimensionMismatch(f"flow shapes differ: {h_flow.shape} vs {v_flow.shape}")
    return np.abs(h_flow[0] - v_flow[0]) + np.abs(h_flow[1] - v_flow[1])


def motion_rejection_mask(h_flow, v_flow, tau: float = DEFAULT_TAU) -> np.ndarray:
    """``exp(-L1 / tau)``: 1 where the MV flow agrees with the homography flow."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return np.exp(-flow_residual(h_flow, v_flow) / tau)


def coplanarity_mask(warped_features, target_features, tau_c: float = DEFAULT_TAU_C) -> np.ndarray:
    if tau_c <= 0:
        raise ValueError(f"tau_c must be positive, got {tau_c}")
    _same_shape(warped_features, target_features)
    diff = np.abs(np.asarray(warped_features, dtype=float) - np.asarray(target_features, dtype=float))
    return np.exp(-diff / tau_c)


def enhanced_mask(mc, mm) -> np.ndarray:
    _same_shape(mc, mm)
    return np.asarray(mc, dtype=float) * np.asarray(mm, dtype=float)


def adjust_mask(m, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Lift a mask into ``[alpha, 1]``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return np.asarray(m, dtype=float) * (1.0 - alpha) + alpha


def mask_variance(mask, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Laplace variance per pixel: confident pixels get small variance."""
    return np.maximum(sigma_floor, 1.0 - np.asarray(mask, dtype=float))


def laplace_nll_map(h_flow, v_flow, mask, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    if sigma_floor <= 0:
        raise ValueError(f"sigma_floor must be positive, got {sigma_floor}")
    res = flow_residual(h_flow, v_flow)
    _same_shape(res, mask)
    var = mask_variance(mask, sigma_floor)
    return np.log(2.0 * var) + np.sqrt(2.0 / var) * res


def laplace_nll(h_flow, v_flow, mask, sigma_floor: float = SIGMA_FLOOR) -> float:
    """Mean negative log-likelihood of two independent Laplace axes sharing one variance."""
    return float(np.mean(laplace_nll_map(h_flow, v_flow, mask, sigma_floor)))


def laplace_nll_grad_flow(h_flow, v_flow, mask, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """d NLL / d h_flow, shape ``(2, H, W)`` (subgradient 0 at exact agreement)."""
    h_flow = np.asarray(h_flow, dtype=float)
    v_flow = np.asarray(v_flow, dtype=float)
    var = mask_variance(mask, sigma_floor)
    scale = np.sqrt(2.0 / var) / var.size
    return np.sign(h_flow - v_flow) * scale


def bce_to_ones(m) -> float:
    """Binary cross-entropy of a mask against an all-ones target."""
    # only the -log(m) term survives for a target of 1, so only the lower clamp matters
    m = np.maximum(np.asarray(m, dtype=float), BCE_EPS)
    return float(np.mean(-np.log(m)))


def laplace_nll_grad_corners(h, v_flow, mask, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Gradient of :func:`laplace_nll` w.r.t. the 8 corner offsets of ``h``.

    The variance map is held fixed; only the homography flow moves.
    """
    _, height, width = np.shape(v_flow)
    h_flow = geometry.homography_flow(h, width, height)
    g = laplace_nll_grad_flow(h_flow, v_flow, mask, sigma_floor)
    xs, ys = geometry.pixel_grid(width, height)
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    jac = geometry.point_jacobian(h, pts, geometry.corner_jacobian(h, width, height))
    return np.einsum("nk,nkp->p", g.reshape(2, -1).T, jac)
