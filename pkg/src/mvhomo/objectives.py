"""Loss terms reported as diagnostics of an estimate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, EmptyMask
from .imaging import DEFAULT_WINDOW, bilinear_warp, project_features
from .masking import SIGMA_FLOOR, bce_to_ones, laplace_nll

TRIPLET_MARGIN = 1.0
BCE_WEIGHT = 0.05


@dataclass(frozen=True)
class LossReport:
    l_tri_mean: float
    l_align: float
    l_fil: float
    l_nll: float
    l_bce: float
    l_plane: float
    l_total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def triplet_map(f_a_warped, f_b, f_a) -> np.ndarray:
    """Per-pixel ``max(|F'_a - F_b| - |F_a - F_b| + 1, 0)``."""
    f_a_warped, f_b, f_a = (np.asarray(x, dtype=float) for x in (f_a_warped, f_b, f_a))
    if not f_a_warped.shape == f_b.shape == f_a.shape:
        raise DimensionMismatch("triplet inputs must share a shape")
    return np.maximum(np.abs(f_a_warped - f_b) - np.abs(f_a - f_b) + TRIPLET_MARGIN, 0.0)


def align_loss(tri, m_e) -> float:
    """Mask-weighted mean of the triplet map."""
    tri = np.asarray(tri, dtype=float)
    m_e = np.asarray(m_e, dtype=float)
    if tri.shape != m_e.shape:
        raise DimensionMismatch(f"triplet map {tri.shape} and mask {m_e.shape} differ")
    total = m_e.sum()
    if total <= 0:
        raise EmptyMask("alignment loss is undefined for a mask summing to zero")
    return float((m_e * tri).sum() / total)


def fil_residual(frame, h, window: int = DEFAULT_WINDOW) -> float:
    """Mean ``|W(h, P(I)) - P(W(h, I))|`` over pixels where both sides are defined.

    A pixel counts only if its whole projector window lies inside the warped frame,
    so the zero fill outside the warp never enters the local mean.
    """
    frame = np.asarray(frame, dtype=float)
    warped_feat, valid = bilinear_warp(project_features(frame, window), h)
    warped_frame, _ = bilinear_warp(frame, h)
    feat_of_warp = project_features(warped_frame, window)
    inner = ndimage.minimum_filter(valid, size=window, mode="constant", cval=0.0) > 0
    if not inner.any():
        return 0.0
    return float(np.mean(np.abs(warped_feat - feat_of_warp)[inner]))


def loss_report(f_a_warped, f_b, f_a, m_e, h_flow, v_flow, l_fil: float,
                sigma_floor: float = SIGMA_FLOOR) -> LossReport:
    """Assemble every loss term; ``l_fil`` comes from :func:`fil_residual`."""
    tri = triplet_map(f_a_warped, f_b, f_a)
    l_align = align_loss(tri, m_e)
    l_nll = laplace_nll(h_flow, v_flow, m_e, sigma_floor)
    l_bce = bce_to_ones(m_e)
    l_plane = l_nll + BCE_WEIGHT * l_bce
    l_fil = float(l_fil)
    return LossReport(
        l_tri_mean=float(np.mean(tri)),
        l_align=l_align,
        l_fil=l_fil,
        l_nll=l_nll,
        l_bce=l_bce,
        l_plane=l_plane,
        l_total=l_align + l_fil + l_plane,
    )
