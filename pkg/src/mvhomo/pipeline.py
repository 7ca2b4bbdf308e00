"""Coarse-to-fine homography estimation cascading MV fusion and masked alignment."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import geometry
from .errors import DegenerateConfiguration, DimensionMismatch, ImageTooSmall
from .fusion import DEFAULT_STRIDE, irls_fuse
from .imaging import bilinear_sample, bilinear_warp, build_pyramid, check_frame, gradients, project_features
from .masking import (SIGMA_FLOOR, adjust_mask, coplanarity_mask, enhanced_mask,
                      motion_rejection_mask)
from .motion_coding import MotionVectorField, RDParams, estimate_motion, read_mvf, scale_flow, to_dense_flow
from .objectives import LossReport, fil_residual, loss_report

MIN_SIZE = 64
MAX_HALVINGS = 8


@dataclass(frozen=True)
class MvSource:
    """Where motion vectors come from: ``internal``, ``sidecar`` (with ``path``) or ``none``."""

    kind: str = "internal"
    path: str | None = None
    rd: RDParams = field(default_factory=lambda: RDParams(subpel=True))

    def __post_init__(self):
        if self.kind not in ("internal", "sidecar", "none"):
            raise ValueError(f"unknown mv_source {self.kind!r}")
        if self.kind == "sidecar" and not self.path:
            raise ValueError("sidecar mv_source needs a path")

    @classmethod
    def from_json(cls, value) -> "MvSource":
        if isinstance(value, str):
            return cls(kind=value.lower())
        if isinstance(value, dict) and len(value) == 1:
            (kind, arg), = value.items()
            kind = kind.lower()
            if kind == "sidecar":
                return cls(kind="sidecar", path=str(arg))
            if kind == "internal":
                return cls(kind="internal", rd=RDParams(**{"subpel": True, **(arg or {})}))
        raise ValueError(f"cannot parse mv_source {value!r}")

    def to_json(self):
        if self.kind == "sidecar":
            return {"sidecar": self.path}
        if self.kind == "internal":
            rd = asdict(self.rd)
            rd["algorithm"] = self.rd.algorithm.value
            return {"internal": rd}
        return "none"


@dataclass(frozen=True)
class PipelineConfig:
    levels: int = 3
    alpha: float = 0.2
    tau: float = 2.0
    tau_c: float = 0.05
    irls_iters: int = 5
    gn_max_iters: int = 10
    gn_tol: float = 0.01
    projector_window: int = 9
    mv_source: MvSource = field(default_factory=MvSource)

    def __post_init__(self):
        if isinstance(self.mv_source, (str, dict)):
            object.__setattr__(self, "mv_source", MvSource.from_json(self.mv_source))
        if self.levels != 3:
            raise ValueError("the estimator uses exactly 3 pyramid levels")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if min(self.tau, self.tau_c, self.gn_tol) <= 0:
            raise ValueError("tau, tau_c and gn_tol must be positive")
        if self.irls_iters < 1 or self.gn_max_iters < 1:
            raise ValueError("iteration counts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["mv_source"] = self.mv_source.to_json()
        return d

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


@dataclass
class EstimateResult:
    homography: np.ndarray
    enhanced_mask: np.ndarray
    level_homographies: list
    level_masks: list
    losses: LossReport
    diagnostics: dict


# --- masked Gauss-Newton ---------------------------------------------------------

def _masked_objective(feat_a, feat_b, weight, h) -> float:
    warped, valid = bilinear_warp(feat_a, h)
    wv = weight * valid
    total = wv.sum()
    if total <= 0:
        return np.inf
    return float((wv * (warped - feat_b) ** 2).sum() / total)


def masked_objective(feat_a, feat_b, h, mask=None) -> float:
    """Weighted mean squared feature residual after warping ``feat_a`` by ``h``."""
    weight = np.ones_like(feat_b) if mask is None else np.asarray(mask, dtype=float)
    return _masked_objective(np.asarray(feat_a, dtype=float), np.asarray(feat_b, dtype=float), weight, h)


def _linearize(feat_a, grad_x, grad_y, feat_b, weight, h, pts):
    height, width = feat_b.shape
    hinv = np.linalg.inv(h)
    mx, my = geometry.map_grid(hinv, width, height)
    warped, valid = bilinear_sample(feat_a, mx, my)
    gx, _ = bilinear_sample(grad_x, mx, my)
    gy, _ = bilinear_sample(grad_y, mx, my)
    dh = geometry.corner_jacobian(h, width, height)
    dhinv = -np.einsum("ij,pjk,kl->pil", hinv, dh, hinv)
    dsrc = geometry.point_jacobian(hinv, pts, dhinv)
    jac = gx.reshape(-1, 1) * dsrc[:, 0, :] + gy.reshape(-1, 1) * dsrc[:, 1, :]
    wv = (weight * valid).ravel()
    resid = (warped - feat_b).ravel()
    return jac, resid, wv


def mghe_step(feat_a, feat_b, h_in, m_prev, cfg: PipelineConfig | None = None) -> tuple[np.ndarray, dict]:
    """Masked direct alignment of one pyramid level.

    Minimises the adjusted-mask-weighted mean of ``(W(feat_a, h) - feat_b)^2`` over the
    8 corner offsets with Gauss-Newton and step halving, starting from ``h_in``.
    Returns the homography and a diagnostics dict. The objective never increases;
    singular normal equations end the iteration early.
    """
    cfg = cfg or PipelineConfig()
    feat_a = np.asarray(feat_a, dtype=float)
    feat_b = np.asarray(feat_b, dtype=float)
    if feat_a.shape != feat_b.shape or np.shape(m_prev) != feat_b.shape:
        raise DimensionMismatch("feature maps and mask must share a shape")
    height, width = feat_b.shape
    weight = adjust_mask(m_prev, cfg.alpha)
    grad_x, grad_y = gradients(feat_a)
    xs, ys = geometry.pixel_grid(width, height)
    pts = np.column_stack([xs.ravel(), ys.ravel()])

    h = geometry.normalize(h_in)
    params = geometry.homography_to_corners(h, width, height).ravel()
    obj = _masked_objective(feat_a, feat_b, weight, h)
    start_obj = obj
    iters = 0
    for iters in range(1, cfg.gn_max_iters + 1):
        jac, resid, wv = _linearize(feat_a, grad_x, grad_y, feat_b, weight, h, pts)
        jw = jac * wv[:, None]
        normal = jw.T @ jac
        rhs = jw.T @ resid
        try:
            ridge = 1e-9 * max(np.trace(normal), 1e-12) / 8
            delta = -np.linalg.solve(normal + ridge * np.eye(8), rhs)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(delta)):
            break
        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            try:
                cand = geometry.corners_to_homography(params + step * delta, width, height)
                cand_obj = _masked_objective(feat_a, feat_b, weight, cand)
            except DegenerateConfiguration:
                cand_obj = np.inf
            if cand_obj < obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        params = params + step * delta
        h, obj = cand, cand_obj
        if np.max(np.abs(step * delta)) < cfg.gn_tol:
            break
    return h, {"iterations": iters, "objective_start": start_obj, "objective_end": obj}


# --- full estimator ------------------------------------------------------------------

def _level_strides(levels: int) -> list[int]:
    return [max(DEFAULT_STRIDE // 2 ** (levels - 1 - lvl), 1) for lvl in range(levels)]


def _fuse_best(starts, v_lvl, tau, iters, stride, diag):
    # keep the fit with the most mask support
    best = None
    for h0 in starts:
        try:
            h, m = irls_fuse(h0, v_lvl, tau, iters, stride)
        except DegenerateConfiguration:
            _, lh, lw = v_lvl.shape
            h, m = h0, motion_rejection_mask(geometry.homography_flow(h0, lw, lh), v_lvl, tau)
            diag["fusion"] = "degenerate"
        if best is None or m.sum() > best[1].sum():
            best = (h, m)
    return best


def resolve_mvs(frame_a, frame_b, mv: MotionVectorField | None, cfg: PipelineConfig) -> MotionVectorField | None:
    """The MV field the estimator will use, following ``cfg.mv_source`` when ``mv`` is absent."""
    if mv is not None:
        return mv
    src = cfg.mv_source
    if src.kind == "none":
        return None
    if src.kind == "sidecar":
        return read_mvf(src.path)
    # a's block at x is predicted from b at x + mv, i.e. the a->b flow
    return estimate_motion(frame_a, frame_b, src.rd)


def estimate_homography(frame_a, frame_b, mv: MotionVectorField | None = None,
                        cfg: PipelineConfig | None = None) -> EstimateResult:
    """Estimate the homography mapping ``frame_a`` onto ``frame_b``.

    MVs are interpreted with ``frame_a`` as the current frame and ``frame_b`` as the
    reference, so they sample the a->b flow. With ``mv_source='none'`` and no ``mv``
    the fusion stage is skipped and alignment runs unmasked.
    """
    cfg = cfg or PipelineConfig()
    frame_a = check_frame(frame_a)
    frame_b = check_frame(frame_b)
    if frame_a.shape != frame_b.shape:
        raise DimensionMismatch(f"frame shapes differ: {frame_a.shape} vs {frame_b.shape}")
    height, width = frame_a.shape
    if min(height, width) < MIN_SIZE:
        raise ImageTooSmall(f"frames must be at least {MIN_SIZE}x{MIN_SIZE}")
    mvf = resolve_mvs(frame_a, frame_b, mv, cfg)
    if mvf is not None and (mvf.width, mvf.height) != (width, height):
        raise DimensionMismatch(f"MV field is {mvf.width}x{mvf.height}, frames are {width}x{height}")

    feat_a = project_features(frame_a, cfg.projector_window)
    feat_b = project_features(frame_b, cfg.projector_window)
    pyr_a = build_pyramid(feat_a, cfg.levels)
    pyr_b = build_pyramid(feat_b, cfg.levels)
    v_fine = to_dense_flow(mvf) if mvf is not None else None
    strides = _level_strides(cfg.levels)

    h = h_coarse = geometry.identity()
    level_h, level_masks, level_diag = [], [], []
    for lvl in range(cfg.levels):
        pa, pb = pyr_a[lvl], pyr_b[lvl]
        lh, lw = pb.shape
        if lvl > 0:
            h = geometry.rescale(h, 2.0, 2.0, pixel_centers=True)
            h_coarse = geometry.rescale(h_coarse, 2.0, 2.0, pixel_centers=True)
        h_carried = h
        diag = {"level": lvl, "shape": [lw, lh]}
        if v_fine is not None:
            scale = 0.5 ** (cfg.levels - 1 - lvl)
            v_lvl = scale_flow(v_fine, scale)
            # tau is in full-resolution pixels
            tau = cfg.tau * scale
            starts = [h]
            if lvl == 0:
                # the median MV as a second start guards against locking onto a mover
                starts.append(geometry.translation(*np.median(v_lvl.reshape(2, -1), axis=1)))
            h, m = _fuse_best(starts, v_lvl, tau, cfg.irls_iters, strides[lvl], diag)
            # the MV mask lives on frame_a pixels, alignment weights frame_b pixels
            m_b, _ = bilinear_warp(m, h)
        else:
            m = m_b = np.ones((lh, lw))
        # start from whichever candidate the level objective prefers, so refinement
        # can never end above the carried-up or coarsest estimate
        weight = adjust_mask(m_b, cfg.alpha)
        cands = [h, h_carried] if lvl == 0 else [h, h_carried, h_coarse]
        objs = [_masked_objective(pa, pb, weight, c) for c in cands]
        pick = int(np.argmin(objs))
        diag["start"] = ("fused", "carried", "coarsest")[pick]
        h, gn = mghe_step(pa, pb, cands[pick], m_b, cfg)
        diag.update(gn)
        diag["coarsest_objective"] = objs[-1] if lvl > 0 else gn["objective_end"]
        if lvl == 0:
            h_coarse = h
        level_h.append(h)
        level_masks.append(m)
        level_diag.append(diag)

    warped, valid = bilinear_warp(feat_a, h)
    h_flow = geometry.homography_flow(h, width, height)
    m_c = coplanarity_mask(warped, feat_b, cfg.tau_c) * valid
    if v_fine is not None:
        m_m, _ = bilinear_warp(motion_rejection_mask(h_flow, v_fine, cfg.tau), h)
        v_for_loss = v_fine
    else:
        m_m = np.ones((height, width))
        v_for_loss = h_flow
    m_e = enhanced_mask(m_c, m_m)
    if m_e.sum() > 0:
        losses = loss_report(warped, feat_b, feat_a, m_e, h_flow, v_for_loss,
                             fil_residual(frame_a, h, cfg.projector_window), SIGMA_FLOOR)
    else:
        losses = loss_report(warped, feat_b, feat_a, np.ones_like(m_e), h_flow, v_for_loss,
                             fil_residual(frame_a, h, cfg.projector_window), SIGMA_FLOOR)
    diagnostics = {
        "levels": level_diag,
        "mv_source": "given" if mv is not None else cfg.mv_source.kind,
        "mode_histogram": mvf.mode_histogram() if mvf is not None else None,
        "mask_m_mean": float(m_m.mean()),
        "mask_c_mean": float(m_c.mean()),
    }
    return EstimateResult(h, m_e, level_h, level_masks, losses, diagnostics)
