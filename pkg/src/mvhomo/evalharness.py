"""Synthetic scenes, point files and evaluation metrics.

Scenes are drawn from ``numpy.random.Generator(PCG64(seed))`` so a seed fully
determines every pixel.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import geometry
from .errors import DimensionMismatch, FormatError, ParamOutOfRange
from .imaging import bilinear_sample, clamped_sample, read_frame, to_uint8, write_frame

N_POINT_PAIRS = 6
DEFAULT_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 31))


@dataclass(frozen=True)
class SceneParams:
    width: int = 128
    height: int = 128
    max_corner_px: float = 12.0
    fg_fraction: float = 0.0
    fg_shift_px: float = 8.0
    noise_sigma: float = 0.0
    texture: float = 1.0

    def __post_init__(self):
        if not 0 <= self.max_corner_px <= 16:
            raise ParamOutOfRange(f"max_corner_px must be in [0, 16], got {self.max_corner_px}")
        if not 0 <= self.fg_fraction <= 0.5:
            raise ParamOutOfRange(f"fg_fraction must be in [0, 0.5], got {self.fg_fraction}")
        if not 0 < self.texture <= 1:
            raise ParamOutOfRange(f"texture must be in (0, 1], got {self.texture}")
        if self.noise_sigma < 0 or self.fg_shift_px < 0:
            raise ParamOutOfRange("noise_sigma and fg_shift_px must be non-negative")
        if min(self.width, self.height) < 64:
            raise ParamOutOfRange("scenes must be at least 64x64")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParamOutOfRange(f"unknown scene parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SynthScene:
    frame_a: np.ndarray
    frame_b: np.ndarray
    gt_h: np.ndarray
    foreground_mask: np.ndarray
    src_points: np.ndarray
    dst_points: np.ndarray
    seed: int
    params: SceneParams
    # true a->b displacement of every frame_a pixel: plane flow, box motion on boxes
    true_flow: np.ndarray | None = None

    @property
    def point_pairs(self) -> np.ndarray:
        """``(N, 4)`` rows of ``x1 y1 x2 y2``."""
        return np.hstack([self.src_points, self.dst_points])


def _octave_noise(rng, shape, octaves=((1.5, 1.0), (4.0, 3.0), (10.0, 8.0))) -> np.ndarray:
    """Smooth multi-scale noise rescaled to ``[-1, 1]``."""
    total = np.zeros(shape)
    for sigma, amp in octaves:
        total += amp * ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    total -= total.min()
    return 2.0 * total / max(total.max(), 1e-12) - 1.0


def _place_rects(rng, width, height, fraction):
    if fraction <= 0:
        return []
    total = fraction * width * height
    for count in (2, 1):
        area = total / count
        for _ in range(200):
            rects = []
            for _ in range(count):
                aspect = rng.uniform(0.7, 1.4)
                rw = int(round(np.sqrt(area * aspect)))
                rh = int(round(area / max(rw, 1)))
                if rw >= width - 4 or rh >= height - 4:
                    break
                x0 = int(rng.integers(2, width - rw - 1))
                y0 = int(rng.integers(2, height - rh - 1))
                rects.append((x0, y0, x0 + rw, y0 + rh))
            if len(rects) == count and not _overlap(rects):
                return rects
    raise ParamOutOfRange(f"cannot place foreground covering {fraction:.0%} of the frame")


def _overlap(rects) -> bool:
    for i, a in enumerate(rects):
        for b in rects[i + 1:]:
            if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                return True
    return False


def synth_scene(seed: int, params: SceneParams | dict | None = None) -> SynthScene:
    """Planar textured scene seen twice under a random homography, plus moving boxes.

    ``frame_b`` samples the same background canvas as ``frame_a`` through the inverse
    ground-truth homography, so with no foreground and no noise it equals
    ``bilinear_warp(frame_a, gt_h)`` wherever that warp is valid. Each foreground box
    moves with the plane's flow at its centre plus ``fg_shift_px`` in a random direction.
    """
    if params is None:
        params = SceneParams()
    elif isinstance(params, dict):
        params = SceneParams.from_dict(params)
    rng = np.random.Generator(np.random.PCG64(seed))
    w, h = params.width, params.height
    margin = int(np.ceil(2 * params.max_corner_px)) + 8

    cw, ch = w + 2 * margin, h + 2 * margin
    angle = rng.uniform(0, 2 * np.pi)
    ys, xs = np.mgrid[0:ch, 0:cw].astype(float)
    ramp = (np.cos(angle) * (xs - cw / 2) + np.sin(angle) * (ys - ch / 2)) / (0.5 * max(cw, ch))
    canvas = 0.5 + 0.12 * ramp + 0.35 * params.texture * _octave_noise(rng, (ch, cw))
    canvas = np.clip(canvas, 0.0, 1.0)

    offsets = rng.uniform(-params.max_corner_px, params.max_corner_px, size=(4, 2))
    gt_h = geometry.corners_to_homography(offsets, w, h)

    frame_a = canvas[margin:margin + h, margin:margin + w].copy()
    mx, my = geometry.map_grid(geometry.invert(gt_h), w, h)
    frame_b, _ = bilinear_sample(canvas, mx + margin, my + margin)

    fg_mask = np.zeros((h, w))
    true_flow = geometry.homography_flow(gt_h, w, h)
    rects_b = []
    rects = _place_rects(rng, w, h, params.fg_fraction)
    if rects:
        fg_tex = np.clip(0.45 + 0.4 * params.texture * _octave_noise(rng, (h, w), ((1.5, 1.0), (3.0, 2.0))), 0, 1)
        bx, by = geometry.pixel_grid(w, h)
        for x0, y0, x1, y1 in rects:
            fg_mask[y0:y1, x0:x1] = 1.0
            frame_a[y0:y1, x0:x1] = fg_tex[y0:y1, x0:x1]
            centre = np.array([(x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2])
            theta = rng.uniform(0, 2 * np.pi)
            motion = geometry.apply(gt_h, centre) - centre + params.fg_shift_px * np.array([np.cos(theta), np.sin(theta)])
            sx, sy = bx - motion[0], by - motion[1]
            inside = (sx >= x0 - 0.5) & (sx < x1 - 0.5) & (sy >= y0 - 0.5) & (sy < y1 - 0.5)
            frame_b = np.where(inside, clamped_sample(fg_tex, sx, sy), frame_b)
            true_flow[:, y0:y1, x0:x1] = motion[:, None, None]
            rects_b.append((x0 - 0.5 + motion[0], y0 - 0.5 + motion[1], x1 - 0.5 + motion[0], y1 - 0.5 + motion[1]))

    if params.noise_sigma > 0:
        frame_a = np.clip(frame_a + rng.normal(0, params.noise_sigma, frame_a.shape), 0, 1)
        frame_b = np.clip(frame_b + rng.normal(0, params.noise_sigma, frame_b.shape), 0, 1)

    src, dst = _sample_points(rng, gt_h, fg_mask, rects_b, w, h)
    return SynthScene(frame_a, frame_b, gt_h, fg_mask, src, dst, seed, params, true_flow)


def _sample_points(rng, gt_h, fg_mask, rects_b, w, h, count=N_POINT_PAIRS):
    """Background-only source points whose targets stay visible in frame b."""
    border = 4
    src = []
    for _ in range(10000):
        p = rng.uniform([border, border], [w - 1 - border, h - 1 - border])
        if fg_mask[int(round(p[1])), int(round(p[0]))] > 0:
            continue
        q = geometry.apply(gt_h, p)
        if not (0 <= q[0] <= w - 1 and 0 <= q[1] <= h - 1):
            continue
        if any(r[0] - 1 <= q[0] <= r[2] + 1 and r[1] - 1 <= q[1] <= r[3] + 1 for r in rects_b):
            continue
        src.append(p)
        if len(src) == count:
            break
    if len(src) < count:
        raise ParamOutOfRange("could not sample enough background point pairs")
    src = np.array(src)
    return src, geometry.apply(gt_h, src)


# --- metrics -------------------------------------------------------------------

def pme(h, pairs) -> float:
    """Mean L2 distance between ``h(src)`` and the ground-truth targets.

    ``pairs`` is an ``(N, 4)`` array of ``x1 y1 x2 y2`` rows.
    """
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    if pairs.size == 0:
        raise ValueError("pme needs at least one point pair")
    pred = geometry.apply(h, pairs[:, :2])
    return float(np.mean(np.linalg.norm(pred - pairs[:, 2:4], axis=1)))


def inlier_curve(errors, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[float, float]]:
    """Fraction of errors at or below each threshold."""
    errs = np.asarray(errors, dtype=float).ravel()
    if errs.size == 0:
        raise ValueError("inlier_curve needs at least one error")
    return [(float(t), float(np.count_nonzero(errs <= t) / errs.size)) for t in thresholds]


def error_heatmap(warped, target, validity=None) -> np.ndarray:
    """8-bit ``|warped - target|`` restricted to valid pixels (black means aligned)."""
    warped = np.asarray(warped, dtype=float)
    target = np.asarray(target, dtype=float)
    if warped.shape != target.shape:
        raise DimensionMismatch(f"heatmap inputs differ: {warped.shape} vs {target.shape}")
    diff = np.abs(warped - target)
    if validity is not None:
        if np.shape(validity) != diff.shape:
            raise DimensionMismatch("validity mask shape differs from frames")
        diff = diff * np.asarray(validity, dtype=float)
    return to_uint8(diff)


def summarize(errors, thresholds=DEFAULT_THRESHOLDS) -> dict:
    errs = np.asarray(errors, dtype=float)
    return {
        "count": int(errs.size),
        "mean": float(np.mean(errs)),
        "median": float(np.median(errs)),
        "std": float(np.std(errs)),
        "curve": [{"threshold": t, "fraction": f} for t, f in inlier_curve(errs, thresholds)],
    }


# --- files -----------------------------------------------------------------------

def read_points(path) -> np.ndarray:
    """Parse ``x1 y1 x2 y2`` lines (``#`` starts a comment) into an ``(N, 4)`` array."""
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"expected 4 values, found {len(parts)}", line=lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise FormatError(f"non-numeric value in {line!r}", line=lineno) from None
            if not np.all(np.isfinite(vals)):
                raise FormatError("non-finite coordinate", line=lineno)
            rows.append(vals)
    if not rows:
        raise FormatError(f"no point pairs in {path}", line=1)
    return np.array(rows)


def write_points(path, pairs) -> None:
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    lines = ["# x1 y1 x2 y2"] + [" ".join(repr(float(v)) for v in row) for row in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def save_scene(scene: SynthScene, out_dir) -> dict[str, Path]:
    """Materialise a scene as PNGs, ``gt_h.json``, ``points.txt`` and ``scene.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "frame_a": out / "frame_a.png",
        "frame_b": out / "frame_b.png",
        "foreground_mask": out / "foreground_mask.png",
        "gt_h": out / "gt_h.json",
        "points": out / "points.txt",
        "scene": out / "scene.json",
    }
    write_frame(paths["frame_a"], scene.frame_a)
    write_frame(paths["frame_b"], scene.frame_b)
    write_frame(paths["foreground_mask"], scene.foreground_mask)
    paths["gt_h"].write_text(geometry.to_json(scene.gt_h) + "\n")
    write_points(paths["points"], scene.point_pairs)
    paths["scene"].write_text(json.dumps({"seed": scene.seed, "params": asdict(scene.params)}, indent=2, sort_keys=True) + "\n")
    return paths


def load_scene_files(scene_dir) -> dict:
    d = Path(scene_dir)
    return {
        "frame_a": read_frame(d / "frame_a.png"),
        "frame_b": read_frame(d / "frame_b.png"),
        "gt_h": geometry.from_json((d / "gt_h.json").read_text()),
        "points": read_points(d / "points.txt"),
    }
