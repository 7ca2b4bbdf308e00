"""Homographies as plain 3x3 float arrays.

A homography ``h`` maps pixel ``(x, y)`` of frame *a* to ``h(x, y)`` in frame *b*.
Arrays are normalised so ``h[2, 2] == 1``. Point sets are ``(N, 2)`` arrays and
flow fields are ``(2, H, W)`` arrays holding ``(u, v)`` per pixel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateConfiguration, PointAtInfinity

DENOM_EPS = 1e-12
DET_EPS = 1e-12
# ratio of 8th to 1st singular value below which the DLT system is rank deficient
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Correspondence:
    src: tuple[float, float]
    dst: tuple[float, float]
    weight: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must be in [0, 1], got {self.weight}")
        if not np.all(np.isfinite([*self.src, *self.dst])):
            raise ValueError("correspondence coordinates must be finite")


def identity() -> np.ndarray:
    return np.eye(3)


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def normalize(h) -> np.ndarray:
    """Scale ``h`` so the bottom-right entry is 1 and check invertibility."""
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise DegenerateConfiguration("homography has non-finite entries")
    if abs(h[2, 2]) < DENOM_EPS:
        raise DegenerateConfiguration("homography has h33 == 0")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise DegenerateConfiguration("homography is singular")
    return h


def apply(h, points) -> np.ndarray:
    """Map points through ``h`` with perspective division.

    Accepts a single ``(x, y)`` pair or an ``(N, 2)`` array and returns the same shape.
    """
    h = np.asarray(h, dtype=float)
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x = h[0, 0] * p[:, 0] + h[0, 1] * p[:, 1] + h[0, 2]
    y = h[1, 0] * p[:, 0] + h[1, 1] * p[:, 1] + h[1, 2]
    w = h[2, 0] * p[:, 0] + h[2, 1] * p[:, 1] + h[2, 2]
    if np.any(np.abs(w) <= DENOM_EPS):
        raise PointAtInfinity("point maps to infinity under homography")
    out = np.stack([x / w, y / w], axis=1)
    return out[0] if single else out


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel coordinates as float ``(xs, ys)`` arrays of shape ``(height, width)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return xs, ys


def map_grid(h, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Image of every pixel of a ``width x height`` grid under ``h``."""
    h = np.asarray(h, dtype=float)
    xs, ys = pixel_grid(width, height)
    w = h[2, 0] * xs + h[2, 1] * ys + h[2, 2]
    if np.any(np.abs(w) <= DENOM_EPS):
        raise PointAtInfinity("grid pixel maps to infinity under homography")
    mx = (h[0, 0] * xs + h[0, 1] * ys + h[0, 2]) / w
    my = (h[1, 0] * xs + h[1, 1] * ys + h[1, 2]) / w
    return mx, my


def homography_flow(h, width: int, height: int) -> np.ndarray:
    """Dense displacement ``h(x) - x`` as a ``(2, height, width)`` flow field."""
    xs, ys = pixel_grid(width, height)
    mx, my = map_grid(h, width, height)
    return np.stack([mx - xs, my - ys])


def compose(h1, h2) -> np.ndarray:
    """Matrix product ``h1 @ h2``: apply ``h2`` first, then ``h1``."""
    return normalize(normalize(h1) @ normalize(h2))


def invert(h) -> np.ndarray:
    return normalize(np.linalg.inv(normalize(h)))


def _scaling(sx: float, sy: float, pixel_centers: bool) -> np.ndarray:
    if pixel_centers:
        # pixel j of a 2x box-downsampled image is centred on fine pixels 2j, 2j+1
        return np.array([[sx, 0.0, (sx - 1) / 2], [0.0, sy, (sy - 1) / 2], [0.0, 0.0, 1.0]])
    return np.diag([sx, sy, 1.0])


def rescale(h, sx: float, sy: float, pixel_centers: bool = False) -> np.ndarray:
    """Express ``h`` in coordinates scaled by ``(sx, sy)``.

    With ``pixel_centers=False`` this is the pure conjugation ``S h S^-1`` so that
    ``apply(rescale(h, s, s), s * p) == s * apply(h, p)``. With ``pixel_centers=True``
    the scaling also carries the half-pixel shift of box-filter resampling, which is
    what pyramid levels need.
    """
    if sx <= 0 or sy <= 0:
        raise DegenerateConfiguration("scale factors must be positive")
    s = _scaling(sx, sy, pixel_centers)
    return normalize(s @ normalize(h) @ np.linalg.inv(s))


def image_corners(width: int, height: int) -> np.ndarray:
    """Outermost pixel centres, clockwise from the top-left, as a ``(4, 2)`` array."""
    return np.array([[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]])


def _four_point_system(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    return a, b


def _corner_frame(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    corners = image_corners(width, height)
    t = np.diag([1.0 / max(width - 1, 1), 1.0 / max(height - 1, 1), 1.0])
    return corners, t


def corners_to_homography(offsets, width: int, height: int) -> np.ndarray:
    """Exact 4-point homography moving each image corner by its ``(dx, dy)`` offset.

    ``offsets`` is a ``(4, 2)`` array (or 8 values) ordered as :func:`image_corners`.
    """
    offsets = np.asarray(offsets, dtype=float).reshape(4, 2)
    corners, t = _corner_frame(width, height)
    src = corners @ t[:2, :2].T
    dst = (corners + offsets) @ t[:2, :2].T
    a, b = _four_point_system(src, dst)
    if abs(np.linalg.det(a)) < 1e-14:
        raise DegenerateConfiguration("corner quad is degenerate")
    hn = np.append(np.linalg.solve(a, b), 1.0).reshape(3, 3)
    return normalize(np.linalg.inv(t) @ hn @ t)


def homography_to_corners(h, width: int, height: int) -> np.ndarray:
    """Corner offsets ``h(c) - c`` as a ``(4, 2)`` array."""
    corners = image_corners(width, height)
    return apply(h, corners) - corners


def corner_jacobian(h, width: int, height: int) -> np.ndarray:
    """Derivative of the normalised matrix of ``h`` w.r.t. its 8 corner offsets.

    Returns an ``(8, 3, 3)`` array; parameter ``2*i + k`` is coordinate ``k`` of corner ``i``.
    """
    corners, t = _corner_frame(width, height)
    tinv = np.linalg.inv(t)
    hn = t @ normalize(h) @ tinv
    src = corners @ t[:2, :2].T
    dst = apply(hn, src)
    a, _ = _four_point_system(src, dst)
    ainv = np.linalg.inv(a)
    scale = (t[0, 0], t[1, 1])
    out = np.zeros((8, 3, 3))
    for i, (x, y) in enumerate(src):
        w = hn[2, 0] * x + hn[2, 1] * y + 1.0
        for k in range(2):
            col = ainv[:, 2 * i + k] * w * scale[k]
            dhn = np.append(col, 0.0).reshape(3, 3)
            out[2 * i + k] = tinv @ dhn @ t
    return out


def point_jacobian(h, points, dh) -> np.ndarray:
    """Chain rule from matrix derivatives to mapped-point derivatives.

    ``dh`` is ``(P, 3, 3)``; returns ``(N, 2, P)`` holding d h(p) / d param.
    """
    h = np.asarray(h, dtype=float)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    ph = np.column_stack([p, np.ones(len(p))])
    q = ph @ h.T
    w = q[:, 2]
    mapped = q[:, :2] / w[:, None]
    dq = np.einsum("pij,nj->npi", dh, ph)
    jac = (dq[:, :, :2] - mapped[:, None, :] * dq[:, :, 2:3]) / w[:, None, None]
    return np.transpose(jac, (0, 2, 1))


def _weighted_similarity(points: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = (w[:, None] * points).sum(axis=0) / w.sum()
    d = (w * np.linalg.norm(points - c, axis=1)).sum() / w.sum()
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def correspondence_arrays(correspondences: Sequence[Correspondence]):
    src = np.array([c.src for c in correspondences], dtype=float).reshape(-1, 2)
    dst = np.array([c.dst for c in correspondences], dtype=float).reshape(-1, 2)
    w = np.array([c.weight for c in correspondences], dtype=float)
    return src, dst, w


def dlt_solve(src, dst=None, weights=None, min_count: int = 4) -> np.ndarray:
    """Weighted, Hartley-normalised DLT.

    Either pass ``(src, dst, weights)`` arrays or a list of :class:`Correspondence`
    as the only argument. Rows are scaled by ``sqrt(weight)``; zero-weight
    correspondences are dropped, which makes them identical to omission.
    """
    if dst is None:
        src, dst, weights = correspondence_arrays(src)
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float).ravel()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if len(src) < max(min_count, 4):
        raise DegenerateConfiguration(f"need at least {max(min_count, 4)} weighted correspondences, got {len(src)}")

    t_src = _weighted_similarity(src, w)
    t_dst = _weighted_similarity(dst, w)
    xs = src * t_src[0, 0] + t_src[:2, 2]
    xd = dst * t_dst[0, 0] + t_dst[:2, 2]

    n = len(xs)
    x, y = xs[:, 0], xs[:, 1]
    u, v = xd[:, 0], xd[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v])
    a *= np.repeat(np.sqrt(w), 2)[:, None]

    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfiguration("design matrix is rank deficient (collinear or coincident points)")
    hn = vt[-1].reshape(3, 3)
    return normalize(np.linalg.inv(t_dst) @ hn @ t_src)


def corner_error(h_est, h_true, width: int, height: int, reduce: str = "mean") -> float:
    """Distance between the images of the four corners under two homographies."""
    corners = image_corners(width, height)
    d = np.linalg.norm(apply(h_est, corners) - apply(h_true, corners), axis=1)
    return float(d.max() if reduce == "max" else d.mean())


def to_json(h) -> str:
    return json.dumps({"h": [float(v) for v in normalize(h).ravel()]})


def from_json(text: str) -> np.ndarray:
    data = json.loads(text)
    values = data["h"] if isinstance(data, dict) else data
    if len(values) != 9:
        raise ValueError("homography JSON needs 9 values")
    return normalize(np.array(values, dtype=float).reshape(3, 3))


def to_text(h) -> str:
    return " ".join(repr(float(v)) for v in normalize(h).ravel())


def from_text(text: str) -> np.ndarray:
    values = [float(tok) for tok in text.split()]
    if len(values) != 9:
        raise ValueError("homography text needs 9 values")
    return normalize(np.array(values).reshape(3, 3))
