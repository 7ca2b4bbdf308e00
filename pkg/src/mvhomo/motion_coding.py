"""Block motion estimation, RD cost model and the MVF sidecar format.

Motion vectors follow codec convention: the block of ``current`` at ``x`` is predicted
from ``reference`` at ``x + mv``. Vectors are stored in quarter-pel units on an 8x8
grid. Distortion is the SAD on the 8-bit intensity scale (frame values times 255),
so ``lam`` is in SAD units per bit as in a real encoder.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FormatError, ImageTooSmall, VersionError
from .imaging import clamped_sample, downsample2

BLOCK_SIZE = 8
QPEL = 4
PIXEL_SCALE = 255.0
FLAG_BITS = 1


class BlockMode(enum.IntEnum):
    SEARCH = 0
    ZERO = 1
    MERGE = 2


class SearchAlgorithm(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    TSS = "tss"
    DIAMOND = "diamond"


# tie-break rank among equal-cost, equal-|mvd| decisions
_MODE_RANK = {BlockMode.ZERO: 0, BlockMode.MERGE: 1, BlockMode.SEARCH: 2}


@dataclass(frozen=True)
class RDParams:
    lam: float = 4.0
    search_range: int = 16
    algorithm: SearchAlgorithm = SearchAlgorithm.DIAMOND
    merge_enabled: bool = True
    # half- then quarter-pel refinement of the integer winner
    subpel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", SearchAlgorithm(self.algorithm))
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.search_range < 1:
            raise ValueError(f"search_range must be >= 1, got {self.search_range}")


@dataclass
class MotionVectorField:
    """Quarter-pel MVs on a ``ceil(H/8) x ceil(W/8)`` block grid.

    ``mv`` has shape ``(rows, cols, 2)`` holding ``(mv_x, mv_y)``; ``ref_idx`` and
    ``mode`` have shape ``(rows, cols)``.
    """

    width: int
    height: int
    mv: np.ndarray
    ref_idx: np.ndarray = None
    mode: np.ndarray = None
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        rows, cols = grid_shape(self.width, self.height, self.block_size)
        self.mv = np.asarray(self.mv, dtype=np.int64).reshape(rows, cols, 2)
        if self.ref_idx is None:
            self.ref_idx = np.zeros((rows, cols), dtype=np.int64)
        if self.mode is None:
            self.mode = np.full((rows, cols), int(BlockMode.SEARCH), dtype=np.int64)
        self.ref_idx = np.asarray(self.ref_idx, dtype=np.int64).reshape(rows, cols)
        self.mode = np.asarray(self.mode, dtype=np.int64).reshape(rows, cols)
        if np.any(self.ref_idx < 0):
            raise ValueError("ref_idx must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mv.shape[:2]

    def records(self):
        rows, cols = self.shape
        for by in range(rows):
            for bx in range(cols):
                yield {
                    "block_x": bx,
                    "block_y": by,
                    "mv_x_qpel": int(self.mv[by, bx, 0]),
                    "mv_y_qpel": int(self.mv[by, bx, 1]),
                    "ref_idx": int(self.ref_idx[by, bx]),
                    "mode": BlockMode(self.mode[by, bx]).name,
                }

    def mode_histogram(self) -> dict[str, int]:
        return {m.name: int(np.count_nonzero(self.mode == m)) for m in BlockMode}

    def __eq__(self, other):
        if not isinstance(other, MotionVectorField):
            return NotImplemented
        return (
            (self.width, self.height, self.block_size) == (other.width, other.height, other.block_size)
            and np.array_equal(self.mv, other.mv)
            and np.array_equal(self.ref_idx, other.ref_idx)
            and np.array_equal(self.mode, other.mode)
        )


def grid_shape(width: int, height: int, block_size: int = BLOCK_SIZE) -> tuple[int, int]:
    return math.ceil(height / block_size), math.ceil(width / block_size)


# --- rate model ------------------------------------------------------------

def se_golomb_length(value: int) -> int:
    """Bit length of the signed Exp-Golomb code se(v)."""
    v = int(value)
    code = 2 * v - 1 if v > 0 else -2 * v
    return 2 * int(math.floor(math.log2(code + 1))) + 1


def rate_bits(mvd_qpel, mode: BlockMode = BlockMode.SEARCH) -> int:
    """Bits to signal a block: a flag for Zero/Merge, se(v) per MVD component otherwise."""
    if mode != BlockMode.SEARCH:
        return FLAG_BITS
    return se_golomb_length(mvd_qpel[0]) + se_golomb_length(mvd_qpel[1])


def _block_bounds(bx: int, by: int, width: int, height: int, block_size: int):
    x0, y0 = bx * block_size, by * block_size
    return x0, y0, min(x0 + block_size, width), min(y0 + block_size, height)


def displaced_block(reference: np.ndarray, x0: int, y0: int, x1: int, y1: int, mv_qpel) -> np.ndarray:
    """Reference samples for block ``[x0:x1, y0:y1]`` displaced by ``mv_qpel`` (clamped edges)."""
    h, w = reference.shape
    mvx, mvy = int(mv_qpel[0]), int(mv_qpel[1])
    if mvx % QPEL == 0 and mvy % QPEL == 0:
        ys = np.clip(np.arange(y0, y1) + mvy // QPEL, 0, h - 1)
        xs = np.clip(np.arange(x0, x1) + mvx // QPEL, 0, w - 1)
        return reference[np.ix_(ys, xs)]
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(float)
    return clamped_sample(reference, xx + mvx / QPEL, yy + mvy / QPEL)


def block_sad(current: np.ndarray, reference: np.ndarray, bx: int, by: int, mv_qpel, block_size: int = BLOCK_SIZE) -> float:
    h, w = current.shape
    x0, y0, x1, y1 = _block_bounds(bx, by, w, h, block_size)
    ref = displaced_block(reference, x0, y0, x1, y1, mv_qpel)
    return float(np.abs(current[y0:y1, x0:x1] - ref).sum() * PIXEL_SCALE)


def rd_cost(current, reference, block, candidate_mv, predicted_mv, lam: float,
            mode: BlockMode = BlockMode.SEARCH, block_size: int = BLOCK_SIZE) -> float:
    """``SAD + lam * rate`` for one block and one candidate MV (quarter-pel units)."""
    current = np.asarray(current, dtype=float)
    reference = np.asarray(reference, dtype=float)
    bx, by = block
    mvd = (candidate_mv[0] - predicted_mv[0], candidate_mv[1] - predicted_mv[1])
    return block_sad(current, reference, bx, by, candidate_mv, block_size) + lam * rate_bits(mvd, mode)


# --- motion search ---------------------------------------------------------

_LDSP = [(0, 0), (2, 0), (-2, 0), (0, 2), (0, -2), (1, 1), (1, -1), (-1, 1), (-1, -1)]
_SDSP = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
_SUBPEL = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]


def _sad_cube(current: np.ndarray, reference: np.ndarray, search_range: int, block_size: int) -> np.ndarray:
    """SAD of every block at every integer displacement, ``(2R+1, 2R+1, rows, cols)``."""
    h, w = current.shape
    r = search_range
    rows, cols = grid_shape(w, h, block_size)
    padded = np.pad(reference, r, mode="edge")
    cube = np.empty((2 * r + 1, 2 * r + 1, rows, cols))
    ph, pw = rows * block_size, cols * block_size
    diff = np.zeros((ph, pw))
    for iy, dy in enumerate(range(-r, r + 1)):
        for ix, dx in enumerate(range(-r, r + 1)):
            diff[:h, :w] = np.abs(current - padded[r + dy:r + dy + h, r + dx:r + dx + w])
            cube[iy, ix] = diff.reshape(rows, block_size, cols, block_size).sum(axis=(1, 3))
    return cube * PIXEL_SCALE


def _coarse_seeds(current: np.ndarray, reference: np.ndarray, search_range: int, block_size: int) -> np.ndarray:
    """Start vectors from an exhaustive search at quarter resolution.

    Each 8x8 block inherits the best shift of the 16x16 footprint that contains it.
    """
    h, w = current.shape
    rows, cols = grid_shape(w, h, block_size)
    cur_q = downsample2(downsample2(current))
    ref_q = downsample2(downsample2(reference))
    coarse_block = max(block_size // 2, 1)
    r = max(math.ceil(search_range / 4), 1)
    if min(cur_q.shape) < coarse_block:
        return np.zeros((rows, cols, 2), dtype=np.int64)
    cube = _sad_cube(cur_q, ref_q, r, coarse_block)
    flat = cube.reshape((2 * r + 1) ** 2, *cube.shape[2:])
    best = np.argmin(flat, axis=0)
    dy, dx = np.divmod(best, 2 * r + 1)
    shift = np.stack([dx - r, dy - r], axis=-1) * 4 * QPEL
    shift = np.clip(shift, -search_range * QPEL, search_range * QPEL)
    iy = np.minimum(np.arange(rows) // 2, shift.shape[0] - 1)
    ix = np.minimum(np.arange(cols) // 2, shift.shape[1] - 1)
    return shift[np.ix_(iy, ix)]


class _BlockSearch:
    """Per-block RD search with memoised SADs."""

    def __init__(self, current, reference, params: RDParams, block_size: int, cube=None):
        self.current = current
        self.reference = reference
        self.params = params
        self.block_size = block_size
        self.cube = cube
        self.r = params.search_range
        self.lam = params.lam
        self._visited = None
        self._cache: dict = {}
        self._planes: dict = {}

    def sad(self, bx, by, mv_qpel) -> float:
        mvx, mvy = mv_qpel
        if self.cube is not None and mvx % QPEL == 0 and mvy % QPEL == 0:
            return float(self.cube[mvy // QPEL + self.r, mvx // QPEL + self.r, by, bx])
        key = (bx, by, mvx, mvy)
        if key not in self._cache:
            h, w = self.current.shape
            x0, y0, x1, y1 = _block_bounds(bx, by, w, h, self.block_size)
            plane, pad = self._phase_plane(mvx % QPEL, mvy % QPEL)
            ox, oy = mvx // QPEL + pad, mvy // QPEL + pad
            ref = plane[y0 + oy:y1 + oy, x0 + ox:x1 + ox]
            self._cache[key] = float(np.abs(self.current[y0:y1, x0:x1] - ref).sum() * PIXEL_SCALE)
        return self._cache[key]

    def _phase_plane(self, fx, fy):
        # reference resampled at one quarter-pel phase over a padded grid; same
        # arithmetic as displaced_block, so SADs match block_sad exactly
        if (fx, fy) not in self._planes:
            h, w = self.reference.shape
            pad = self.r + 2
            yy, xx = np.mgrid[-pad:h + pad, -pad:w + pad].astype(float)
            self._planes[(fx, fy)] = clamped_sample(self.reference, xx + fx / QPEL, yy + fy / QPEL)
        return self._planes[(fx, fy)], self.r + 2

    def in_range(self, mv_qpel) -> bool:
        lim = self.r * QPEL
        return abs(mv_qpel[0]) <= lim and abs(mv_qpel[1]) <= lim

    def key(self, bx, by, mv, pred, mode=BlockMode.SEARCH):
        mvd = (mv[0] - pred[0], mv[1] - pred[1])
        cost = self.sad(bx, by, mv) + self.lam * rate_bits(mvd, mode)
        return (cost, abs(mvd[0]) + abs(mvd[1]), _MODE_RANK[mode], abs(mv[1]), mv[1], abs(mv[0]), mv[0])

    def best_of(self, bx, by, candidates, pred):
        best = None
        for mv in candidates:
            if not self.in_range(mv):
                continue
            if self._visited is not None:
                self._visited.add((int(mv[0]), int(mv[1])))
            k = self.key(bx, by, mv, pred)
            if best is None or k < best[0]:
                best = (k, mv)
        return best

    def exhaustive(self, bx, by, pred) -> tuple:
        r = self.r
        costs = self.cube[:, :, by, bx]
        d = np.arange(-r, r + 1) * QPEL
        mvd_x = d[None, :] - pred[0]
        mvd_y = d[:, None] - pred[1]
        if self.lam:
            costs = costs + self.lam * (_se_lengths(mvd_x) + _se_lengths(mvd_y))
        mvd = np.abs(mvd_x) + np.abs(mvd_y)
        ax, ay = np.broadcast_to(np.abs(d)[None, :], costs.shape), np.broadcast_to(np.abs(d)[:, None], costs.shape)
        sx, sy = np.broadcast_to(d[None, :], costs.shape), np.broadcast_to(d[:, None], costs.shape)
        # same lexicographic order as key()
        order = np.lexsort([sx.ravel(), ax.ravel(), sy.ravel(), ay.ravel(), mvd.ravel(), costs.ravel()])
        iy, ix = np.unravel_index(order[0], costs.shape)
        mv = (int(d[ix]), int(d[iy]))
        return self.key(bx, by, mv, pred), mv

    def integer_search(self, bx, by, pred, seeds=()) -> tuple:
        alg = self.params.algorithm
        if alg == SearchAlgorithm.EXHAUSTIVE:
            return self.exhaustive(bx, by, pred)
        starts = [(_round_pel(pred[0]), _round_pel(pred[1])), (0, 0)]
        starts += [(_round_pel(m[0]), _round_pel(m[1])) for m in seeds]
        start = self.best_of(bx, by, starts, pred)
        cx, cy = start[1][0] // QPEL, start[1][1] // QPEL
        best = start
        if alg == SearchAlgorithm.TSS:
            step = 1
            while 2 * step - 1 < self.r:
                step *= 2
            while step >= 1:
                cands = [((cx + dx) * QPEL, (cy + dy) * QPEL) for dy in (-step, 0, step) for dx in (-step, 0, step)]
                cand = self.best_of(bx, by, cands, pred)
                if cand[0] < best[0]:
                    best = cand
                cx, cy = best[1][0] // QPEL, best[1][1] // QPEL
                step //= 2
            return best
        for _ in range(4 * self.r + 4):
            cand = self.best_of(bx, by, [((cx + dx) * QPEL, (cy + dy) * QPEL) for dx, dy in _LDSP], pred)
            if cand[0] < best[0]:
                best = cand
            nx, ny = best[1][0] // QPEL, best[1][1] // QPEL
            if (nx, ny) == (cx, cy):
                break
            cx, cy = nx, ny
        cand = self.best_of(bx, by, [((cx + dx) * QPEL, (cy + dy) * QPEL) for dx, dy in _SDSP], pred)
        return min(best, cand)

    def refine(self, bx, by, best, pred):
        for step in (2, 1):
            cx, cy = best[1]
            cand = self.best_of(bx, by, [(cx + dx * step, cy + dy * step) for dx, dy in _SUBPEL], pred)
            if cand is not None and cand[0] < best[0]:
                best = cand
        return best

    def search_best(self, bx, by, pred, seeds=()):
        """Best Search-mode candidate under the current ``lam``.

        The search walks by distortion alone and the RD cost then picks among the
        visited vectors. The candidate set therefore does not depend on ``lam``, so
        raising ``lam`` can only move blocks towards the low-rate modes.
        """
        lam, self.lam = self.lam, 0.0
        self._visited = set()
        try:
            walk = self.integer_search(bx, by, pred, seeds)
            if self.params.subpel:
                self.refine(bx, by, walk, pred)
            visited = self._visited
        finally:
            self.lam, self._visited = lam, None
        if self.params.algorithm == SearchAlgorithm.EXHAUSTIVE:
            visited = {mv for mv in visited if mv[0] % QPEL or mv[1] % QPEL}
            best = self.exhaustive(bx, by, pred)
        else:
            best = None
        for mv in visited:
            k = self.key(bx, by, mv, pred)
            if best is None or k < best[0]:
                best = (k, mv)
        return best

    def decide(self, bx, by, pred, seeds=()):
        best = self.search_best(bx, by, pred, seeds)
        options = [(best[0], best[1], BlockMode.SEARCH)]
        options.append((self.key(bx, by, (0, 0), pred, BlockMode.ZERO), (0, 0), BlockMode.ZERO))
        if self.params.merge_enabled and self.in_range(pred):
            options.append((self.key(bx, by, pred, pred, BlockMode.MERGE), tuple(pred), BlockMode.MERGE))
        _, mv, mode = min(options, key=lambda o: o[0])
        return mv, mode


def _se_lengths(v: np.ndarray) -> np.ndarray:
    code = np.where(v > 0, 2 * v - 1, -2 * v)
    return 2 * np.floor(np.log2(code + 1)) + 1


def _round_pel(qpel: int) -> int:
    return int(math.floor(qpel / QPEL + 0.5)) * QPEL


def predict_mvs(mv: np.ndarray) -> np.ndarray:
    """Median of left, top and top-right neighbours; missing neighbours count as zero."""
    rows, cols, _ = mv.shape
    padded = np.zeros((rows + 1, cols + 2, 2), dtype=np.int64)
    padded[1:, 1:-1] = mv
    left = padded[1:, :-2]
    top = padded[:-1, 1:-1]
    top_right = padded[:-1, 2:]
    return np.median(np.stack([left, top, top_right]), axis=0).astype(np.int64)


def estimate_motion(current, reference, params: RDParams | None = None,
                    block_size: int = BLOCK_SIZE) -> MotionVectorField:
    """RD-optimised block motion estimation of ``current`` against ``reference``.

    TSS and Diamond searches are seeded by a quarter-resolution exhaustive pre-search.
    Two passes follow: the first searches each block independently with a zero predictor
    and no rate term.
    The second prices MVs against the median predictor built from the first pass,
    starts the search from the best of the predictor, zero and the first-pass MVs of
    the 3x3 neighbourhood, and makes the final Search/Zero/Merge decision. Both passes
    are independent across blocks.
    """
    params = params or RDParams()
    current = np.asarray(current, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if current.shape != reference.shape:
        raise DimensionMismatch(f"frame shapes differ: {current.shape} vs {reference.shape}")
    h, w = current.shape
    if min(h, w) < block_size:
        raise ImageTooSmall(f"frames must be at least {block_size}x{block_size}")
    rows, cols = grid_shape(w, h, block_size)
    cube = None
    if params.algorithm == SearchAlgorithm.EXHAUSTIVE:
        cube = _sad_cube(current, reference, params.search_range, block_size)
    else:
        coarse = _coarse_seeds(current, reference, params.search_range, block_size)
    search = _BlockSearch(current, reference, params, block_size, cube)

    # pass 1 only builds predictors; pricing it by distortion alone keeps the
    # predictors independent of lam, so low-rate modes can only gain as lam grows
    search.lam = 0.0
    first = np.zeros((rows, cols, 2), dtype=np.int64)
    for by in range(rows):
        for bx in range(cols):
            seeds = () if cube is not None else [coarse[by, bx].tolist()]
            first[by, bx], _ = search.decide(bx, by, (0, 0), seeds)

    search.lam = params.lam
    preds = predict_mvs(first)
    mv = np.zeros_like(first)
    mode = np.zeros((rows, cols), dtype=np.int64)
    for by in range(rows):
        for bx in range(cols):
            pred = (int(preds[by, bx, 0]), int(preds[by, bx, 1]))
            seeds = first[max(by - 1, 0):by + 2, max(bx - 1, 0):bx + 2].reshape(-1, 2).tolist()
            if cube is None:
                seeds.append(coarse[by, bx].tolist())
            mv[by, bx], mode[by, bx] = search.decide(bx, by, pred, seeds)
    return MotionVectorField(w, h, mv, np.zeros((rows, cols), dtype=np.int64), mode, block_size)


# --- flows -------------------------------------------------------------------

def to_dense_flow(mvf: MotionVectorField) -> np.ndarray:
    """Replicate each block's MV (in pixels) over its pixels; returns ``(2, H, W)``."""
    b = mvf.block_size
    pix = mvf.mv.astype(float) / QPEL
    dense = np.repeat(np.repeat(pix, b, axis=0), b, axis=1)[: mvf.height, : mvf.width]
    return np.ascontiguousarray(np.moveaxis(dense, 2, 0))


def block_average(flow: np.ndarray, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Mean flow per block (partial edge blocks average their in-frame pixels)."""
    _, h, w = flow.shape
    rows, cols = grid_shape(w, h, block_size)
    out = np.zeros((rows, cols, 2))
    for by in range(rows):
        for bx in range(cols):
            x0, y0, x1, y1 = _block_bounds(bx, by, w, h, block_size)
            out[by, bx] = flow[:, y0:y1, x0:x1].reshape(2, -1).mean(axis=1)
    return out


def scale_flow(flow, factor: float = 0.5) -> np.ndarray:
    """Resample a flow to the next pyramid level(s) and scale the vectors.

    ``factor`` 0.5 is one 2x box downsampling, 0.25 two of them, 1.0 a copy.
    """
    flow = np.asarray(flow, dtype=float)
    steps = {1.0: 0, 0.5: 1, 0.25: 2}.get(float(factor))
    if steps is None:
        raise ValueError(f"factor must be one of 1.0, 0.5, 0.25, got {factor}")
    out = flow
    for _ in range(steps):
        out = np.stack([downsample2(out[0]), downsample2(out[1])])
    return out * factor if steps else out.copy()


def motion_compensate(reference, mvf: MotionVectorField) -> np.ndarray:
    """Block-wise prediction of the current frame (no residual, no loop filter)."""
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (mvf.height, mvf.width):
        raise DimensionMismatch(f"reference is {reference.shape}, MV field is {(mvf.height, mvf.width)}")
    flow = to_dense_flow(mvf)
    ys, xs = np.mgrid[0:mvf.height, 0:mvf.width].astype(float)
    return clamped_sample(reference, xs + flow[0], ys + flow[1])


# --- sidecar I/O --------------------------------------------------------------

MVF_MAGIC = b"MVF1"
_HEADER = struct.Struct("<4sIIII")
_RECORD = struct.Struct("<HHhhBB")


def write_mvf(mvf: MotionVectorField, path) -> None:
    """Binary sidecar, or the JSON mirror when ``path`` ends in ``.json``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {
            "width": mvf.width,
            "height": mvf.height,
            "block_size": mvf.block_size,
            "records": list(mvf.records()),
        }
        path.write_text(json.dumps(doc, indent=1))
        return
    rows, cols = mvf.shape
    chunks = [_HEADER.pack(MVF_MAGIC, mvf.width, mvf.height, mvf.block_size, rows * cols)]
    for rec in mvf.records():
        chunks.append(_RECORD.pack(rec["block_x"], rec["block_y"], rec["mv_x_qpel"], rec["mv_y_qpel"],
                                   rec["ref_idx"], int(BlockMode[rec["mode"]])))
    path.write_bytes(b"".join(chunks))


def _parse_mode(value, where: dict) -> int:
    try:
        if isinstance(value, str):
            return int(BlockMode[value.upper()])
        return int(BlockMode(int(value)))
    except (KeyError, ValueError):
        raise FormatError(f"unknown block mode {value!r}", **where) from None


def _from_records(width, height, block_size, records, where_of) -> MotionVectorField:
    if width <= 0 or height <= 0 or block_size <= 0:
        raise FormatError("width, height and block_size must be positive", **where_of(None))
    rows, cols = grid_shape(width, height, block_size)
    if len(records) != rows * cols:
        raise FormatError(f"expected {rows * cols} records for a {cols}x{rows} grid, found {len(records)}",
                          **where_of(None))
    mv = np.zeros((rows, cols, 2), dtype=np.int64)
    ref = np.zeros((rows, cols), dtype=np.int64)
    mode = np.zeros((rows, cols), dtype=np.int64)
    seen = np.zeros((rows, cols), dtype=bool)
    for i, (bx, by, mx, my, r, m) in enumerate(records):
        where = where_of(i)
        if not (0 <= bx < cols and 0 <= by < rows):
            raise FormatError(f"block ({bx}, {by}) outside {cols}x{rows} grid", **where)
        if seen[by, bx]:
            raise FormatError(f"duplicate record for block ({bx}, {by})", **where)
        if r < 0:
            raise FormatError("ref_idx must be >= 0", **where)
        seen[by, bx] = True
        mv[by, bx] = (mx, my)
        ref[by, bx] = r
        mode[by, bx] = _parse_mode(m, where)
    return MotionVectorField(width, height, mv, ref, mode, block_size)


def _read_binary(data: bytes) -> MotionVectorField:
    if len(data) < 4 or data[:4] != MVF_MAGIC:
        if len(data) < 4:
            raise FormatError("file too short for magic", offset=len(data))
        raise VersionError(f"unknown magic {data[:4]!r}", offset=0)
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    _, width, height, block_size, count = _HEADER.unpack_from(data)
    records = []
    for i in range(count):
        off = _HEADER.size + i * _RECORD.size
        if off + _RECORD.size > len(data):
            raise FormatError(f"truncated record {i} of {count}", offset=off)
        records.append(_RECORD.unpack_from(data, off))
    end = _HEADER.size + count * _RECORD.size
    if len(data) != end:
        raise FormatError(f"{len(data) - end} trailing bytes after last record", offset=end)
    return _from_records(width, height, block_size, records,
                         lambda i: {"offset": 0 if i is None else _HEADER.size + i * _RECORD.size})


def _read_json(text: str) -> MotionVectorField:
    try:
        doc = json.loads(text)
        records = [(int(r["block_x"]), int(r["block_y"]), int(r["mv_x_qpel"]), int(r["mv_y_qpel"]),
                    int(r.get("ref_idx", 0)), r.get("mode", "SEARCH")) for r in doc["records"]]
        width, height = int(doc["width"]), int(doc["height"])
        block_size = int(doc.get("block_size", BLOCK_SIZE))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed MVF JSON: {exc}", offset=getattr(exc, "pos", None)) from None
    return _from_records(width, height, block_size, records, lambda i: {})


def read_mvf(path) -> MotionVectorField:
    """Read a binary ``MVF1`` sidecar or its JSON mirror (detected by content)."""
    data = Path(path).read_bytes()
    if data.lstrip()[:1] == b"{":
        return _read_json(data.decode("utf-8", errors="replace"))
    return _read_binary(data)
