"""Command-line entry point: ``mvhomo {motion,estimate,eval,synth}``.

Exit codes: 0 success, 1 invalid parameters, 2 I/O or file-format error,
3 dimension mismatch, 4 degenerate configuration.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import evalharness, geometry
from .errors import DegenerateConfiguration, DimensionMismatch, FormatError, MvHomoError
from .imaging import bilinear_warp, read_frame, write_frame
from .motion_coding import RDParams, SearchAlgorithm, estimate_motion, write_mvf
from .pipeline import MvSource, PipelineConfig, estimate_homography

EXIT_OK = 0
EXIT_PARAM = 1
EXIT_IO = 2
EXIT_DIM = 3
EXIT_DEGENERATE = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(args, summary: str, payload: dict) -> None:
    # stdout carries JSON only in machine mode
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(summary)


def _load_json_arg(value):
    """A JSON literal, or a path to a JSON file."""
    if value is None:
        return {}
    text = value
    if not value.lstrip().startswith("{"):
        try:
            text = Path(value).read_text()
        except OSError as exc:
            raise CliError(f"cannot read {value}: {exc}", EXIT_IO) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"bad JSON in {value!r}: {exc}", EXIT_PARAM) from None


def _read_frame(path):
    try:
        return read_frame(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read frame {path}: {exc}", EXIT_IO) from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from None
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory {out} is not writable", EXIT_IO)
    return out


def worker_count() -> int:
    cap = os.environ.get("MVHOMO_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise CliError(f"MVHOMO_THREADS must be an integer, got {cap!r}", EXIT_PARAM) from None
    return n


def parse_seed_range(text: str) -> list[int]:
    """``"0-99"``, ``"3"`` or ``"1,4,7-9"`` to a sorted list of unique seeds."""
    seeds = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                seeds.update(range(a, b + 1))
            else:
                seeds.add(int(part))
        except ValueError:
            raise CliError(f"bad seed range {text!r}", EXIT_PARAM) from None
    if not seeds:
        raise CliError(f"empty seed range {text!r}", EXIT_PARAM)
    return sorted(seeds)


def parse_thresholds(text: str | None):
    if text is None:
        return evalharness.DEFAULT_THRESHOLDS
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            n = int(round((hi - lo) / step)) + 1
            vals = [round(lo + k * step, 10) for k in range(n)]
        else:
            vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"bad thresholds {text!r}", EXIT_PARAM) from None
    if not vals or any(b < a for a, b in zip(vals, vals[1:])):
        raise CliError("thresholds must be non-empty and increasing", EXIT_PARAM)
    return tuple(vals)


# --- motion -----------------------------------------------------------------------

def cmd_motion(args) -> int:
    cur = _read_frame(args.current)
    ref = _read_frame(args.reference)
    if cur.shape != ref.shape:
        raise DimensionMismatch(f"frame shapes differ: {cur.shape} vs {ref.shape}")
    params = RDParams(lam=args.lam, search_range=args.search_range,
                      algorithm=SearchAlgorithm(args.algo), merge_enabled=not args.no_merge)
    mvf = estimate_motion(cur, ref, params)
    try:
        write_mvf(mvf, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    hist = mvf.mode_histogram()
    total = sum(hist.values())
    summary = f"wrote {args.out}: {total} blocks, " + ", ".join(f"{k.lower()} {v}" for k, v in hist.items())
    _emit(args, summary, {"out": str(args.out), "blocks": total, "histogram": hist})
    return EXIT_OK


# --- estimate ---------------------------------------------------------------------

def _pipeline_config(args) -> PipelineConfig:
    data = _load_json_arg(args.config)
    try:
        cfg = PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad config: {exc}", EXIT_PARAM) from None
    if getattr(args, "mvf", None):
        cfg = cfg.with_(mv_source=MvSource(kind="sidecar", path=str(args.mvf)))
    elif getattr(args, "no_mv", False):
        cfg = cfg.with_(mv_source=MvSource(kind="none"))
    elif getattr(args, "internal_me", False) and cfg.mv_source.kind != "internal":
        cfg = cfg.with_(mv_source=MvSource())
    return cfg


def write_estimate(out: Path, frame_a, frame_b, result) -> None:
    warped, valid = bilinear_warp(frame_a, result.homography)
    (out / "homography.json").write_text(geometry.to_json(result.homography) + "\n")
    write_frame(out / "mask_e.png", result.enhanced_mask)
    write_frame(out / "heatmap.png", evalharness.error_heatmap(warped, frame_b, valid) / 255.0)
    (out / "losses.json").write_text(result.losses.to_json() + "\n")


def cmd_estimate(args) -> int:
    cfg = _pipeline_config(args)
    frame_a = _read_frame(args.a)
    frame_b = _read_frame(args.b)
    out = _out_dir(args.out)
    try:
        result = estimate_homography(frame_a, frame_b, None, cfg)
    except OSError as exc:
        raise CliError(f"cannot read MV sidecar: {exc}", EXIT_IO) from None
    write_estimate(out, frame_a, frame_b, result)
    losses = result.losses.to_dict()
    summary = (f"wrote {out}: l_align {losses['l_align']:.4f}, l_total {losses['l_total']:.4f}, "
               f"mv source {result.diagnostics['mv_source']}")
    _emit(args, summary, {"out": str(out), "homography": result.homography.tolist(), "losses": losses})
    return EXIT_OK


# --- synth / eval ---------------------------------------------------------------------

def _scene_params(args) -> evalharness.SceneParams:
    try:
        return evalharness.SceneParams.from_dict(_load_json_arg(args.params))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad scene params: {exc}", EXIT_PARAM) from None


def cmd_synth(args) -> int:
    scene = evalharness.synth_scene(args.seed, _scene_params(args))
    out = _out_dir(args.out)
    paths = evalharness.save_scene(scene, out)
    summary = f"wrote scene {args.seed} to {out}"
    _emit(args, summary, {"out": str(out), "seed": args.seed, "files": sorted(p.name for p in paths.values())})
    return EXIT_OK


def solve_scene(job) -> dict:
    """Synthesise one seed, estimate it and score it. Module level so workers can pickle it."""
    seed, params, cfg = job
    scene = evalharness.synth_scene(seed, params)
    result = estimate_homography(scene.frame_a, scene.frame_b, None, cfg)
    return {
        "seed": seed,
        "pme": evalharness.pme(result.homography, scene.point_pairs),
        "corner_error": geometry.corner_error(result.homography, scene.gt_h, scene.params.width, scene.params.height),
        "losses": result.losses.to_dict(),
    }


def _results_from_dir(root: Path) -> list[dict]:
    if not root.is_dir():
        raise CliError(f"results directory {root} does not exist", EXIT_IO)
    rows = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        hfile, pfile = sub / "homography.json", sub / "points.txt"
        if not (hfile.exists() and pfile.exists()):
            continue
        try:
            h = geometry.from_json(hfile.read_text())
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{hfile}: {exc}") from None
        rows.append({"name": sub.name, "pme": evalharness.pme(h, evalharness.read_points(pfile))})
    if not rows:
        raise CliError(f"no result folders with homography.json and points.txt under {root}", EXIT_IO)
    return rows


def plot_curve(path: Path, curve: list[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3), dpi=100)
    ax.plot([c["threshold"] for c in curve], [c["fraction"] for c in curve], marker=".")
    ax.set_xlabel("PME threshold (px)")
    ax.set_ylabel("fraction of pairs")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_eval(args) -> int:
    thresholds = parse_thresholds(args.thresholds)
    out = _out_dir(args.out)
    if args.results:
        rows = _results_from_dir(Path(args.results))
    else:
        seeds = parse_seed_range(args.scenes)
        params = _scene_params(args)
        cfg = _pipeline_config(args)
        jobs = [(s, params, cfg) for s in seeds]
        workers = min(worker_count(), len(jobs))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(solve_scene, jobs))
        else:
            rows = [solve_scene(j) for j in jobs]
    summary = evalharness.summarize([r["pme"] for r in rows], thresholds)
    (out / "results.json").write_text(json.dumps(rows, indent=2) + "\n")
    (out / "eval.json").write_text(json.dumps(summary, indent=2) + "\n")
    plot_curve(out / "curve.png", summary["curve"])
    text = f"{summary['count']} pairs: mean PME {summary['mean']:.4f}, median {summary['median']:.4f}, std {summary['std']:.4f}"
    _emit(args, text, {"out": str(out), **{k: summary[k] for k in ("count", "mean", "median", "std")}})
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print a JSON summary instead of prose")
    parser = argparse.ArgumentParser(prog="mvhomo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("motion", parents=[common], help="block motion estimation to an MVF sidecar")
    p.add_argument("--current", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=RDParams.lam)
    p.add_argument("--algo", choices=[a.value for a in SearchAlgorithm], default=SearchAlgorithm.DIAMOND.value)
    p.add_argument("--search-range", type=int, default=RDParams.search_range)
    p.add_argument("--no-merge", action="store_true")
    p.add_argument("--out", required=True, help=".mvf binary or .json mirror")
    p.set_defaults(func=cmd_motion)

    p = sub.add_parser("estimate", parents=[common], help="estimate the homography of one frame pair")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mvf", help="MV sidecar for the pair")
    src.add_argument("--internal-me", action="store_true", help="estimate MVs from the frames (default)")
    src.add_argument("--no-mv", action="store_true", help="skip fusion and run unmasked alignment")
    p.add_argument("--config", help="PipelineConfig JSON literal or file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", parents=[common], help="PME statistics and inlier curve")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--results", help="folder of subfolders holding homography.json and points.txt")
    which.add_argument("--scenes", help='seed range of synthetic scenes, e.g. "0-99"')
    p.add_argument("--params", help="SceneParams JSON literal or file (with --scenes)")
    p.add_argument("--config", help="PipelineConfig JSON literal or file (with --scenes)")
    p.add_argument("--no-mv", action="store_true")
    p.add_argument("--thresholds", help='"lo:hi:step" or a comma list, default 0.1:3.0:0.1')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--params", help="SceneParams JSON literal or file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except DimensionMismatch as exc:
        code, msg = EXIT_DIM, str(exc)
    except DegenerateConfiguration as exc:
        code, msg = EXIT_DEGENERATE, str(exc)
    except (FormatError, OSError) as exc:
        code, msg = EXIT_IO, str(exc)
    except (MvHomoError, ValueError) as exc:
        code, msg = EXIT_PARAM, str(exc)
    print(f"mvhomo {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
