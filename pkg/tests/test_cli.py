import hashlib
import json

import numpy as np
import pytest

from mvhomo import cli, evalharness, geometry
from mvhomo.errors import DegenerateConfiguration
from mvhomo.imaging import write_frame
from mvhomo.motion_coding import read_mvf

from conftest import smooth_image


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def static_pair(tmp_path, rng):
    img = smooth_image(rng, 64, 64)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_frame(a, img)
    write_frame(b, img)
    return a, b


@pytest.fixture(scope="module")
def fg_scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    evalharness.save_scene(evalharness.synth_scene(4, {"fg_fraction": 0.3, "noise_sigma": 0.01}), out)
    return out


def test_static_pair_all_zero(capsys, static_pair, tmp_path):
    a, b = static_pair
    out = tmp_path / "mv.mvf"
    code, text, _ = run(capsys, "motion", "--current", a, "--reference", b, "--lambda", 4, "--out", out, "--json")
    assert code == 0
    summary = json.loads(text)
    assert summary["histogram"]["ZERO"] == summary["blocks"] == 64
    assert np.all(read_mvf(out).mv == 0)


@pytest.mark.parametrize("shift", [(3, -2), (-5, 4)])
def test_shifted_pair_modal_mv(capsys, tmp_path, rng, shift):
    dx, dy = shift
    big = smooth_image(rng, 96, 96, sigma=2.0)
    cur = big[16:80, 16:80]
    ref = big[16 - dy:80 - dy, 16 - dx:80 - dx]
    write_frame(tmp_path / "cur.png", cur)
    write_frame(tmp_path / "ref.png", ref)
    out = tmp_path / "mv.json"
    code, _, _ = run(capsys, "motion", "--current", tmp_path / "cur.png", "--reference", tmp_path / "ref.png",
                     "--lambda", 0, "--algo", "exhaustive", "--out", out)
    assert code == 0
    vecs, counts = np.unique(read_mvf(out).mv.reshape(-1, 2), axis=0, return_counts=True)
    assert tuple(vecs[np.argmax(counts)]) == (4 * dx, 4 * dy)


def test_motion_missing_file(capsys, static_pair, tmp_path):
    a, _ = static_pair
    code, _, err = run(capsys, "motion", "--current", a, "--reference", tmp_path / "nope.png", "--out", tmp_path / "x.mvf")
    assert code == 2
    assert "nope.png" in err


def test_motion_dimension_mismatch(capsys, static_pair, tmp_path, rng):
    a, _ = static_pair
    write_frame(tmp_path / "small.png", smooth_image(rng, 64, 48))
    code, _, _ = run(capsys, "motion", "--current", a, "--reference", tmp_path / "small.png", "--out", tmp_path / "x.mvf")
    assert code == 3


def test_estimate_identical_frames(capsys, static_pair, tmp_path):
    a, _ = static_pair
    out = tmp_path / "est"
    code, text, _ = run(capsys, "estimate", "--a", a, "--b", a, "--out", out)
    assert code == 0
    assert text.startswith("wrote")
    h = geometry.from_json((out / "homography.json").read_text())
    np.testing.assert_allclose(h, np.eye(3), atol=1e-9)
    for name in ("mask_e.png", "heatmap.png", "losses.json"):
        assert (out / name).exists()
    assert set(json.loads((out / "losses.json").read_text())) >= {"l_align", "l_total"}


def test_estimate_warped_pair_pme(capsys, tmp_path):
    scene_dir = tmp_path / "scene"
    assert run(capsys, "synth", "--seed", 2, "--out", scene_dir)[0] == 0
    out = tmp_path / "est"
    code, _, _ = run(capsys, "estimate", "--a", scene_dir / "frame_a.png", "--b", scene_dir / "frame_b.png",
                     "--internal-me", "--out", out)
    assert code == 0
    h = geometry.from_json((out / "homography.json").read_text())
    assert evalharness.pme(h, evalharness.read_points(scene_dir / "points.txt")) < 0.25


def test_estimate_mvs_lower_alignment_loss(capsys, fg_scene_dir, tmp_path):
    losses = {}
    for flag in ("--internal-me", "--no-mv"):
        out = tmp_path / flag.strip("-")
        code, text, _ = run(capsys, "estimate", "--a", fg_scene_dir / "frame_a.png", "--b", fg_scene_dir / "frame_b.png",
                            flag, "--out", out, "--json")
        assert code == 0
        losses[flag] = json.loads(text)["losses"]["l_align"]
    assert losses["--internal-me"] < losses["--no-mv"]


def test_estimate_with_sidecar(capsys, fg_scene_dir, tmp_path):
    mvf = tmp_path / "mv.mvf"
    a, b = fg_scene_dir / "frame_a.png", fg_scene_dir / "frame_b.png"
    assert run(capsys, "motion", "--current", a, "--reference", b, "--out", mvf)[0] == 0
    code, text, _ = run(capsys, "estimate", "--a", a, "--b", b, "--mvf", mvf, "--out", tmp_path / "est", "--json")
    assert code == 0
    assert json.loads(text)["homography"]


def test_estimate_sources_exclusive(capsys, static_pair, tmp_path):
    a, b = static_pair
    with pytest.raises(SystemExit) as exc:
        cli.main(["estimate", "--a", str(a), "--b", str(b), "--no-mv", "--internal-me", "--out", str(tmp_path)])
    assert exc.value.code == 2


@pytest.mark.parametrize("config", ['{"alpha": 3}', '{"gamma": 1}', "{not json"])
def test_estimate_bad_config(capsys, static_pair, tmp_path, config):
    a, b = static_pair
    code, _, _ = run(capsys, "estimate", "--a", a, "--b", b, "--config", config, "--out", tmp_path / "o")
    assert code == 1


def test_estimate_config_file(capsys, static_pair, tmp_path):
    a, _ = static_pair
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.4, "mv_source": "none"}))
    assert run(capsys, "estimate", "--a", a, "--b", a, "--config", cfg, "--out", tmp_path / "o")[0] == 0


def test_estimate_degenerate_exit(capsys, static_pair, tmp_path, monkeypatch):
    def boom(*_args, **_kw):
        raise DegenerateConfiguration("collinear")

    monkeypatch.setattr(cli, "estimate_homography", boom)
    a, b = static_pair
    code, _, err = run(capsys, "estimate", "--a", a, "--b", b, "--out", tmp_path / "o")
    assert code == 4
    assert "collinear" in err


def test_estimate_missing_sidecar(capsys, static_pair, tmp_path):
    a, b = static_pair
    code, _, _ = run(capsys, "estimate", "--a", a, "--b", b, "--mvf", tmp_path / "none.mvf", "--out", tmp_path / "o")
    assert code == 2


def write_results(root, rows):
    for k, (h, pairs) in enumerate(rows):
        d = root / f"pair{k:03d}"
        d.mkdir(parents=True)
        (d / "homography.json").write_text(geometry.to_json(h))
        evalharness.write_points(d / "points.txt", pairs)


def test_eval_ground_truth_zero(capsys, tmp_path):
    rows = []
    for seed in range(5):
        scene = evalharness.synth_scene(seed)
        rows.append((scene.gt_h, scene.point_pairs))
    write_results(tmp_path / "res", rows)
    out = tmp_path / "ev"
    code, _, _ = run(capsys, "eval", "--results", tmp_path / "res", "--out", out)
    assert code == 0
    summary = json.loads((out / "eval.json").read_text())
    assert summary["mean"] == 0.0
    assert all(c["fraction"] == 1.0 for c in summary["curve"])
    assert (out / "curve.png").stat().st_size > 0


def test_eval_statistics_consistent(capsys, tmp_path, rng):
    rows = []
    for _ in range(100):
        pairs = rng.uniform(10, 100, (6, 4))
        pairs[:, 2:] = pairs[:, :2] + rng.normal(0, 1.0, (6, 2))
        rows.append((np.eye(3), pairs))
    write_results(tmp_path / "res", rows)
    out = tmp_path / "ev"
    assert run(capsys, "eval", "--results", tmp_path / "res", "--out", out, "--thresholds", "0.5:2.0:0.5")[0] == 0
    summary = json.loads((out / "eval.json").read_text())
    per = [r["pme"] for r in json.loads((out / "results.json").read_text())]
    expect = [evalharness.pme(h, p) for h, p in rows]
    np.testing.assert_allclose(per, expect, rtol=1e-12)
    assert summary["count"] == 100
    assert summary["std"] == pytest.approx(np.std(expect), rel=1e-12)
    assert summary["median"] == pytest.approx(np.median(expect), rel=1e-12)
    assert [c["threshold"] for c in summary["curve"]] == [0.5, 1.0, 1.5, 2.0]


def test_eval_scenes(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("MVHOMO_THREADS", "1")
    out = tmp_path / "ev"
    code, text, _ = run(capsys, "eval", "--scenes", "0-1", "--out", out, "--json")
    assert code == 0
    rows = json.loads((out / "results.json").read_text())
    assert [r["seed"] for r in rows] == [0, 1]
    assert all(r["corner_error"] < 0.25 for r in rows)
    assert json.loads(text)["count"] == 2


def test_eval_missing_results_dir(capsys, tmp_path):
    assert run(capsys, "eval", "--results", tmp_path / "missing", "--out", tmp_path / "o")[0] == 2


@pytest.mark.parametrize("text,seeds", [("0-3", [0, 1, 2, 3]), ("5", [5]), ("1,4,7-9", [1, 4, 7, 8, 9]),
                                        ("3,1-2,3", [1, 2, 3])])
def test_seed_ranges(text, seeds):
    assert cli.parse_seed_range(text) == seeds


@pytest.mark.parametrize("text", ["", "a-b", "5-2", "1,,x"])
def test_bad_seed_ranges(text):
    with pytest.raises(cli.CliError) as err:
        cli.parse_seed_range(text)
    assert err.value.code == 1


def test_thresholds():
    assert cli.parse_thresholds("0.1:0.3:0.1") == (0.1, 0.2, 0.3)
    assert cli.parse_thresholds("1,2") == (1.0, 2.0)
    assert cli.parse_thresholds(None) == evalharness.DEFAULT_THRESHOLDS
    with pytest.raises(cli.CliError):
        cli.parse_thresholds("2,1")


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("MVHOMO_THREADS", "1")
    assert cli.worker_count() == 1
    monkeypatch.setenv("MVHOMO_THREADS", "many")
    with pytest.raises(cli.CliError):
        cli.worker_count()


def test_synth_file_hashes(capsys, tmp_path):
    hashes = []
    for name in ("one", "two"):
        out = tmp_path / name
        code, _, _ = run(capsys, "synth", "--seed", 7, "--params", '{"fg_fraction": 0.2}', "--out", out)
        assert code == 0
        hashes.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())})
    assert hashes[0] == hashes[1]
    assert set(hashes[0]) == {"frame_a.png", "frame_b.png", "foreground_mask.png", "gt_h.json", "points.txt", "scene.json"}


def test_synth_bad_params(capsys, tmp_path):
    assert run(capsys, "synth", "--seed", 1, "--params", '{"max_corner_px": 40}', "--out", tmp_path)[0] == 1


def test_json_mode_is_pure_json(capsys, tmp_path):
    code, text, _ = run(capsys, "synth", "--seed", 1, "--out", tmp_path, "--json")
    assert code == 0
    assert json.loads(text)["seed"] == 1
