import numpy as np
import pytest

from mvhomo import fusion, geometry

from conftest import random_homography

W, H = 128, 96


def foreground_flow(rng, h_true, fraction, shift, noise=0.0):
    """Planar flow with a random set of 8x8 blocks moved by ``shift``; returns (flow, fg)."""
    flow = geometry.homography_flow(h_true, W, H)
    fg = np.zeros((H, W), dtype=bool)
    nby, nbx = H // 8, W // 8
    pick = rng.permutation(nby * nbx)[: int(round(fraction * nby * nbx))]
    for k in pick:
        by, bx = divmod(int(k), nbx)
        fg[by * 8:(by + 1) * 8, bx * 8:(bx + 1) * 8] = True
    flow[0][fg] += shift[0]
    flow[1][fg] += shift[1]
    if noise:
        flow = flow + rng.normal(0, noise, flow.shape)
    return flow, fg


@pytest.mark.parametrize("stride,count", [(8, 16 * 12), (16, 8 * 6), (7, 18 * 13), (1, W * H)])
def test_sample_point_count(stride, count):
    assert len(fusion.sample_points(W, H, stride)) == count


def test_sample_points_rejects_bad_stride():
    with pytest.raises(ValueError):
        fusion.sample_points(W, H, 0)


def test_zero_flow_correspondences_are_fixed():
    src, dst, w = fusion.mv_correspondences(np.zeros((2, H, W)))
    np.testing.assert_array_equal(src, dst)
    assert np.all(w == 1)


def test_constant_flow_correspondences():
    flow = np.empty((2, H, W))
    flow[0], flow[1] = 4.0, -2.0
    src, dst, _ = fusion.mv_correspondences(flow)
    np.testing.assert_array_equal(dst - src, np.tile([4.0, -2.0], (len(src), 1)))


def test_zero_flow_fixed_point():
    h, m = fusion.irls_fuse(geometry.identity(), np.zeros((2, H, W)))
    np.testing.assert_allclose(h, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(m, 1.0, atol=1e-9)


def test_fixed_point_of_own_flow(rng):
    for _ in range(5):
        h_in = random_homography(rng, W, H, 10)
        h, m = fusion.irls_fuse(h_in, geometry.homography_flow(h_in, W, H))
        assert geometry.corner_error(h, h_in, W, H, reduce="max") < 1e-6
        np.testing.assert_allclose(m, 1.0, atol=1e-9)


def test_exact_flow_recovered_in_three_iterations(rng):
    h_true = random_homography(rng, W, H, 12)
    h, _ = fusion.irls_fuse(geometry.identity(), geometry.homography_flow(h_true, W, H), iters=3)
    assert geometry.corner_error(h, h_true, W, H) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_foreground_blocks_rejected(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    h_true = random_homography(rng, W, H, 8)
    flow, fg = foreground_flow(rng, h_true, 0.3, (10.0, 0.0))
    h, m = fusion.irls_fuse(geometry.identity(), flow, tau=2.0, iters=5)
    assert geometry.corner_error(h, h_true, W, H) < 0.3
    assert m[fg].mean() < 0.2


def test_robustness_dominance_over_plain_dlt():
    wins = 0
    for seed in range(200):
        rng = np.random.Generator(np.random.PCG64(seed))
        h_true = random_homography(rng, W, H, 10)
        angle = rng.uniform(0, 2 * np.pi)
        shift = rng.uniform(4, 15) * np.array([np.cos(angle), np.sin(angle)])
        flow, _ = foreground_flow(rng, h_true, rng.uniform(0.0, 0.4), shift, noise=0.3)
        src, dst, _ = fusion.mv_correspondences(flow)
        plain = geometry.dlt_solve(src, dst)
        fused, _ = fusion.irls_fuse(geometry.identity(), flow)
        wins += geometry.corner_error(fused, h_true, W, H) <= geometry.corner_error(plain, h_true, W, H)
    assert wins >= 190


def test_contradictory_flow_returns_input():
    h_in = geometry.translation(1.5, -0.5)
    flow = np.full((2, H, W), 500.0)
    h, m = fusion.irls_fuse(h_in, flow)
    np.testing.assert_array_equal(h, geometry.normalize(h_in))
    assert m.sum() < 1e-3 * m.size


@pytest.mark.parametrize("kwargs", [{"iters": 0}, {"tau": 0.0}, {"tau": -1.0}])
def test_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        fusion.irls_fuse(geometry.identity(), np.zeros((2, H, W)), **kwargs)
