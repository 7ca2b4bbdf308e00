import numpy as np
import pytest
from scipy import ndimage

from mvhomo import geometry, imaging
from mvhomo.errors import FormatError, ImageTooSmall, VersionError, WindowTooLarge

from conftest import smooth_image


@pytest.fixture
def image(rng):
    return rng.random((40, 56))


# --- warping ---

def test_warp_identity_exact(image):
    out, valid = imaging.bilinear_warp(image, np.eye(3))
    np.testing.assert_array_equal(out, image)
    assert valid.all()


def test_warp_half_pixel_constant():
    img = np.full((20, 30), 0.37)
    out, valid = imaging.bilinear_warp(img, geometry.translation(0.5, 0))
    np.testing.assert_allclose(out[valid > 0], 0.37, rtol=0, atol=1e-15)
    assert not valid[:, 0].any() and valid[:, 1:].all()


@pytest.mark.parametrize("tx,ty", [(3, 0), (0, -2), (-4, 5)])
def test_warp_integer_shift(image, tx, ty):
    out, valid = imaging.bilinear_warp(image, geometry.translation(tx, ty))
    h, w = image.shape
    for y in range(h):
        for x in range(w):
            sx, sy = x - tx, y - ty
            inside = 0 <= sx < w and 0 <= sy < h
            assert valid[y, x] == float(inside)
            assert out[y, x] == (image[sy, sx] if inside else 0.0)


def test_warp_matches_point_sampling(rng):
    img = smooth_image(rng)
    h = geometry.corners_to_homography(rng.uniform(-4, 4, (4, 2)), 64, 64)
    out, valid = imaging.bilinear_warp(img, h)
    hinv = geometry.invert(h)
    for y, x in [(10, 12), (30, 40), (50, 5)]:
        sx, sy = geometry.apply(hinv, (x, y))
        x0, y0 = int(np.floor(sx)), int(np.floor(sy))
        fx, fy = sx - x0, sy - y0
        ref = ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
               + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])
        assert valid[y, x] == 1.0
        assert out[y, x] == pytest.approx(ref, abs=1e-12)


def test_clamped_sample_replicates_edges():
    img = np.arange(12, dtype=float).reshape(3, 4)
    vals = imaging.clamped_sample(img, np.array([-5.0, 10.0]), np.array([1.0, -3.0]))
    np.testing.assert_array_equal(vals, [img[1, 0], img[0, 3]])


# --- feature projector ---

def test_projector_constant_is_zero():
    assert not imaging.project_features(np.full((20, 20), 0.6)).any()


def test_projector_single_pixel():
    img = np.zeros((11, 11))
    img[5, 5] = 1.0
    out = imaging.project_features(img, 3)
    assert out[5, 5] == pytest.approx(1 - 1 / 9, abs=1e-15)
    assert out[4, 4] == pytest.approx(-1 / 9, abs=1e-15)


def test_projector_offset_invariance(image):
    a = imaging.project_features(image, 5)
    b = imaging.project_features(image + 0.25, 5)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_projector_matches_direct_mean(image):
    window = 5
    padded = np.pad(image, window // 2, mode="edge")
    ref = np.empty_like(image)
    for y in range(image.shape[0]):
        for x in range(image.shape[1]):
            ref[y, x] = image[y, x] - padded[y:y + window, x:x + window].mean()
    np.testing.assert_allclose(imaging.project_features(image, window), ref, atol=1e-12)


@pytest.mark.parametrize("window", [1, 2, 4, 8])
def test_projector_bad_window(image, window):
    with pytest.raises(ValueError):
        imaging.project_features(image, window)


def test_projector_window_too_large():
    with pytest.raises(WindowTooLarge):
        imaging.project_features(np.zeros((7, 30)), 9)


def test_projector_warp_consistency(rng):
    # features of a warped smooth image stay close to warped features
    img = smooth_image(rng, 96, 96, sigma=6.0)
    for _ in range(3):
        h = geometry.corners_to_homography(rng.uniform(-8, 8, (4, 2)), 96, 96)
        wf, valid = imaging.bilinear_warp(imaging.project_features(img), h)
        fw = imaging.project_features(imaging.bilinear_warp(img, h)[0])
        inner = ndimage.minimum_filter(valid, size=9, mode="constant") > 0
        assert np.mean(np.abs(wf - fw)[inner]) < 0.02


# --- pyramid and gradients ---

def test_pyramid_sizes(rng):
    pyr = imaging.build_pyramid(rng.random((64, 64)))
    assert [p.shape for p in pyr] == [(16, 16), (32, 32), (64, 64)]


@pytest.mark.parametrize("w,h", [(70, 45), (33, 17)])
def test_pyramid_odd_sizes(w, h):
    pyr = imaging.build_pyramid(np.zeros((h, w)))
    for lvl, p in enumerate(pyr):
        assert p.shape[::-1] == imaging.level_shape(w, h, lvl)


def test_pyramid_constant():
    for p in imaging.build_pyramid(np.full((32, 48), 0.3)):
        np.testing.assert_allclose(p, 0.3)


def test_pyramid_checkerboard_to_gray():
    # every 2x2 box holds two black and two white pixels
    board = (np.indices((8, 8)).sum(0) % 2).astype(float)
    half = imaging.downsample2(board)
    assert half.shape == (4, 4)
    np.testing.assert_array_equal(half, 0.5)


def test_pyramid_too_small():
    with pytest.raises(ImageTooSmall):
        imaging.build_pyramid(np.zeros((15, 64)))


def test_gradients_constant_and_ramp():
    gx, gy = imaging.gradients(np.full((6, 6), 2.0))
    assert not gx.any() and not gy.any()
    ramp = np.tile(np.arange(8.0), (5, 1))
    gx, gy = imaging.gradients(ramp)
    np.testing.assert_array_equal(gx[:, 1:-1], 1.0)
    np.testing.assert_array_equal(gx[:, 0], 0.5)
    assert not gy.any()


def test_gradients_stencil(image):
    gx, gy = imaging.gradients(image)
    p = np.pad(image, 1, mode="edge")
    for y, x in [(0, 0), (5, 9), (39, 55)]:
        assert gx[y, x] == 0.5 * (p[y + 1, x + 2] - p[y + 1, x])
        assert gy[y, x] == 0.5 * (p[y + 2, x + 1] - p[y, x + 1])


# --- frames on disk ---

def test_check_frame():
    with pytest.raises(ValueError):
        imaging.check_frame(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        imaging.check_frame(np.zeros(5))


def test_to_gray_bt601():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 1] = 1.0
    np.testing.assert_allclose(imaging.to_gray(rgb), 0.587)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_frame_roundtrip(tmp_path, rng, suffix):
    frame = rng.integers(0, 256, (13, 17)) / 255.0
    path = tmp_path / f"f{suffix}"
    imaging.write_frame(path, frame)
    np.testing.assert_array_equal(imaging.read_frame(path), frame)


def test_read_colour_png(tmp_path):
    from PIL import Image

    arr = np.zeros((4, 5, 3), dtype=np.uint8)
    arr[..., 0] = 255
    Image.fromarray(arr, "RGB").save(tmp_path / "c.png")
    np.testing.assert_allclose(imaging.read_frame(tmp_path / "c.png"), 0.299)


def test_maskf_roundtrip(tmp_path, rng):
    m = rng.random((9, 14)).astype(np.float32).astype(float)
    imaging.write_maskf(tmp_path / "m.mskf", m)
    np.testing.assert_array_equal(imaging.read_maskf(tmp_path / "m.mskf"), m)


def test_maskf_corrupt(tmp_path):
    path = tmp_path / "m.mskf"
    imaging.write_maskf(path, np.ones((3, 3)))
    data = path.read_bytes()
    path.write_bytes(data[:-2])
    with pytest.raises(FormatError, match="byte"):
        imaging.read_maskf(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(VersionError):
        imaging.read_maskf(path)
    path.write_bytes(data[:5])
    with pytest.raises(FormatError):
        imaging.read_maskf(path)
