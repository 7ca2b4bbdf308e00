import numpy as np
import pytest

from mvhomo import geometry


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def random_homography(rng, width=128, height=96, max_px=16.0):
    offsets = rng.uniform(-max_px, max_px, size=(4, 2))
    return geometry.corners_to_homography(offsets, width, height)


def smooth_image(rng, height=64, width=64, sigma=3.0):
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.random((height, width)), sigma, mode="reflect")
    img = (img - img.min()) / (img.max() - img.min())
    return 0.1 + 0.8 * img
