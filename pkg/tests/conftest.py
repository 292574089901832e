import numpy as np
import pytest

from sonoplan.core import Mask, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_volume(rng, dims=(5, 5, 5), spacing=(1.0, 1.0, 1.0)):
    vox = rng.normal(0.0, 1.0, size=dims).astype(np.float32)
    return Volume(dims, spacing, vox)


def random_mask(rng, dims=(5, 5, 5), spacing=(1.0, 1.0, 1.0), density=0.6):
    fg = rng.random(dims) < density
    if not fg.any():
        fg[tuple(int(d) // 2 for d in dims)] = True
    return Mask(dims, spacing, fg.astype(np.float32))
