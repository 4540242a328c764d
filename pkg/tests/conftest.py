from __future__ import annotations

import numpy as np
import pytest

from fracalderon.core import Field, Geometry, GridConfig, make_masks


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid16():
    return GridConfig(1, 2.0, 2.0, 16, 16)


@pytest.fixture(scope="session")
def grid32():
    return GridConfig(1, 2.0, 2.0, 32, 32)


@pytest.fixture(scope="session")
def masks16(grid16):
    return make_masks(grid16, Geometry())


@pytest.fixture(scope="session")
def masks32(grid32):
    return make_masks(grid32, Geometry())


def random_field(grid, rng, mask=None):
    vals = rng.standard_normal(grid.shape)
    if mask is not None:
        vals = np.where(mask, vals, 0.0)
    return Field(grid, vals)


def smooth_on(mask, grid, rng, n_bumps=4):
    """Random combination of Gaussian bumps restricted to ``mask``."""
    t, *xs = grid.coords()
    idx = np.argwhere(mask)
    vals = np.zeros(grid.shape)
    for _ in range(n_bumps):
        c = idx[rng.integers(len(idx))]
        r2 = ((t - grid.t[c[0]]) / 0.3) ** 2
        for a, x in enumerate(xs, start=1):
            r2 = r2 + ((x - grid.x[c[a]]) / 0.15) ** 2
        vals = vals + rng.standard_normal() * np.exp(-0.5 * r2)
    return Field(grid, np.where(mask, vals, 0.0))
