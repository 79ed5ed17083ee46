import numpy as np
import pytest

from curvtomo import Disc, Ellipse, SpatialGrid
from curvtomo.phantoms import CATALOG, band_limited_ensemble, make_phantom, parse_phantom_name


@pytest.fixture
def grid():
    return SpatialGrid(48, 48, (-1, 1, -1, 1))


@pytest.mark.parametrize("name", [c for c in CATALOG if c != "one-hot"])
def test_catalog_supported_in_domain(grid, name):
    dom = Disc(radius=0.8)
    f = make_phantom(name, grid, dom)
    assert not np.any(f.values[~grid.mask(dom)])
    assert 0.5 <= f.values.max() <= 1.0 + 1e-12 and f.values.min() >= 0


def test_gaussian_bump_formula(grid):
    f = make_phantom("gaussian-bump", grid, Disc(radius=1.0))
    P = grid.points
    ref = np.exp(-((P[..., 0] - 0.1) ** 2 + P[..., 1] ** 2) / 0.09)
    m = grid.mask(Disc(radius=1.0))
    assert np.allclose(f.values[m], ref[m], rtol=1e-14)


def test_one_hot(grid):
    f = make_phantom("one-hot:20,30", grid, Disc(radius=1.0))
    assert f.values[20, 30] == 1.0 and f.values.sum() == 1.0
    with pytest.raises(ValueError, match="outside the support"):
        make_phantom("one-hot:0,0", grid, Disc(radius=1.0))
    with pytest.raises(ValueError, match="outside the"):
        make_phantom("one-hot:99,0", grid, Disc(radius=1.0))


def test_parse_names():
    assert parse_phantom_name("one-hot(3, 4)") == ("one-hot", (3, 4))
    assert parse_phantom_name("two-discs") == ("two-discs", ())
    with pytest.raises(ValueError, match="unknown phantom"):
        parse_phantom_name("one-hot")
    with pytest.raises(ValueError):
        parse_phantom_name("banana")


def test_band_limited_ensemble(grid):
    dom = Ellipse(a=0.8, b=0.6)
    ens = band_limited_ensemble(grid, dom, n=5, seed=3)
    assert len(ens) == 5
    again = band_limited_ensemble(grid, dom, n=5, seed=3)
    for a, b in zip(ens, again):
        assert np.array_equal(a.values, b.values)
        assert not np.any(a.values[~grid.mask(dom)])
        assert np.linalg.norm(a.values) > 0
    assert not np.array_equal(ens[0].values, ens[1].values)
