import numpy as np
import pytest

from demfuse.raster import DemGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_grid(values, nodata=-9999.0, cell_size=1.0, origin=(0.0, 0.0)) -> DemGrid:
    """Grid from a (possibly NaN-holed) 2-D array literal."""
    return DemGrid.from_array(np.asarray(values, dtype=float), cell_size=cell_size,
                              origin=origin, nodata_value=nodata)


def random_grid(rng, rows, cols, lo=0.0, hi=100.0, nodata_frac=0.0) -> DemGrid:
    vals = rng.uniform(lo, hi, (rows, cols))
    if nodata_frac:
        vals[rng.random((rows, cols)) < nodata_frac] = np.nan
    return DemGrid.from_array(vals)


def grid_search_minimizer(objective, lo, hi, stages=3, n=2001):
    """Dense multi-stage 1-D grid search; final resolution well below 1e-6.

    Independent oracle used against the closed-form proximal maps: it only
    evaluates the objective, never the code under test.
    """
    c, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    for _ in range(stages):
        g = np.linspace(c - half, c + half, n)
        c = g[int(np.argmin(objective(g)))]
        half = 2.0 * (2.0 * half / (n - 1))
    return c
