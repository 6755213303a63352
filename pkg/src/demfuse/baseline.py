"""Non-variational fusion baselines: weighted averaging and pixel-wise median."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .raster import DemGrid, grids_to_stack, require_compatible
from .weights import WeightMap


def median_stack(stack: np.ndarray) -> np.ndarray:
    """Per-pixel median over the first axis, ignoring NaN; NaN where empty.

    An even number of valid values yields the midpoint of the two central
    ones.  Warning-free equivalent of ``np.nanmedian`` over axis 0.
    """
    stack = np.asarray(stack, dtype=np.float64)
    counts = np.isfinite(stack).sum(axis=0)
    s = np.sort(stack, axis=0)  # NaN sorts last
    safe = np.maximum(counts, 1)
    lo = np.take_along_axis(s, ((safe - 1) // 2)[None], axis=0)[0]
    hi = np.take_along_axis(s, (safe // 2)[None], axis=0)[0]
    return np.where(counts > 0, 0.5 * (lo + hi), np.nan)


def weighted_average_stack(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-pixel convex combination of a (k, rows, cols) stack; NaN where no input."""
    stack = np.asarray(stack, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if stack.shape != weights.shape:
        raise ValueError(f"stack shape {stack.shape} != weights shape {weights.shape}")
    valid = np.isfinite(stack) & np.isfinite(weights)
    out = (np.where(valid, weights, 0.0) * np.where(valid, stack, 0.0)).sum(axis=0)
    return np.where(valid.any(axis=0), out, np.nan)


def fuse_median(grids: Sequence[DemGrid]) -> DemGrid:
    """Pixel-wise median fusion; nodata where no input is valid."""
    stack = grids_to_stack(grids)
    return grids[0].with_heights(median_stack(stack))


def fuse_weighted_average(
    grids: Sequence[DemGrid], weights: Sequence[WeightMap]
) -> DemGrid:
    """Weighted-average fusion with per-pixel weight maps.

    The weight maps are expected to satisfy the WeightMap contract (zero at
    missing inputs, per-pixel sum of one over the valid ones); pixels with
    no valid input are nodata.
    """
    if len(grids) != len(weights):
        raise ValueError(
            f"got {len(grids)} grids but {len(weights)} weight maps"
        )
    stack = grids_to_stack(grids)
    require_compatible([grids[0], *(w.grid for w in weights)])
    w = np.stack([wm.values for wm in weights])
    return grids[0].with_heights(weighted_average_stack(stack, w))
