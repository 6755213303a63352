"""Per-pixel fusion weights derived from interferometric height-error maps.

A height-error map (HEM) carries the 1-sigma height error of each DEM
pixel.  Weights are inverse-variance: w_j = (1/sigma_j^2) / sum_k (1/sigma_k^2),
renormalized per pixel over the inputs that are valid there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import DemGrid, read_grid, require_compatible


@dataclass(frozen=True, eq=False)
class HeightErrorMap:
    """Per-pixel 1-sigma height error in meters; valid sigmas are > 0.

    Build instances through :meth:`from_grid`, which masks non-positive
    sigmas as nodata (a zero in a HEM means missing data, not an error-free
    pixel).
    """

    grid: DemGrid

    def __post_init__(self):
        vals = self.grid.valid_values()
        if vals.size and (vals <= 0).any():
            raise ValueError("HeightErrorMap requires strictly positive valid sigmas")

    @classmethod
    def from_grid(cls, grid: DemGrid) -> "HeightErrorMap":
        sigma = np.where(grid.valid_mask & (grid.heights > 0), grid.heights, np.nan)
        return cls(grid.with_heights(sigma))

    @classmethod
    def read(cls, path, format: str | None = None) -> "HeightErrorMap":
        return cls.from_grid(read_grid(path, format))

    @property
    def sigma(self) -> np.ndarray:
        """Sigmas with NaN at nodata pixels."""
        return self.grid.masked

    @property
    def valid_mask(self) -> np.ndarray:
        return self.grid.valid_mask


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Nonnegative per-pixel fusion weights for one input DEM.

    Weights are zero where the corresponding input is missing, and across
    all inputs they sum to one at every pixel where at least one input is
    valid; pixels with no valid input at all are nodata.
    """

    grid: DemGrid

    def __post_init__(self):
        vals = self.grid.valid_values()
        if vals.size and (vals < 0).any():
            raise ValueError("weights must be nonnegative")

    @property
    def values(self) -> np.ndarray:
        """Weights with NaN at pixels where no input was valid."""
        return self.grid.masked

    @property
    def valid_mask(self) -> np.ndarray:
        return self.grid.valid_mask


def sigma_from_phase_error(h_amb: float, sigma_phi: DemGrid) -> HeightErrorMap:
    """Convert an interferometric phase-error grid (radians) into height errors.

    sigma = |h_amb| * sigma_phi / (2*pi) per pixel, where ``h_amb`` is the
    height of ambiguity in meters.  Zero phase error yields sigma = 0, which
    is flagged invalid because weights require sigma > 0.
    """
    if h_amb == 0:
        raise ValueError("height of ambiguity must be nonzero")
    phi = sigma_phi.valid_values()
    if phi.size and (phi < 0).any():
        raise ValueError("phase errors must be >= 0")
    sigma = np.where(
        sigma_phi.valid_mask,
        abs(h_amb) * sigma_phi.heights / (2.0 * math.pi),
        np.nan,
    )
    return HeightErrorMap.from_grid(sigma_phi.with_heights(sigma))


def weights_from_sigma_stack(sigma: np.ndarray) -> np.ndarray:
    """Inverse-variance weights for a (k, rows, cols) sigma stack (NaN = missing).

    Returns a (k, rows, cols) stack where each pixel's weights sum to one
    over the valid inputs; weights are 0 for missing inputs and NaN at
    pixels where no input is valid.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 3:
        raise ValueError(f"expected a (k, rows, cols) stack, got shape {sigma.shape}")
    valid = np.isfinite(sigma) & (sigma > 0)
    inv_var = np.where(valid, 1.0 / np.where(valid, sigma, 1.0) ** 2, 0.0)
    total = inv_var.sum(axis=0)
    any_valid = valid.any(axis=0)
    w = np.where(any_valid, inv_var / np.where(any_valid, total, 1.0), np.nan)
    return w


def weights_from_hem(hems: Sequence[HeightErrorMap]) -> list[WeightMap]:
    """Per-pixel inverse-variance weight maps for a set of compatible HEMs."""
    if not hems:
        raise ValueError("need at least one height-error map")
    require_compatible([h.grid for h in hems])
    w = weights_from_sigma_stack(np.stack([h.sigma for h in hems]))
    return [WeightMap(hems[i].grid.with_heights(w[i])) for i in range(len(hems))]


def renormalize_weights(grids: Sequence[DemGrid]) -> list[WeightMap]:
    """Turn explicit weight grids into valid weight maps (per-pixel sum of one).

    Negative weights are rejected; pixels where every grid is nodata or the
    weights sum to zero are nodata in all outputs.
    """
    if not grids:
        raise ValueError("need at least one weight grid")
    require_compatible(grids)
    stack = np.stack([g.masked for g in grids])
    finite = np.isfinite(stack)
    if (stack[finite] < 0).any():
        raise ValueError("explicit weights must be nonnegative")
    vals = np.where(finite, stack, 0.0)
    total = vals.sum(axis=0)
    ok = total > 0
    w = np.where(ok, vals / np.where(ok, total, 1.0), np.nan)
    return [WeightMap(grids[i].with_heights(w[i])) for i in range(len(grids))]
