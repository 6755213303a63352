"""Seeded synthetic scenes: ground truth, noisy input DEMs, and error maps.

A scene is a ground plane (optionally a gentle ramp) plus rectangular
building prisms.  Each input DEM is the truth plus zero-mean Gaussian
noise, plus -- with a per-pixel outlier probability -- an additive blunder
of one full height of ambiguity with equiprobable sign, mimicking
unwrapping errors.  Error maps are constant at each input's noise sigma.

Generation is fully deterministic for a given seed: a NumPy PCG64
generator (``np.random.default_rng(seed)``) is consumed input-major, and
per input in the order noise field, outlier-mask uniforms, outlier-sign
uniforms, each drawn as one row-major (rows, cols) block.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import DemGrid
from .weights import HeightErrorMap

#: (row0, col0, height_m, width_px, depth_px); the prism spans rows
#: [row0, row0 + depth_px) and columns [col0, col0 + width_px).
Building = tuple[int, int, float, int, int]

PRESET_NAMES = ("industrial", "inner_city", "residential", "agricultural")


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic recipe for one synthetic scene."""

    rows: int
    cols: int
    ground_level: float
    buildings: tuple[Building, ...]
    n_inputs: int
    noise_sigmas: tuple[float, ...]
    outlier_rate: float
    outlier_hoas: tuple[float, ...]
    seed: int
    ramp_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "buildings", tuple(tuple(b) for b in self.buildings)
        )
        object.__setattr__(self, "noise_sigmas", tuple(float(s) for s in self.noise_sigmas))
        object.__setattr__(self, "outlier_hoas", tuple(float(h) for h in self.outlier_hoas))
        if self.rows < 1 or self.cols < 1:
            raise ValueError("scene must be at least 1x1")
        if self.n_inputs < 1:
            raise ValueError("need at least one input")
        if len(self.noise_sigmas) != self.n_inputs:
            raise ValueError("noise_sigmas must have one entry per input")
        if len(self.outlier_hoas) != self.n_inputs:
            raise ValueError("outlier_hoas must have one entry per input")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must lie in [0, 1)")
        if any(s < 0 for s in self.noise_sigmas):
            raise ValueError("noise sigmas must be >= 0")
        for b in self.buildings:
            row0, col0, height, width, depth = b
            if width < 1 or depth < 1:
                raise ValueError(f"degenerate building {b}")
            if row0 < 0 or col0 < 0 or row0 + depth > self.rows or col0 + width > self.cols:
                raise ValueError(f"building {b} is out of bounds for {self.rows}x{self.cols}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            ground_level=float(d["ground_level"]),
            buildings=tuple(tuple(b) for b in d["buildings"]),
            n_inputs=int(d["n_inputs"]),
            noise_sigmas=tuple(float(s) for s in d["noise_sigmas"]),
            outlier_rate=float(d["outlier_rate"]),
            outlier_hoas=tuple(float(h) for h in d["outlier_hoas"]),
            seed=int(d["seed"]),
            ramp_m=float(d.get("ramp_m", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def read(cls, path) -> "SceneSpec":
        return cls.from_json(Path(path).read_text())


def build_truth(spec: SceneSpec) -> np.ndarray:
    truth = np.full((spec.rows, spec.cols), float(spec.ground_level))
    if spec.ramp_m:
        rr, cc = np.meshgrid(
            np.arange(spec.rows), np.arange(spec.cols), indexing="ij"
        )
        extent = max(spec.rows + spec.cols - 2, 1)
        truth += spec.ramp_m * (rr + cc) / extent
    for row0, col0, height, width, depth in spec.buildings:
        truth[row0 : row0 + depth, col0 : col0 + width] = spec.ground_level + height
    return truth


def generate_scene(
    spec: SceneSpec,
) -> tuple[DemGrid, list[DemGrid], list[HeightErrorMap]]:
    """Produce (truth, inputs, hems) for a scene spec; same seed, same bits."""
    truth = build_truth(spec)
    rng = np.random.default_rng(spec.seed)
    shape = (spec.rows, spec.cols)
    inputs = []
    hems = []
    for i in range(spec.n_inputs):
        noise = rng.normal(0.0, spec.noise_sigmas[i], shape)
        outlier_mask = rng.random(shape) < spec.outlier_rate
        sign = np.where(rng.random(shape) < 0.5, 1.0, -1.0)
        values = truth + noise + np.where(outlier_mask, sign * spec.outlier_hoas[i], 0.0)
        inputs.append(DemGrid.from_array(values))
        sigma = np.full(shape, spec.noise_sigmas[i])
        hems.append(HeightErrorMap.from_grid(DemGrid.from_array(sigma)))
    return DemGrid.from_array(truth), inputs, hems


def _grid_layout(
    rows: int,
    cols: int,
    block_rows: int,
    block_cols: int,
    street: int,
    heights: Sequence[float],
    margin: int,
) -> tuple[Building, ...]:
    """Deterministic block pattern used by the denser presets."""
    out = []
    i = 0
    r = margin
    while r + block_rows <= rows - margin:
        c = margin
        while c + block_cols <= cols - margin:
            out.append((r, c, float(heights[i % len(heights)]), block_cols, block_rows))
            i += 1
            c += block_cols + street
        r += block_rows + street
    return tuple(out)


def preset(name: str) -> SceneSpec:
    """Named 256x256 two-input scene presets.

    * ``industrial``   -- a few large 10-15 m halls
    * ``inner_city``   -- densely packed 15-25 m blocks
    * ``residential``  -- sparse small 5-8 m homes
    * ``agricultural`` -- no buildings, a gentle ramp

    All presets share the acquisition model: noise sigmas (2.0, 2.2) m,
    2% outliers, heights of ambiguity (45.81, 53.21) m, seed 1.
    """
    rows = cols = 256
    common = dict(
        rows=rows,
        cols=cols,
        ground_level=500.0,
        n_inputs=2,
        noise_sigmas=(2.0, 2.2),
        outlier_rate=0.02,
        outlier_hoas=(45.81, 53.21),
        seed=1,
    )
    if name == "industrial":
        buildings = (
            (28, 24, 12.0, 60, 40),
            (40, 120, 15.0, 50, 50),
            (120, 36, 10.0, 46, 60),
            (150, 150, 13.5, 56, 36),
            (92, 190, 11.0, 40, 46),
            (200, 80, 14.0, 48, 30),
        )
        return SceneSpec(buildings=buildings, **common)
    if name == "inner_city":
        buildings = _grid_layout(
            rows,
            cols,
            block_rows=18,
            block_cols=14,
            street=8,
            heights=(15.0, 18.0, 21.0, 25.0, 17.0, 23.0, 20.0),
            margin=12,
        )
        return SceneSpec(buildings=buildings, **common)
    if name == "residential":
        buildings = tuple(
            (r, c, h, 8, 6)
            for r, c, h in (
                (20, 30, 5.0),
                (24, 180, 6.5),
                (50, 90, 7.0),
                (70, 210, 5.5),
                (90, 40, 8.0),
                (110, 140, 6.0),
                (130, 60, 7.5),
                (150, 200, 5.0),
                (170, 100, 6.5),
                (190, 30, 7.0),
                (210, 160, 8.0),
                (230, 90, 5.5),
            )
        )
        return SceneSpec(buildings=buildings, **common)
    if name == "agricultural":
        return SceneSpec(buildings=(), ramp_m=8.0, **common)
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, seed=seed)
