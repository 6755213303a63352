"""DEM grid container, raster file I/O, normalization, and shift coregistration.

Two on-disk formats are supported:

* ``esri-ascii`` -- the plain-text ESRI/ArcInfo grid: six header lines
  (``ncols``, ``nrows``, ``xllcorner``, ``yllcorner``, ``cellsize``,
  ``NODATA_value``) followed by whitespace-separated rows, northernmost
  row first.  Heights are printed with 6 significant digits; the nodata
  sentinel is printed exactly.
* ``raw-f32`` -- a payload file of rows x cols little-endian float32
  values (row-major, top row first) next to a UTF-8 ``<payload>.hdr``
  sidecar with ``key=value`` lines (rows, cols, cell_size, origin_x,
  origin_y, nodata).  Round-trips are bit-exact.

Internally row 0 of ``heights`` is the *southernmost* row, consistent with
the lower-left corner origin; readers and writers reverse row order at the
file boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CoregistrationError,
    DegenerateRangeError,
    GridCompatibilityError,
    RasterParseError,
)

DEFAULT_NODATA = -9999.0

ESRI_ASCII = "esri-ascii"
RAW_F32 = "raw-f32"
FORMATS = (ESRI_ASCII, RAW_F32)

_ESRI_SUFFIXES = {".asc", ".agr", ".grd", ".txt"}


@dataclass(frozen=True, eq=False)
class DemGrid:
    """A georeferenced single-band raster of heights with a nodata sentinel.

    ``heights`` is a read-only float64 array of shape (rows, cols); every
    cell is either finite or exactly ``nodata_value``.  Row 0 is the
    southernmost row.  ``cell_size`` and the origin are carried as metadata
    only.  Instances are immutable and safe to share across workers.
    """

    rows: int
    cols: int
    heights: np.ndarray
    cell_size: float = 1.0
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        h = np.asarray(self.heights, dtype=np.float64)
        if h.shape == (self.rows * self.cols,):
            h = h.reshape(self.rows, self.cols)
        if h.shape != (self.rows, self.cols):
            raise ValueError(
                f"heights shape {h.shape} does not match {self.rows}x{self.cols}"
            )
        if not math.isfinite(self.nodata_value):
            raise ValueError("nodata_value must be finite")
        bad = ~np.isfinite(h) & ~(h == self.nodata_value)
        if bad.any():
            raise ValueError("heights must be finite or equal to nodata_value")
        h = h.copy()
        h.flags.writeable = False
        object.__setattr__(self, "heights", h)

    @classmethod
    def from_array(
        cls,
        values,
        cell_size: float = 1.0,
        origin: tuple[float, float] = (0.0, 0.0),
        nodata_value: float = DEFAULT_NODATA,
    ) -> "DemGrid":
        """Build a grid from a 2-D array; NaN/inf cells become nodata."""
        a = np.asarray(values, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
        a = np.where(np.isfinite(a), a, nodata_value)
        return cls(
            rows=a.shape[0],
            cols=a.shape[1],
            heights=a,
            cell_size=cell_size,
            origin_x=origin[0],
            origin_y=origin[1],
            nodata_value=nodata_value,
        )

    @cached_property
    def valid_mask(self) -> np.ndarray:
        m = self.heights != self.nodata_value
        m.flags.writeable = False
        return m

    @cached_property
    def masked(self) -> np.ndarray:
        """Heights with nodata cells replaced by NaN (read-only view copy)."""
        m = np.where(self.valid_mask, self.heights, np.nan)
        m.flags.writeable = False
        return m

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid_values(self) -> np.ndarray:
        return self.heights[self.valid_mask]

    def compatible_with(self, other: "DemGrid") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.cell_size == other.cell_size
        )

    def with_heights(self, values) -> "DemGrid":
        """New grid with the same metadata; NaN/inf in ``values`` become nodata.

        If a finite value collides with the sentinel, a safe sentinel is
        substituted so the nodata mask stays exact.
        """
        a = np.asarray(values, dtype=np.float64)
        if a.shape != (self.rows, self.cols):
            raise ValueError(f"values shape {a.shape} != {(self.rows, self.cols)}")
        finite = np.isfinite(a)
        nodata = self.nodata_value
        if np.any(a[finite] == nodata):
            nodata = _safe_sentinel(a[finite])
        return DemGrid(
            rows=self.rows,
            cols=self.cols,
            heights=np.where(finite, a, nodata),
            cell_size=self.cell_size,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            nodata_value=nodata,
        )


def _safe_sentinel(finite_values: np.ndarray) -> float:
    if DEFAULT_NODATA not in finite_values:
        return DEFAULT_NODATA
    return float(np.min(finite_values)) - 1.0e6


@dataclass(frozen=True)
class NormalizationContext:
    """The joint height extremes used to map heights onto [0, 1]."""

    h_min: float
    h_max: float

    def __post_init__(self):
        if not (math.isfinite(self.h_min) and math.isfinite(self.h_max)):
            raise ValueError("normalization bounds must be finite")
        if not self.h_min < self.h_max:
            raise ValueError(f"h_min must be < h_max, got [{self.h_min}, {self.h_max}]")

    @property
    def span(self) -> float:
        return self.h_max - self.h_min


def require_compatible(grids: Sequence[DemGrid]) -> None:
    first = grids[0]
    for i, g in enumerate(grids[1:], start=2):
        if not first.compatible_with(g):
            raise GridCompatibilityError(
                f"grid {i} ({g.rows}x{g.cols}, cell {g.cell_size}) is incompatible "
                f"with grid 1 ({first.rows}x{first.cols}, cell {first.cell_size})"
            )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _infer_format(path: Path) -> str:
    if path.suffix.lower() in _ESRI_SUFFIXES:
        return ESRI_ASCII
    return RAW_F32


def _check_format(fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown raster format {fmt!r}; expected one of {FORMATS}")
    return fmt


def read_grid(path, format: str | None = None) -> DemGrid:
    """Read a DEM grid from ``path`` in the given (or inferred) format."""
    p = Path(path)
    fmt = _check_format(format) if format is not None else _infer_format(p)
    if fmt == ESRI_ASCII:
        return _read_esri_ascii(p)
    return _read_raw_f32(p)


def write_grid(grid: DemGrid, path, format: str | None = None) -> None:
    """Write ``grid`` to ``path``; raw-f32 re-reads bit-identically."""
    p = Path(path)
    fmt = _check_format(format) if format is not None else _infer_format(p)
    if fmt == ESRI_ASCII:
        _write_esri_ascii(grid, p)
    else:
        _write_raw_f32(grid, p)


_ESRI_HEADER_KEYS = {
    "ncols": int,
    "nrows": int,
    "xllcorner": float,
    "yllcorner": float,
    "cellsize": float,
    "nodata_value": float,
}


def _read_esri_ascii(path: Path) -> DemGrid:
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise RasterParseError(f"{path}: cannot read: {e}") from e

    header: dict[str, float] = {}
    body_start = 0
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            body_start = lineno
            continue
        key = parts[0].lower()
        if key not in _ESRI_HEADER_KEYS:
            body_start = lineno - 1
            break
        if len(parts) != 2:
            raise RasterParseError(f"{path}: line {lineno}: malformed header line {line!r}")
        try:
            header[key] = _ESRI_HEADER_KEYS[key](parts[1])
        except ValueError as e:
            raise RasterParseError(
                f"{path}: line {lineno}: bad value for {parts[0]}: {parts[1]!r}"
            ) from e
        body_start = lineno
    else:
        body_start = len(lines)

    for required in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if required not in header:
            raise RasterParseError(f"{path}: missing header line {required!r}")
    rows = int(header["nrows"])
    cols = int(header["ncols"])
    if rows < 1 or cols < 1:
        raise RasterParseError(f"{path}: non-positive grid dimensions {rows}x{cols}")
    nodata = float(header.get("nodata_value", DEFAULT_NODATA))

    values = np.empty(rows * cols, dtype=np.float64)
    n = 0
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        for tok in line.split():
            if n >= rows * cols:
                raise RasterParseError(
                    f"{path}: line {lineno}: more than {rows * cols} data cells"
                )
            try:
                v = float(tok)
            except ValueError as e:
                raise RasterParseError(
                    f"{path}: line {lineno}: non-numeric cell {tok!r}"
                ) from e
            if not math.isfinite(v) and v != nodata:
                raise RasterParseError(
                    f"{path}: line {lineno}: non-finite cell {tok!r}"
                )
            values[n] = v
            n += 1
    if n != rows * cols:
        raise RasterParseError(
            f"{path}: expected {rows * cols} data cells ({rows}x{cols}), found {n}"
        )
    # File rows run north to south; flip to the internal south-up order.
    heights = values.reshape(rows, cols)[::-1]
    return DemGrid(
        rows=rows,
        cols=cols,
        heights=heights,
        cell_size=float(header["cellsize"]),
        origin_x=float(header["xllcorner"]),
        origin_y=float(header["yllcorner"]),
        nodata_value=nodata,
    )


def _fmt_exact(x: float) -> str:
    return repr(float(x))


def _write_esri_ascii(grid: DemGrid, path: Path) -> None:
    out = [
        f"ncols {grid.cols}",
        f"nrows {grid.rows}",
        f"xllcorner {_fmt_exact(grid.origin_x)}",
        f"yllcorner {_fmt_exact(grid.origin_y)}",
        f"cellsize {_fmt_exact(grid.cell_size)}",
        f"NODATA_value {_fmt_exact(grid.nodata_value)}",
    ]
    valid = grid.valid_mask
    for r in range(grid.rows - 1, -1, -1):
        cells = [
            f"{grid.heights[r, c]:.6g}" if valid[r, c] else _fmt_exact(grid.nodata_value)
            for c in range(grid.cols)
        ]
        out.append(" ".join(cells))
    path.write_text("\n".join(out) + "\n")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def _read_raw_f32(path: Path) -> DemGrid:
    hdr = _sidecar(path)
    try:
        lines = hdr.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise RasterParseError(f"{hdr}: cannot read sidecar header: {e}") from e
    fields: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RasterParseError(f"{hdr}: line {lineno}: expected key=value, got {line!r}")
        fields[key.strip()] = value.strip()
    try:
        rows = int(fields["rows"])
        cols = int(fields["cols"])
        cell_size = float(fields["cell_size"])
        origin_x = float(fields["origin_x"])
        origin_y = float(fields["origin_y"])
        nodata = float(fields["nodata"])
    except KeyError as e:
        raise RasterParseError(f"{hdr}: missing header key {e.args[0]!r}") from e
    except ValueError as e:
        raise RasterParseError(f"{hdr}: bad header value: {e}") from e
    if rows < 1 or cols < 1:
        raise RasterParseError(f"{hdr}: non-positive grid dimensions {rows}x{cols}")

    try:
        payload = path.read_bytes()
    except OSError as e:
        raise RasterParseError(f"{path}: cannot read payload: {e}") from e
    expected = rows * cols * 4
    if len(payload) != expected:
        raise RasterParseError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"({rows}x{cols} float32)"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(data) & ~(data == nodata))
    if bad.size:
        raise RasterParseError(
            f"{path}: non-finite cell at byte offset {int(bad[0]) * 4}"
        )
    heights = data.reshape(rows, cols)[::-1]
    return DemGrid(
        rows=rows,
        cols=cols,
        heights=heights,
        cell_size=cell_size,
        origin_x=origin_x,
        origin_y=origin_y,
        nodata_value=nodata,
    )


def _write_raw_f32(grid: DemGrid, path: Path) -> None:
    sentinel32 = float(np.float32(grid.nodata_value))
    if sentinel32 != grid.nodata_value:
        raise ValueError(
            f"nodata sentinel {grid.nodata_value!r} is not float32-representable; "
            "the raw-f32 format cannot preserve the nodata mask"
        )
    hdr = _sidecar(path)
    hdr.write_text(
        "".join(
            f"{k}={v}\n"
            for k, v in (
                ("rows", grid.rows),
                ("cols", grid.cols),
                ("cell_size", _fmt_exact(grid.cell_size)),
                ("origin_x", _fmt_exact(grid.origin_x)),
                ("origin_y", _fmt_exact(grid.origin_y)),
                ("nodata", _fmt_exact(grid.nodata_value)),
            )
        ),
        encoding="utf-8",
    )
    path.write_bytes(grid.heights[::-1].astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def joint_normalize(
    grids: Sequence[DemGrid],
) -> tuple[list[DemGrid], NormalizationContext]:
    """Scale all grids onto [0, 1] using the joint min/max over every valid pixel.

    All grids must be compatible.  Raises :class:`DegenerateRangeError` when
    no valid pixel exists or the joint dynamic range is zero.
    """
    if not grids:
        raise ValueError("joint_normalize needs at least one grid")
    require_compatible(grids)
    h_min = math.inf
    h_max = -math.inf
    for g in grids:
        vals = g.valid_values()
        if vals.size:
            h_min = min(h_min, float(vals.min()))
            h_max = max(h_max, float(vals.max()))
    if not math.isfinite(h_min):
        raise DegenerateRangeError("all input grids are entirely nodata")
    if h_min == h_max:
        raise DegenerateRangeError(
            f"degenerate dynamic range: every valid height equals {h_min}"
        )
    ctx = NormalizationContext(h_min=h_min, h_max=h_max)
    out = []
    for g in grids:
        scaled = np.where(g.valid_mask, (g.heights - h_min) / ctx.span, np.nan)
        out.append(g.with_heights(scaled))
    return out, ctx


def denormalize(grid: DemGrid, ctx: NormalizationContext) -> DemGrid:
    """Invert :func:`joint_normalize`: h = n * (h_max - h_min) + h_min."""
    values = np.where(grid.valid_mask, grid.heights * ctx.span + ctx.h_min, np.nan)
    return grid.with_heights(values)


# ---------------------------------------------------------------------------
# Shift coregistration
# ---------------------------------------------------------------------------


def translate_grid(grid: DemGrid, dx: int, dy: int) -> DemGrid:
    """Translate grid content by ``dx`` columns and ``dy`` rows; vacated cells are nodata."""
    out = np.full((grid.rows, grid.cols), np.nan)
    src = grid.masked
    r0, r1 = max(0, dy), grid.rows + min(0, dy)
    c0, c1 = max(0, dx), grid.cols + min(0, dx)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = src[r0 - dy : r1 - dy, c0 - dx : c1 - dx]
    return grid.with_heights(out)


def _overlap_diff(a: np.ndarray, b: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Finite differences translate(a, dx, dy) - b over the in-bounds window."""
    rows, cols = a.shape
    r0, r1 = max(0, dy), rows + min(0, dy)
    c0, c1 = max(0, dx), cols + min(0, dx)
    if r0 >= r1 or c0 >= c1:
        return np.empty(0)
    d = a[r0 - dy : r1 - dy, c0 - dx : c1 - dx] - b[r0:r1, c0:c1]
    return d[np.isfinite(d)]


def coregister_shift(
    moving: DemGrid, fixed: DemGrid, max_shift: int
) -> tuple[DemGrid, tuple[int, int], float]:
    """Align ``moving`` to ``fixed`` by an integer pixel shift plus a vertical bias.

    Searches all |dx|, |dy| <= max_shift for the translation of ``moving``
    minimizing the mean squared height difference over the valid overlap,
    breaking ties toward smaller |dx|+|dy|, then dx, then dy.  The median
    height difference at the chosen shift is subtracted as the bias.

    Returns ``(aligned, (dx, dy), bias)``.
    """
    require_compatible([moving, fixed])
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    a = moving.masked
    b = fixed.masked
    span = range(-max_shift, max_shift + 1)
    candidates = sorted(
        ((dx, dy) for dx in span for dy in span),
        key=lambda s: (abs(s[0]) + abs(s[1]), s[0], s[1]),
    )
    best: tuple[int, int] | None = None
    best_mse = math.inf
    for dx, dy in candidates:
        diff = _overlap_diff(a, b, dx, dy)
        if diff.size == 0:
            continue
        mse = float(np.mean(diff * diff))
        if mse < best_mse:
            best_mse = mse
            best = (dx, dy)
    if best is None:
        raise CoregistrationError(
            f"no valid overlap between the grids for any shift within +-{max_shift}"
        )
    dx, dy = best
    bias = float(np.median(_overlap_diff(a, b, dx, dy)))
    translated = translate_grid(moving, dx, dy)
    aligned = translated.with_heights(
        np.where(translated.valid_mask, translated.heights - bias, np.nan)
    )
    return aligned, best, bias


# ---------------------------------------------------------------------------
# Stack helpers shared by the estimator layer
# ---------------------------------------------------------------------------


def grids_to_stack(grids: Iterable[DemGrid]) -> np.ndarray:
    """Stack grids into a (k, rows, cols) float array with NaN for nodata."""
    glist = list(grids)
    if not glist:
        raise ValueError("need at least one grid")
    require_compatible(glist)
    return np.stack([g.masked for g in glist])
