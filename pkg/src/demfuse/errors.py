"""Exception types shared across the toolkit."""


class DemFuseError(Exception):
    """Base class for all demfuse errors."""


class RasterParseError(DemFuseError):
    """A raster file could not be parsed; the message names file and offset."""


class GridCompatibilityError(DemFuseError):
    """Grids passed to a multi-grid operation do not share rows/cols/cell size."""


class DegenerateRangeError(DemFuseError):
    """Joint normalization is impossible: no valid data or zero dynamic range."""


class CoregistrationError(DemFuseError):
    """No candidate shift produced a valid overlap between the two grids."""


class SolverDivergedError(DemFuseError):
    """The primal-dual iteration produced non-finite values."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"solver diverged at iteration {iteration}")
