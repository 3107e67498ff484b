"""Georeferenced elevation rasters, binary masks, and grid-indexed point sets.

Conventions shared by the whole package:

* Arrays have shape ``(H, W)`` and are indexed ``[j, i]``, where ``i`` is the
  column (x axis, west to east) and ``j`` is the row (y axis, south to
  north).  Row ``j = 0`` is the southernmost row.
* World coordinates refer to cell centers: ``x = origin_x + i * cell_size_x``
  and ``y = origin_y + j * cell_size_y``.
* Missing elevations are held as NaN in memory and serialized as the NODATA
  value of the ASCII grid format.

The on-disk format is the plain-text ASCII grid (``.asc``): a header of
``ncols``, ``nrows``, ``xllcorner``, ``yllcorner``, ``cellsize`` and an
optional ``NODATA_value``, followed by ``nrows`` rows of ``ncols`` values
ordered north to south.  Because files run north to south and arrays run
south to north, rows are flipped on load and save.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_NODATA = -9999.0

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class AsciiGridError(ValueError):
    """Malformed ``.asc`` content; message carries file path and line number."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass
class GridGeoref:
    """Placement of a W x H cell grid in world coordinates.

    ``origin_x``/``origin_y`` are the world coordinates of the center of
    cell (0, 0), the southwest cell.
    """

    width: int
    height: int
    cell_size_x: float
    cell_size_y: float
    origin_x: float
    origin_y: float

    def _check_georef(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if not (self.cell_size_x > 0 and self.cell_size_y > 0):
            raise ValueError("cell sizes must be positive")

    def cell_to_world(self, i, j):
        """World coordinates of the center of cell (i, j). Accepts arrays."""
        x = self.origin_x + np.asarray(i) * self.cell_size_x
        y = self.origin_y + np.asarray(j) * self.cell_size_y
        return x, y

    def world_to_cell(self, x, y):
        """Continuous cell coordinates of a world position. Accepts arrays."""
        ci = (np.asarray(x) - self.origin_x) / self.cell_size_x
        cj = (np.asarray(y) - self.origin_y) / self.cell_size_y
        return ci, cj

    def nearest_cell(self, x, y):
        """Indices of the cell whose center is nearest to (x, y), clipped to
        the grid. Ties between two centers round half to even. Accepts arrays."""
        ci, cj = self.world_to_cell(x, y)
        i = np.clip(np.round(ci), 0, self.width - 1).astype(int)
        j = np.clip(np.round(cj), 0, self.height - 1).astype(int)
        return i, j

    @property
    def center_extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) spanned by cell centers."""
        return (
            self.origin_x,
            self.origin_x + (self.width - 1) * self.cell_size_x,
            self.origin_y,
            self.origin_y + (self.height - 1) * self.cell_size_y,
        )

    @property
    def edge_extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the outer cell edges."""
        return (
            self.origin_x - 0.5 * self.cell_size_x,
            self.origin_x + (self.width - 0.5) * self.cell_size_x,
            self.origin_y - 0.5 * self.cell_size_y,
            self.origin_y + (self.height - 0.5) * self.cell_size_y,
        )

    def georef_equals(self, other: "GridGeoref", tol: float = 1e-9) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and math.isclose(self.cell_size_x, other.cell_size_x, rel_tol=tol, abs_tol=tol)
            and math.isclose(self.cell_size_y, other.cell_size_y, rel_tol=tol, abs_tol=tol)
            and math.isclose(self.origin_x, other.origin_x, rel_tol=tol, abs_tol=tol)
            and math.isclose(self.origin_y, other.origin_y, rel_tol=tol, abs_tol=tol)
        )


@dataclass
class Raster(GridGeoref):
    """Elevation grid. ``values`` has shape (H, W); NaN marks missing cells."""

    values: np.ndarray = None

    def __post_init__(self):
        self._check_georef()
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {self.values.shape} does not match (H, W)="
                f"({self.height}, {self.width})"
            )
        bad = ~(np.isfinite(self.values) | np.isnan(self.values))
        if bad.any():
            raise ValueError("raster contains non-finite values that are not NODATA")

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass
class Mask(GridGeoref):
    """Binary grid aligned with a raster. ``bits`` has shape (H, W), values 0/1."""

    bits: np.ndarray = None

    def __post_init__(self):
        self._check_georef()
        self.bits = np.asarray(self.bits)
        if self.bits.shape != (self.height, self.width):
            raise ValueError(
                f"bits shape {self.bits.shape} does not match (H, W)="
                f"({self.height}, {self.width})"
            )
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        self.bits = self.bits.astype(np.uint8)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def complement(self) -> "Mask":
        return Mask(self.width, self.height, self.cell_size_x, self.cell_size_y,
                    self.origin_x, self.origin_y, 1 - self.bits)


@dataclass
class GridPoint:
    """A single grid cell viewed as a 3D point at its cell center."""

    i: int
    j: int
    x: float
    y: float
    z: float


@dataclass
class PointGrid(GridGeoref):
    """Sparse set of elevation points that live on grid cells.

    ``z`` has shape (H, W); NaN marks cells that carry no point.
    """

    z: np.ndarray = None

    def __post_init__(self):
        self._check_georef()
        self.z = np.asarray(self.z, dtype=float)
        if self.z.shape != (self.height, self.width):
            raise ValueError(
                f"z shape {self.z.shape} does not match (H, W)=({self.height}, {self.width})"
            )

    @property
    def occupancy(self) -> np.ndarray:
        return ~np.isnan(self.z)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def indices(self) -> list[tuple[int, int]]:
        """Occupied (i, j) pairs in row-major scan order (j outer, i inner)."""
        jj, ii = np.nonzero(self.occupancy)
        return [(int(i), int(j)) for j, i in zip(jj, ii)]

    def point(self, i: int, j: int) -> GridPoint:
        x, y = self.cell_to_world(i, j)
        return GridPoint(i, j, float(x), float(y), float(self.z[j, i]))

    def xyz(self) -> np.ndarray:
        """(N, 3) array of occupied points in row-major scan order."""
        occ = self.occupancy
        jj, ii = np.nonzero(occ)
        x, y = self.cell_to_world(ii, jj)
        return np.column_stack([x, y, self.z[jj, ii]])

    def subset(self, mask: Mask) -> "PointGrid":
        """Points of self whose mask bit is 1."""
        if (mask.height, mask.width) != (self.height, self.width):
            raise ValueError("mask dimensions do not match point grid")
        z = np.where(mask.bits == 1, self.z, np.nan)
        return PointGrid(self.width, self.height, self.cell_size_x, self.cell_size_y,
                         self.origin_x, self.origin_y, z)


def _parse_ascii(path: str | Path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    header: dict[str, float] = {}
    rows: list[np.ndarray] = []
    ncols = nrows = None
    with open(path, "r") as fh:
        data_started = False
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if not data_started and key in _HEADER_KEYS:
                if len(parts) != 2:
                    raise AsciiGridError(path, line_no, f"header line needs one value, got {line.strip()!r}")
                try:
                    header[key] = float(parts[1])
                except ValueError:
                    raise AsciiGridError(path, line_no, f"cannot parse header value {parts[1]!r}") from None
                continue
            data_started = True
            if ncols is None:
                for req in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
                    if req not in header:
                        raise AsciiGridError(path, line_no, f"missing header line {req!r}")
                ncols = int(header["ncols"])
                nrows = int(header["nrows"])
            try:
                row = np.array([float(v) for v in parts], dtype=float)
            except ValueError:
                raise AsciiGridError(path, line_no, f"cannot parse data row: {line.strip()[:60]!r}") from None
            if row.size != ncols:
                raise AsciiGridError(
                    path, line_no,
                    f"dimension mismatch: row has {row.size} values, header says ncols {ncols}")
            rows.append(row)
    if ncols is None:
        raise AsciiGridError(path, 1, "no data rows found")
    if len(rows) != nrows:
        raise AsciiGridError(
            path, line_no,
            f"dimension mismatch: {len(rows)} data rows, header says nrows {nrows}")
    values = np.vstack(rows)
    return header, values


def load_raster(path: str | Path) -> Raster:
    """Read an ASCII grid file into a Raster.

    Raises FileNotFoundError if the file is absent and AsciiGridError (with
    the offending line number) on malformed content.
    """
    header, values = _parse_ascii(path)
    cell = float(header["cellsize"])
    if cell <= 0:
        raise AsciiGridError(path, 1, "cellsize must be positive")
    nodata = header.get("nodata_value")
    if nodata is not None:
        values = np.where(values == nodata, np.nan, values)
    values = np.flipud(values)  # file rows run north to south
    return Raster(
        width=int(header["ncols"]),
        height=int(header["nrows"]),
        cell_size_x=cell,
        cell_size_y=cell,
        origin_x=float(header["xllcorner"]) + 0.5 * cell,
        origin_y=float(header["yllcorner"]) + 0.5 * cell,
        values=values,
    )


def save_raster(raster: Raster, path: str | Path, nodata: float = DEFAULT_NODATA) -> None:
    """Write a Raster as an ASCII grid. Requires square cells."""
    if not math.isclose(raster.cell_size_x, raster.cell_size_y, rel_tol=1e-12):
        raise ValueError("ASCII grid format requires square cells")
    cell = raster.cell_size_x
    out = np.where(np.isnan(raster.values), nodata, raster.values)
    out = np.flipud(out)
    lines = [
        f"ncols {raster.width}",
        f"nrows {raster.height}",
        f"xllcorner {float(raster.origin_x - 0.5 * cell)!r}",
        f"yllcorner {float(raster.origin_y - 0.5 * cell)!r}",
        f"cellsize {float(cell)!r}",
        f"NODATA_value {float(nodata)!r}",
    ]
    for row in out:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mask(path: str | Path) -> Mask:
    """Read a 0/1 ASCII grid as a Mask. NODATA cells become 0."""
    raster = load_raster(path)
    bits = np.where(np.isnan(raster.values), 0.0, raster.values)
    if not np.isin(bits, (0.0, 1.0)).all():
        raise AsciiGridError(path, 1, "mask values must be 0 or 1")
    return Mask(raster.width, raster.height, raster.cell_size_x, raster.cell_size_y,
                raster.origin_x, raster.origin_y, bits.astype(np.uint8))


def save_mask(mask: Mask, path: str | Path) -> None:
    raster = Raster(mask.width, mask.height, mask.cell_size_x, mask.cell_size_y,
                    mask.origin_x, mask.origin_y, mask.bits.astype(float))
    save_raster(raster, path)


def resample_mask(mask: Mask, target: Raster) -> Mask:
    """Nearest-neighbor resampling of a mask onto the grid of ``target``.

    The mask and the target must cover the same world extent to within half
    of one source cell.
    """
    sx, sy = mask.cell_size_x, mask.cell_size_y
    a = mask.edge_extent
    b = target.edge_extent
    tol = (0.5 * sx, 0.5 * sx, 0.5 * sy, 0.5 * sy)
    for va, vb, t in zip(a, b, tol):
        if abs(va - vb) > t:
            raise ValueError(
                f"mask extent {a} does not match target extent {b} within half a source cell")
    xs, ys = target.cell_to_world(np.arange(target.width), np.arange(target.height))
    si, _ = mask.nearest_cell(xs, np.zeros_like(xs))
    _, sj = mask.nearest_cell(np.zeros_like(ys), ys)
    bits = mask.bits[np.ix_(sj, si)]
    return Mask(target.width, target.height, target.cell_size_x, target.cell_size_y,
                target.origin_x, target.origin_y, bits)


def extract_road_points(dsm: Raster, mask: Mask) -> PointGrid:
    """Points of the DSM whose mask bit is 1 and whose value is present."""
    if (mask.height, mask.width) != (dsm.height, dsm.width):
        raise ValueError("mask dimensions do not match raster")
    z = np.where((mask.bits == 1) & dsm.valid, dsm.values, np.nan)
    return PointGrid(dsm.width, dsm.height, dsm.cell_size_x, dsm.cell_size_y,
                     dsm.origin_x, dsm.origin_y, z)


def extract_terrain_points(dtm: Raster, road_mask: Mask) -> PointGrid:
    """Points of the DTM outside the road mask with values present."""
    if (road_mask.height, road_mask.width) != (dtm.height, dtm.width):
        raise ValueError("mask dimensions do not match raster")
    z = np.where((road_mask.bits == 0) & dtm.valid, dtm.values, np.nan)
    return PointGrid(dtm.width, dtm.height, dtm.cell_size_x, dtm.cell_size_y,
                     dtm.origin_x, dtm.origin_y, z)


def point_grid_from_raster(raster: Raster) -> PointGrid:
    """All present cells of a raster as a PointGrid."""
    return PointGrid(raster.width, raster.height, raster.cell_size_x, raster.cell_size_y,
                     raster.origin_x, raster.origin_y, raster.values.copy())
