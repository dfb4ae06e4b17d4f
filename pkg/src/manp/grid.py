"""Periodic uniform staggered grid: geometry, field containers, operators, norms.

Scalar unknowns (concentrations, potential, charge) live at the grid nodes
(x_i, y_j); vector unknowns (electric displacement, fluxes) live at the face
midpoints (x_{i+1/2}, y_j) and (x_i, y_{j+1/2}); the discrete curl lives at
the cell corners (x_{i+1/2}, y_{j+1/2}).  All indexing wraps periodically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "CellField",
    "FaceField",
    "CornerField",
    "divergence",
    "gradient",
    "curl_scaled",
    "norm_l2",
    "norm_inf",
    "write_cell_csv",
    "read_cell_csv",
    "write_face_csv",
    "read_face_csv",
]

_FMT = ".17g"  # round-trips doubles exactly, >= 15 significant digits


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [x0, x0+lx) x [y0, y0+ly) with nx*ny cells."""

    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"need nx, ny >= 2, got {self.nx} x {self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError(f"need positive extents, got {self.lx} x {self.ly}")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    def cell_x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def cell_y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def xface_x(self) -> np.ndarray:
        return self.x0 + self.dx * (np.arange(self.nx) + 0.5)

    def yface_y(self) -> np.ndarray:
        return self.y0 + self.dy * (np.arange(self.ny) + 0.5)

    def cell_mesh(self):
        return np.meshgrid(self.cell_x(), self.cell_y(), indexing="ij")

    def xface_mesh(self):
        return np.meshgrid(self.xface_x(), self.cell_y(), indexing="ij")

    def yface_mesh(self):
        return np.meshgrid(self.cell_x(), self.yface_y(), indexing="ij")

    def corner_mesh(self):
        return np.meshgrid(self.xface_x(), self.yface_y(), indexing="ij")


def _as_grid_array(grid: GridSpec, values) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.shape != (grid.nx, grid.ny):
        raise ValueError(f"expected shape {(grid.nx, grid.ny)}, got {a.shape}")
    return a


@dataclass
class CellField:
    """Periodic scalar field sampled at nodes (x_i, y_j); values[i, j]."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_grid_array(self.grid, self.values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "CellField":
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "CellField":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn, t: float | None = None) -> "CellField":
        x, y = grid.cell_mesh()
        vals = fn(x, y) if t is None else fn(x, y, t)
        return cls(grid, np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy())

    def value(self, i: int, j: int) -> float:
        return self.values[i % self.grid.nx, j % self.grid.ny]

    def copy(self) -> "CellField":
        return CellField(self.grid, self.values.copy())

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class FaceField:
    """Periodic vector field at face midpoints.

    xcomp[i, j] holds the x-component at (x_{i+1/2}, y_j); ycomp[i, j] the
    y-component at (x_i, y_{j+1/2}).  The wrap faces share storage with
    index nx-1 (resp. ny-1).
    """

    grid: GridSpec
    xcomp: np.ndarray
    ycomp: np.ndarray

    def __post_init__(self):
        self.xcomp = _as_grid_array(self.grid, self.xcomp)
        self.ycomp = _as_grid_array(self.grid, self.ycomp)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FaceField":
        return cls(grid, np.zeros((grid.nx, grid.ny)), np.zeros((grid.nx, grid.ny)))

    @classmethod
    def from_functions(cls, grid: GridSpec, fx, fy, t: float | None = None) -> "FaceField":
        xx, xy = grid.xface_mesh()
        yx, yy = grid.yface_mesh()
        if t is None:
            vx, vy = fx(xx, xy), fy(yx, yy)
        else:
            vx, vy = fx(xx, xy, t), fy(yx, yy, t)
        return cls(
            grid,
            np.broadcast_to(np.asarray(vx, dtype=float), xx.shape).copy(),
            np.broadcast_to(np.asarray(vy, dtype=float), yx.shape).copy(),
        )

    def value_x(self, i: int, j: int) -> float:
        """x-component at (x_{i+1/2}, y_j), periodic in both indices."""
        return self.xcomp[i % self.grid.nx, j % self.grid.ny]

    def value_y(self, i: int, j: int) -> float:
        """y-component at (x_i, y_{j+1/2}), periodic in both indices."""
        return self.ycomp[i % self.grid.nx, j % self.grid.ny]

    def copy(self) -> "FaceField":
        return FaceField(self.grid, self.xcomp.copy(), self.ycomp.copy())


@dataclass
class CornerField:
    """Periodic scalar field at corners (x_{i+1/2}, y_{j+1/2}); values[i, j]."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_grid_array(self.grid, self.values)

    def value(self, i: int, j: int) -> float:
        return self.values[i % self.grid.nx, j % self.grid.ny]


def divergence(f: FaceField) -> CellField:
    """Discrete divergence at cells: backward difference of face values."""
    g = f.grid
    out = (f.xcomp - np.roll(f.xcomp, 1, axis=0)) / g.dx
    out += (f.ycomp - np.roll(f.ycomp, 1, axis=1)) / g.dy
    return CellField(g, out)


def gradient(c: CellField) -> FaceField:
    """Discrete gradient at faces: forward difference of cell values."""
    g = c.grid
    gx = (np.roll(c.values, -1, axis=0) - c.values) / g.dx
    gy = (np.roll(c.values, -1, axis=1) - c.values) / g.dy
    return FaceField(g, gx, gy)


def curl_scaled(d: FaceField, eps_face: FaceField) -> CornerField:
    """Discrete curl of d/eps at corners (i+1/2, j+1/2).

    out = d_x(d.y/eps) - d_y(d.x/eps) with forward differences, so a field of
    the form -eps*gradient(phi) has exactly telescoping (zero) curl.
    """
    if np.any(eps_face.xcomp <= 0) or np.any(eps_face.ycomp <= 0):
        raise ValueError("eps_face must be strictly positive on every face")
    g = d.grid
    gy = d.ycomp / eps_face.ycomp
    gx = d.xcomp / eps_face.xcomp
    out = (np.roll(gy, -1, axis=0) - gy) / g.dx
    out -= (np.roll(gx, -1, axis=1) - gx) / g.dy
    return CornerField(g, out)


def norm_l2(c) -> float:
    """Discrete L2 norm sqrt(dx*dy * sum of squares) over all stored values."""
    if isinstance(c, FaceField):
        s = float(np.sum(c.xcomp**2) + np.sum(c.ycomp**2))
    else:
        s = float(np.sum(c.values**2))
    return float(np.sqrt(c.grid.cell_area * s))


def norm_inf(c) -> float:
    if isinstance(c, FaceField):
        return float(max(np.max(np.abs(c.xcomp)), np.max(np.abs(c.ycomp))))
    return float(np.max(np.abs(c.values)))


def write_cell_csv(path, f: CellField) -> None:
    """Write `x,y,value` rows, j-outer row-major, 17 significant digits."""
    g = f.grid
    xs, ys = g.cell_x(), g.cell_y()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for j in range(g.ny):
            yj = format(ys[j], _FMT)
            for i in range(g.nx):
                w.writerow([format(xs[i], _FMT), yj, format(f.values[i, j], _FMT)])


def _check_coord(path, lineno, got, expect, spacing):
    if abs(got - expect) > 1e-9 * max(abs(expect), spacing):
        raise ValueError(
            f"{path}: row {lineno} coordinate {got!r} does not match the grid "
            f"(expected {expect!r})"
        )


def read_cell_csv(path, grid: GridSpec) -> CellField:
    vals = np.empty((grid.nx, grid.ny))
    xs, ys = grid.cell_x(), grid.cell_y()
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["x", "y", "value"]:
            raise ValueError(f"{path}: expected header x,y,value, got {header}")
        count = 0
        for row in r:
            if len(row) != 3:
                raise ValueError(f"{path}: malformed row {count + 2}: {row}")
            i, j = count % grid.nx, count // grid.nx
            if j >= grid.ny:
                raise ValueError(f"{path}: more rows than grid cells")
            _check_coord(path, count + 2, float(row[0]), xs[i], grid.dx)
            _check_coord(path, count + 2, float(row[1]), ys[j], grid.dy)
            vals[i, j] = float(row[2])
            count += 1
    if count != grid.ncells:
        raise ValueError(f"{path}: expected {grid.ncells} rows, got {count}")
    return CellField(grid, vals)


def write_face_csv(path, f: FaceField) -> None:
    """Write `x,y,component,value`: the x-component block then the y block."""
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "component", "value"])
        xs, ys = g.xface_x(), g.cell_y()
        for j in range(g.ny):
            yj = format(ys[j], _FMT)
            for i in range(g.nx):
                w.writerow([format(xs[i], _FMT), yj, "x", format(f.xcomp[i, j], _FMT)])
        xs, ys = g.cell_x(), g.yface_y()
        for j in range(g.ny):
            yj = format(ys[j], _FMT)
            for i in range(g.nx):
                w.writerow([format(xs[i], _FMT), yj, "y", format(f.ycomp[i, j], _FMT)])


def read_face_csv(path, grid: GridSpec) -> FaceField:
    xvals = np.empty((grid.nx, grid.ny))
    yvals = np.empty((grid.nx, grid.ny))
    counts = {"x": 0, "y": 0}
    coords = {
        "x": (grid.xface_x(), grid.cell_y()),
        "y": (grid.cell_x(), grid.yface_y()),
    }
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["x", "y", "component", "value"]:
            raise ValueError(f"{path}: expected header x,y,component,value, got {header}")
        for lineno, row in enumerate(r, start=2):
            if len(row) != 4 or row[2] not in counts:
                raise ValueError(f"{path}: malformed row {lineno}: {row}")
            comp = row[2]
            k = counts[comp]
            if k >= grid.ncells:
                raise ValueError(f"{path}: too many {comp}-component rows")
            i, j = k % grid.nx, k // grid.nx
            xs, ys = coords[comp]
            _check_coord(path, lineno, float(row[0]), xs[i], grid.dx)
            _check_coord(path, lineno, float(row[1]), ys[j], grid.dy)
            (xvals if comp == "x" else yvals)[i, j] = float(row[3])
            counts[comp] += 1
    if counts["x"] != grid.ncells or counts["y"] != grid.ncells:
        raise ValueError(f"{path}: expected {grid.ncells} rows per component, got {counts}")
    return FaceField(grid, xvals, yvals)
