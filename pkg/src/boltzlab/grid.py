"""Velocity lattice and density fields.

The grid is the uniform lattice ``{i*h : i = -n/2, ..., n/2 - 1}`` per axis
with ``h = 2*v_max/n``, so the origin is always a node and points like
``(1, 0)`` are nodes whenever ``1/h`` is an integer.  Fields are plain
float64 arrays indexed ``values[i0, i1(, i2)]`` with axis 0 the first
velocity coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InputError


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform truncated velocity lattice centered at the origin."""

    d: int
    v_max: float
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise InputError(f"dimension must be 2 or 3, got {self.d}")
        if self.n <= 0 or self.n % 2 != 0:
            raise InputError(f"points per axis must be a positive even integer, got {self.n}")
        if not np.isfinite(self.v_max) or self.v_max <= 0:
            raise InputError(f"v_max must be positive and finite, got {self.v_max}")

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis(self) -> np.ndarray:
        return self.h * np.arange(-self.n // 2, self.n // 2, dtype=float)

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(*self.shape, d)``."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_norms(self) -> np.ndarray:
        return np.linalg.norm(self.nodes(), axis=-1)

    def index_coords(self, points: np.ndarray) -> np.ndarray:
        """Map physical coordinates to fractional array indices."""
        points = np.asarray(points, dtype=float)
        return points / self.h + self.n // 2

    def contains(self, points: np.ndarray) -> np.ndarray:
        idx = self.index_coords(points)
        return np.all((idx >= 0) & (idx <= self.n - 1), axis=-1)


@dataclass(frozen=True, eq=False)
class DistributionField:
    """Nonnegative density values on a :class:`VelocityGrid`."""

    grid: VelocityGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise InputError(
                f"field shape {values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("field contains non-finite values")
        if np.any(values < 0):
            raise InputError("field contains negative values")
        object.__setattr__(self, "values", values)

    def interp(self, points: np.ndarray, order: int = 1) -> np.ndarray:
        """Evaluate the field at arbitrary points, zero outside the box."""
        return interp_values(self.grid, self.values, points, order=order)

    def max(self) -> float:
        return float(self.values.max())


def interp_values(grid: VelocityGrid, values: np.ndarray, points: np.ndarray,
                  order: int = 1) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    squeeze = points.ndim == 1
    pts = np.atleast_2d(points)
    coords = grid.index_coords(pts).T
    out = map_coordinates(values, coords, order=order, mode="constant", cval=0.0,
                          prefilter=order > 1)
    return float(out[0]) if squeeze else out


def quintic_step(t):
    """C^2 smoothstep 6t^5 - 15t^4 + 10t^3 clipped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def radial_bump(rho, inner, outer):
    """Radial C^2 profile: 1 for rho <= inner, 0 for rho >= outer."""
    if outer <= inner:
        raise InputError("bump transition interval must have positive width")
    return 1.0 - quintic_step((np.asarray(rho, dtype=float) - inner) / (outer - inner))


def zero_field(grid: VelocityGrid) -> DistributionField:
    return DistributionField(grid, np.zeros(grid.shape))


def maxwellian_field(grid: VelocityGrid, mass: float = 1.0,
                     temperature: float = 1.0) -> DistributionField:
    """Isotropic Maxwellian mass/(2*pi*T)^(d/2) * exp(-|v|^2/(2T))."""
    if mass < 0 or temperature <= 0:
        raise InputError("maxwellian needs mass >= 0 and temperature > 0")
    r2 = np.sum(grid.nodes() ** 2, axis=-1)
    norm = mass / (2.0 * np.pi * temperature) ** (grid.d / 2.0)
    return DistributionField(grid, norm * np.exp(-r2 / (2.0 * temperature)))


def indicator_field(grid: VelocityGrid, radius: float, height: float = 1.0) -> DistributionField:
    """height * 1_{|v| <= radius} sampled on the lattice."""
    if radius <= 0 or height < 0:
        raise InputError("indicator needs radius > 0 and height >= 0")
    vals = np.where(grid.node_norms() <= radius, height, 0.0)
    return DistributionField(grid, vals)


def two_bumps_field(grid: VelocityGrid, centers, radius: float,
                    height: float) -> DistributionField:
    """Sum of two compactly supported C^2 bumps.

    Each bump equals ``height`` for ``|v-c| <= radius/2`` and decays to zero
    at ``|v-c| = radius`` through a quintic smoothstep.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.shape != (2, grid.d):
        raise InputError(f"two_bumps expects 2 centers of dimension {grid.d}")
    if radius <= 0 or height < 0:
        raise InputError("two_bumps needs radius > 0 and height >= 0")
    nodes = grid.nodes()
    vals = np.zeros(grid.shape)
    for c in centers:
        rho = np.linalg.norm(nodes - c, axis=-1)
        vals += height * radial_bump(rho, 0.5 * radius, radius)
    return DistributionField(grid, vals)


_IC_BUILDERS = {
    "maxwellian": lambda grid, p: maxwellian_field(
        grid, mass=p.get("mass", 1.0), temperature=p.get("temperature", 1.0)),
    "indicator": lambda grid, p: indicator_field(
        grid, radius=p["radius"], height=p.get("height", 1.0)),
    "two_bumps": lambda grid, p: two_bumps_field(
        grid, centers=p["centers"], radius=p["radius"], height=p["height"]),
    "zero": lambda grid, p: zero_field(grid),
}


def build_initial_condition(grid: VelocityGrid, descriptor: dict) -> DistributionField:
    """Build a field from a run-config initial-condition descriptor."""
    if not isinstance(descriptor, dict) or "kind" not in descriptor:
        raise InputError("initial condition descriptor must be a dict with a 'kind' key")
    kind = descriptor["kind"]
    if kind not in _IC_BUILDERS:
        raise InputError(f"unknown initial condition kind {kind!r}")
    params = {k: v for k, v in descriptor.items() if k != "kind"}
    try:
        return _IC_BUILDERS[kind](grid, params)
    except KeyError as exc:
        raise InputError(f"initial condition {kind!r} is missing field {exc}") from exc


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def field_to_csv(f: DistributionField, path) -> None:
    """Write one row per node: integer indices, coordinates, value."""
    grid = f.grid
    d = grid.d
    ax = grid.axis()
    header = [f"i{k+1}" for k in range(d)] + [f"v{k+1}" for k in range(d)] + ["f"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in np.ndindex(grid.shape):
            row = [str(i) for i in idx]
            row += [_fmt(ax[i]) for i in idx]
            row.append(_fmt(f.values[idx]))
            writer.writerow(row)


def field_from_csv(path) -> DistributionField:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for name in header if name.startswith("i"))
        if d not in (2, 3) or header != (
            [f"i{k+1}" for k in range(d)] + [f"v{k+1}" for k in range(d)] + ["f"]
        ):
            raise InputError(f"unrecognized field CSV header: {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise InputError("field CSV has no data rows")
    idx = np.array([[int(r[k]) for k in range(d)] for r in rows])
    coords = np.array([[float(r[d + k]) for k in range(d)] for r in rows])
    vals = np.array([float(r[2 * d]) for r in rows])
    n = int(idx.max()) + 1
    if len(rows) != n**d:
        raise InputError("field CSV does not cover a full lattice")
    # recover h and v_max from the recorded coordinates of node index 0
    h_est = (coords[:, 0].max() - coords[:, 0].min()) / (n - 1)
    v_max = h_est * n / 2.0
    grid = VelocityGrid(d=d, v_max=v_max, n=n)
    values = np.zeros(grid.shape)
    values[tuple(idx.T)] = vals
    return DistributionField(grid, values)
