"""Discretization substrate: rectilinear grids, masked regions, and field containers.

A :class:`Grid` couples a rectilinear spatial lattice with a time axis that is
symmetric about t = 0 and contains an exact t = 0 sample.  Spatial node sets
are expressed as boolean :class:`RegionMask` arrays; space-time node sets as
plain boolean arrays of shape ``(*spatial, nt)``.

All containers are immutable after construction: value arrays are stored with
the writeable flag cleared, and operations elsewhere in the package are pure
functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import GeometryError

_EYE_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    """Rectilinear grid over [0, L_1] x ... x [0, L_n] x [-T, T].

    ``node_count`` are per-axis node numbers (not cell counts).  The time axis
    has ``2 * half_steps + 1`` samples so that t = 0 is always a sample, as
    required by initial-value extraction.
    """

    dim: int
    extents: tuple[float, ...]
    node_count: tuple[int, ...]
    time_horizon: float
    half_steps: int
    cfl: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GeometryError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(self.extents) != self.dim or len(self.node_count) != self.dim:
            raise GeometryError("extents/node_count length must equal dim")
        if any(L <= 0 for L in self.extents):
            raise GeometryError("extents must be positive")
        if any(n < 2 for n in self.node_count):
            raise GeometryError("need at least 2 nodes per axis")
        if self.time_horizon <= 0 or self.half_steps < 1:
            raise GeometryError("time horizon and step count must be positive")
        # node coordinates must reproduce the extents to within one spacing
        for L, n in zip(self.extents, self.node_count):
            h = L / (n - 1)
            assert abs((n - 1) * h - L) <= h

    @classmethod
    def regular(cls, dim, extents, node_count, time_horizon, time_step) -> "Grid":
        """Build a grid snapping ``time_step`` so the axis hits t = 0 exactly."""
        half = int(round(time_horizon / time_step))
        if half < 1:
            raise GeometryError("time_step larger than time_horizon")
        return cls(dim, tuple(float(e) for e in extents),
                   tuple(int(n) for n in node_count),
                   float(time_horizon), half)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.node_count))

    @property
    def time_step(self) -> float:
        return self.time_horizon / self.half_steps

    @property
    def nt(self) -> int:
        return 2 * self.half_steps + 1

    @property
    def t0_index(self) -> int:
        return self.half_steps

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node_count

    @property
    def shape_spacetime(self) -> tuple[int, ...]:
        return self.node_count + (self.nt,)

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.extents[axis], self.node_count[axis])

    def times(self) -> np.ndarray:
        return np.linspace(-self.time_horizon, self.time_horizon, self.nt)

    def coordinate_arrays(self) -> list[np.ndarray]:
        """Meshgrid ('ij') coordinate arrays, one per spatial axis."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def full_mask(self) -> "RegionMask":
        return RegionMask(self, np.ones(self.shape, dtype=bool), label="M")


_CONNECTIVITY = {1: np.array([1, 1, 1], dtype=int)}


def _structure(dim):
    # 4-neighbour style connectivity in any dimension
    return ndimage.generate_binary_structure(dim, 1)


@dataclass(frozen=True)
class RegionMask:
    """Node-wise boolean subset of a grid with a semantic label."""

    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.shape != self.grid.shape:
            raise GeometryError(
                f"mask shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def node_count(self) -> int:
        return int(self.values.sum())

    def is_empty(self) -> bool:
        return not self.values.any()

    def boundary(self) -> np.ndarray:
        """Nodes of the mask adjacent to its complement or the array edge."""
        v = self.values
        interior = ndimage.binary_erosion(v, structure=_structure(v.ndim),
                                          border_value=0)
        return v & ~interior

    def interior(self) -> np.ndarray:
        return self.values & ~self.boundary()

    def is_connected(self) -> bool:
        if self.is_empty():
            return False
        _, count = ndimage.label(self.values, structure=_structure(self.values.ndim))
        return count == 1

    def contains(self, other: "RegionMask") -> bool:
        return bool((~self.values & other.values).sum() == 0)

    def closure_values(self) -> np.ndarray:
        """Mask dilated by one node; discrete stand-in for the closure."""
        return ndimage.binary_dilation(self.values, structure=_structure(self.values.ndim))

    def strictly_inside(self, outer: "RegionMask") -> bool:
        """True when the one-node closure avoids the outer mask's boundary."""
        return bool((self.closure_values() & outer.boundary()).sum() == 0)

    def complement_within(self, outer: "RegionMask", label="") -> "RegionMask":
        return RegionMask(self.grid, outer.values & ~self.values, label=label)


def rect_mask(grid: Grid, lo: Sequence[float], hi: Sequence[float], label="") -> RegionMask:
    """Nodes with lo_a < x_a < hi_a on every axis (open box)."""
    coords = grid.coordinate_arrays()
    m = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        m &= (coords[a] > lo[a]) & (coords[a] < hi[a])
    return RegionMask(grid, m, label=label)


def interval_mask(grid: Grid, lo: float, hi: float, label="") -> RegionMask:
    return rect_mask(grid, [lo], [hi], label=label)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray
    smoothness: str = "C0"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GeometryError(f"field shape {v.shape} != grid {self.grid.shape}")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def constant(cls, grid, value, smoothness="C2"):
        return cls(grid, np.full(grid.shape, float(value)), smoothness)

    @classmethod
    def from_function(cls, grid, fn, smoothness="C2"):
        return cls(grid, fn(*grid.coordinate_arrays()) * np.ones(grid.shape),
                   smoothness)


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray  # (dim, *spatial)
    smoothness: str = "C0"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.dim,) + self.grid.shape:
            raise GeometryError(
                f"vector field shape {v.shape} != (dim, *grid) for {self.grid.shape}")
        object.__setattr__(self, "values", _freeze(v))


@dataclass(frozen=True)
class MetricField:
    """Inverse metric g^{jk} per node, together with its validated inverse."""

    grid: Grid
    g_upper: np.ndarray  # (dim, dim, *spatial)
    g_lower: np.ndarray = None

    def __post_init__(self):
        n = self.grid.dim
        gu = np.asarray(self.g_upper, dtype=float)
        if gu.shape != (n, n) + self.grid.shape:
            raise GeometryError("metric shape must be (dim, dim, *spatial)")
        # symmetry and positive definiteness node by node
        if not np.allclose(gu, np.swapaxes(gu, 0, 1), atol=1e-13):
            raise GeometryError("metric must be symmetric")
        mats = np.moveaxis(gu.reshape(n, n, -1), -1, 0)
        eig = np.linalg.eigvalsh(mats)
        if eig.min() <= 0:
            raise GeometryError("metric must be positive definite at every node")
        gl = self.g_lower
        if gl is None:
            gl = np.moveaxis(np.linalg.inv(mats), 0, -1).reshape((n, n) + self.grid.shape)
        else:
            gl = np.asarray(gl, dtype=float)
        prod = np.einsum("ij...,jk...->ik...", gu, gl)
        ident = np.zeros_like(prod)
        for i in range(n):
            ident[i, i] = 1.0
        if np.abs(prod - ident).max() > _EYE_TOL:
            raise GeometryError("g_upper @ g_lower deviates from identity beyond 1e-12")
        object.__setattr__(self, "g_upper", _freeze(gu))
        object.__setattr__(self, "g_lower", _freeze(gl))

    @classmethod
    def identity(cls, grid):
        n = grid.dim
        g = np.zeros((n, n) + grid.shape)
        for i in range(n):
            g[i, i] = 1.0
        return cls(grid, g)

    @classmethod
    def diagonal(cls, grid, diag_values):
        n = grid.dim
        g = np.zeros((n, n) + grid.shape)
        for i in range(n):
            g[i, i] = diag_values[i]
        return cls(grid, g)

    def max_eigenvalue(self) -> float:
        n = self.grid.dim
        mats = np.moveaxis(self.g_upper.reshape(n, n, -1), -1, 0)
        return float(np.linalg.eigvalsh(mats).max())


@dataclass(frozen=True)
class SpaceTimeField:
    """m-component field sampled on grid nodes x symmetric time axis."""

    grid: Grid
    values: np.ndarray  # (m, *spatial, nt)
    check_finite: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = self.grid.shape + (self.grid.nt,)
        if v.ndim != len(expected) + 1 or v.shape[1:] != expected:
            raise GeometryError(
                f"space-time field shape {v.shape} != (m, {expected})")
        if self.check_finite and not np.isfinite(v).all():
            raise GeometryError("space-time field contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid, m):
        return cls(grid, np.zeros((m,) + grid.shape + (grid.nt,)))

    def time_slice(self, index: int) -> np.ndarray:
        return self.values[..., index]

    def at_t0(self) -> np.ndarray:
        return self.values[..., self.grid.t0_index]


def spacetime_mask(region: RegionMask, t_lo: float = None, t_hi: float = None) -> np.ndarray:
    """Broadcast a spatial mask across the time axis, optionally windowed."""
    grid = region.grid
    t = grid.times()
    window = np.ones(grid.nt, dtype=bool)
    if t_lo is not None:
        window &= t >= t_lo - 1e-12
    if t_hi is not None:
        window &= t <= t_hi + 1e-12
    return region.values[..., None] & window
