"""Coupled hyperbolic system container and explicit time-domain solver.

The system is m wave equations d_t^2 u_i = v_i^2 Lap_g u_i - L_i(Du, u) + f_i
with time-independent coefficients.  First-order coupling L_i(Du, u) combines
spatial derivatives (l = 1..n), the time derivative (l = 0), and zero-order
terms.  The solver is a second-order leapfrog; coupling is evaluated
explicitly at the known step, with the time derivative taken at the trailing
half step.  Backward time integration reuses the forward march with the time
axis mirrored (coefficients are time-independent; l = 0 coupling flips sign).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CFLError, GeometryError
from .grids import Grid, MetricField, RegionMask, SpaceTimeField
from . import ops


@dataclass
class HyperbolicSystem:
    """Wave speeds, metric, lower-order terms, and first-order coupling.

    coupling_d maps (i, k, l) -> coefficient field for L_{i;kl} D_l u_k with
    l = 0 the time derivative and l = 1..dim the spatial axes; coupling_0 maps
    (i, k) -> coefficient field for L_{i;k} u_k.
    """

    grid: Grid
    m: int
    speeds: np.ndarray
    mask: RegionMask = None
    metric: MetricField = None
    lower_h: np.ndarray = None
    lower_q: np.ndarray = None
    coupling_d: dict = field(default_factory=dict)
    coupling_0: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        v = np.asarray(self.speeds, dtype=float)
        if v.shape == (self.m,):
            v = v[(slice(None),) + (None,) * g.dim] * np.ones((self.m,) + g.shape)
        if v.shape != (self.m,) + g.shape:
            raise GeometryError("speeds must be (m,) constants or (m, *spatial)")
        if v.min() <= 0:
            raise GeometryError("wave speeds must be positive")
        self.speeds = v
        if self.mask is None:
            self.mask = g.full_mask()
        for (i, k, l) in self.coupling_d:
            if not (0 <= i < self.m and 0 <= k < self.m and 0 <= l <= g.dim):
                raise GeometryError(f"bad coupling index {(i, k, l)}")

    @property
    def v_min(self) -> float:
        return float(self.speeds[:, self.mask.values].min())

    @property
    def v_max(self) -> float:
        return float(self.speeds[:, self.mask.values].max())

    @property
    def norm_L(self) -> float:
        """max over i of the largest sup-norm among the coupling coefficients."""
        sup = 0.0
        for coef in self.coupling_d.values():
            sup = max(sup, float(np.abs(coef).max()))
        for coef in self.coupling_0.values():
            sup = max(sup, float(np.abs(coef).max()))
        return sup

    def metric_max_eigenvalue(self) -> float:
        return self.metric.max_eigenvalue() if self.metric is not None else 1.0


def scalar_wave_system(grid: Grid, speed=1.0, mask: RegionMask = None) -> HyperbolicSystem:
    return HyperbolicSystem(grid, 1, np.array([float(speed)]), mask=mask)


def cfl_check(system: HyperbolicSystem, grid: Grid = None, safety: float = 0.9) -> float:
    """Largest recommended time step for the explicit march; recorded on the
    grid together with the hard stability limit (safety 1)."""
    grid = grid or system.grid
    h_min = min(grid.spacing)
    lam = system.metric_max_eigenvalue()
    hard = h_min / (np.sqrt(grid.dim) * system.v_max * np.sqrt(lam))
    bound = safety * hard
    grid.cfl.update({"dt_bound": bound, "hard_limit": hard, "safety": safety})
    return bound


def _lower_order(system: HyperbolicSystem, lap: np.ndarray, values: np.ndarray,
                 mask: np.ndarray) -> np.ndarray:
    """h_j D_j + q contributions inside the Laplace-type operator."""
    g = system.grid
    out = lap
    if system.lower_h is not None:
        for a in range(g.dim):
            coef = system.lower_h[a]
            if np.any(coef != 0.0):
                out = out + coef * ops.diff(values, mask, a, g.spacing[a])
    if system.lower_q is not None:
        out = out + system.lower_q * values
    return out


def _laplacian(system: HyperbolicSystem, comp_values: np.ndarray,
               mask: np.ndarray) -> np.ndarray:
    """Metric Laplace operator on one component (no speed factor)."""
    g = system.grid
    gu = system.metric.g_upper if system.metric is not None else None
    lap = np.zeros_like(comp_values)
    first = {}
    for j in range(g.dim):
        for k in range(g.dim):
            coef = gu[j, k] if gu is not None else (1.0 if j == k else 0.0)
            if np.all(coef == 0.0):
                continue
            if j == k:
                lap += coef * ops.diff(comp_values, mask, j, g.spacing[j], order=2)
            else:
                if k not in first:
                    first[k] = ops.diff(comp_values, mask, k, g.spacing[k])
                lap += coef * ops.diff(first[k], mask, j, g.spacing[j])
    return _lower_order(system, lap, comp_values, mask)


def _coupling(system: HyperbolicSystem, u: np.ndarray, du_t: np.ndarray,
              mask: np.ndarray, time_sign: float = 1.0) -> np.ndarray:
    """L_i(Du, u) evaluated from the state u (m, *spatial) and a time
    derivative estimate du_t; spatial derivatives are formed on demand."""
    g = system.grid
    out = np.zeros_like(u)
    grads = {}
    for (i, k, l), coef in sorted(system.coupling_d.items()):
        if l == 0:
            term = time_sign * du_t[k]
        else:
            key = (k, l - 1)
            if key not in grads:
                grads[key] = ops.diff(u[k], mask, l - 1, g.spacing[l - 1])
            term = grads[key]
        out[i] += coef * term
    for (i, k), coef in sorted(system.coupling_0.items()):
        out[i] += coef * u[k]
    return out


def _as_spacetime_coef(coef, grid):
    """Broadcast a spatial coefficient (scalar or (*spatial,)) over time."""
    arr = np.asarray(coef, dtype=float)
    if arr.ndim == 0:
        return arr
    return arr[..., None]


def apply_operator(system: HyperbolicSystem, f: SpaceTimeField) -> SpaceTimeField:
    """Full discrete residual P_i u_i + L_i(Du, u) of a space-time field."""
    g = system.grid
    if f.m != system.m:
        raise GeometryError("component count mismatch")
    mask = system.mask.values
    mask_st = mask[..., None] & np.ones(g.nt, dtype=bool)
    out = ops.diff(f.values, mask_st, g.dim, g.time_step, order=2)
    gu = system.metric.g_upper if system.metric is not None else None
    for i in range(system.m):
        lap = np.zeros(g.shape_spacetime)
        first = {}
        for j in range(g.dim):
            for k in range(g.dim):
                coef = gu[j, k] if gu is not None else (1.0 if j == k else 0.0)
                if np.all(coef == 0.0):
                    continue
                if j == k:
                    term = ops.diff(f.values[i], mask_st, j, g.spacing[j], order=2)
                else:
                    if k not in first:
                        first[k] = ops.diff(f.values[i], mask_st, k, g.spacing[k])
                    term = ops.diff(first[k], mask_st, j, g.spacing[j])
                lap += _as_spacetime_coef(coef, g) * term
        if system.lower_h is not None:
            for a in range(g.dim):
                coef = system.lower_h[a]
                if np.any(coef != 0.0):
                    lap += _as_spacetime_coef(coef, g) * ops.diff(
                        f.values[i], mask_st, a, g.spacing[a])
        if system.lower_q is not None:
            lap += _as_spacetime_coef(system.lower_q, g) * f.values[i]
        out[i] -= system.speeds[i][..., None] ** 2 * lap
    du_t = ops.diff(f.values, mask_st, g.dim, g.time_step)
    grads = {}
    for (i, k, l), coef in sorted(system.coupling_d.items()):
        if l == 0:
            term = du_t[k]
        else:
            key = (k, l - 1)
            if key not in grads:
                grads[key] = ops.diff(f.values[k], mask_st, l - 1, g.spacing[l - 1])
            term = grads[key]
        out[i] += _as_spacetime_coef(coef, g) * term
    for (i, k), coef in sorted(system.coupling_0.items()):
        out[i] += _as_spacetime_coef(coef, g) * f.values[k]
    out = np.where(mask_st[None], out, 0.0)
    return SpaceTimeField(g, out, check_finite=False)


@dataclass
class _March:
    system: HyperbolicSystem
    bc: str
    update_sel: np.ndarray      # nodes advanced by the scheme
    mask: np.ndarray            # stencil support

    def _free_laplacian(self, comp):
        # homogeneous Neumann by mirror ghost nodes on the rectangle edge
        g = self.system.grid
        padded = np.pad(comp, 1, mode="reflect")
        lap = np.zeros_like(comp)
        for a in range(g.dim):
            sl_lo = [slice(1, -1)] * g.dim
            sl_hi = [slice(1, -1)] * g.dim
            sl_lo[a] = slice(0, -2)
            sl_hi[a] = slice(2, None)
            lap += (padded[tuple(sl_lo)] - 2 * comp + padded[tuple(sl_hi)]) \
                / g.spacing[a] ** 2
        return lap

    def accel(self, u, du_t, source, time_sign):
        sys = self.system
        acc = np.empty_like(u)
        if self.bc == "free":
            if sys.metric is not None or sys.lower_h is not None:
                raise GeometryError(
                    "free boundary implemented for the identity metric only")
            for i in range(sys.m):
                acc[i] = sys.speeds[i] ** 2 * self._free_laplacian(u[i])
                if sys.lower_q is not None:
                    acc[i] += sys.speeds[i] ** 2 * sys.lower_q * u[i]
        else:
            for i in range(sys.m):
                acc[i] = sys.speeds[i] ** 2 * _laplacian(sys, u[i], self.mask)
        acc -= _coupling(sys, u, du_t, self.mask, time_sign)
        if source is not None:
            acc += source
        return acc

    def step(self, u_prev, u_curr, source, dt, time_sign):
        du_t = (u_curr - u_prev) / dt
        acc = self.accel(u_curr, du_t, source, time_sign)
        u_next = np.where(self.update_sel, 2 * u_curr - u_prev + dt ** 2 * acc, 0.0)
        return u_next


def _make_march(system: HyperbolicSystem, bc: str) -> _March:
    mask = system.mask.values
    if bc == "dirichlet0":
        update = mask & ~system.mask.boundary()
    elif bc == "free":
        if not mask.all():
            raise GeometryError("free boundary supported on full-rectangle masks")
        update = mask.copy()
    else:
        raise GeometryError(f"unknown boundary condition {bc!r}")
    return _March(system, bc, update[None, ...], mask)


def solve_forward(system: HyperbolicSystem, source: SpaceTimeField = None,
                  initial=None, bc: str = "dirichlet0",
                  check_cfl: bool = True) -> SpaceTimeField:
    """March the system over [-T, T] from data (u, du/dt) at t = 0.

    The forward half integrates 0 -> T; the backward half integrates the
    mirrored system (l = 0 coupling negated, source time-reversed) from the
    same data.  Dirichlet-zero clamps mask-boundary nodes; 'free' reflects at
    the rectangle edge (homogeneous Neumann).
    """
    g = system.grid
    dt = g.time_step
    if check_cfl:
        cfl_check(system, g)
        hard = g.cfl["hard_limit"]
        if dt > hard * (1 + 1e-9):
            raise CFLError(f"time step {dt:.3e} exceeds the stability limit {hard:.3e}")
        if dt > g.cfl["dt_bound"] * (1 + 1e-9):
            warnings.warn("time step above the recommended safety bound",
                          stacklevel=2)
    if initial is None:
        u0 = np.zeros((system.m,) + g.shape)
        v0 = np.zeros_like(u0)
    else:
        u0 = np.asarray(initial[0], dtype=float) * np.ones((system.m,) + g.shape)
        v0 = np.asarray(initial[1], dtype=float) * np.ones((system.m,) + g.shape)
    march = _make_march(system, bc)
    if bc == "dirichlet0":
        u0 = np.where(march.update_sel, u0, 0.0)
        v0 = np.where(march.update_sel, v0, 0.0)

    out = np.zeros((system.m,) + g.shape_spacetime)
    i0 = g.t0_index
    out[..., i0] = u0

    def src(index):
        if source is None:
            return None
        return source.values[..., index]

    # the mirrored march (direction -1) solves the time-reversed system:
    # l = 0 coupling negated, initial velocity negated, source reversed
    for time_sign, direction in ((+1.0, +1), (-1.0, -1)):
        w0 = time_sign * v0
        acc0 = march.accel(u0, w0, src(i0), time_sign)
        u_curr = np.where(march.update_sel, u0 + dt * w0 + 0.5 * dt ** 2 * acc0, 0.0)
        u_prev = u0
        for s in range(1, g.half_steps + 1):
            idx = i0 + direction * s
            out[..., idx] = u_curr
            if s == g.half_steps:
                break
            u_next = march.step(u_prev, u_curr, src(idx), dt, time_sign)
            if s % 25 == 0 and not np.isfinite(u_next).all():
                raise CFLError(f"solution lost finiteness at step {s}")
            u_prev, u_curr = u_curr, u_next
    if not np.isfinite(out).all():
        raise CFLError("solution lost finiteness")
    return SpaceTimeField(g, out)
