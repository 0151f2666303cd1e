"""Kinematic rupture scenes, fault traces, tractions, and the two-sided
inverse pipeline.

A scene is a 2D box with a horizontal grid-aligned fault segment strictly
inside, two lens-shaped open sets hugging the fault from above and below, and
an observation set away from both the fault and the outer boundary.  The two
one-sided submanifolds are the complements of the closed lenses: continuation
on the complement of the upper lens approaches the fault from below (the '-'
side) and vice versa.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SceneError
from .grids import Grid, RegionMask, SpaceTimeField, rect_mask
from .reduction import ElasticMaterial, PrestressedTensor, build_prestressed_tensor
from . import ops

TANGENT = np.array([1.0, 0.0])
NORMAL = np.array([0.0, 1.0])


@dataclass
class FaultLine:
    """Horizontal fault segment snapped to the lattice."""

    row: int
    col_lo: int
    col_hi: int
    y: float
    x_lo: float
    x_hi: float

    @property
    def interior_cols(self):
        return np.arange(self.col_lo + 1, self.col_hi)

    @property
    def all_cols(self):
        return np.arange(self.col_lo, self.col_hi + 1)

    def arc_coords(self, grid):
        return grid.axis_coords(0)[self.all_cols]


@dataclass
class RuptureScene:
    grid: Grid
    fault: FaultLine
    material: ElasticMaterial
    mask_M: RegionMask
    mask_D1: RegionMask
    mask_D2: RegionMask
    mask_M1: RegionMask
    mask_M2: RegionMask
    mask_U: RegionMask
    mask_V: RegionMask
    tensor: PrestressedTensor = field(default=None, repr=False)

    def __post_init__(self):
        if self.tensor is None:
            self.tensor = build_prestressed_tensor(self.material)

    def side_mask(self, side: str) -> RegionMask:
        # '+' side is above the fault: complement of the lower lens
        return self.mask_M2 if side == "+" else self.mask_M1

    def fault_node_mask(self) -> np.ndarray:
        m = np.zeros(self.grid.shape, dtype=bool)
        m[self.fault.all_cols, self.fault.row] = True
        return m


def _lens_mask(grid, fault: FaultLine, height: float, above: bool) -> np.ndarray:
    X, Y = grid.coordinate_arrays()
    span = fault.x_hi - fault.x_lo
    xi = (2 * X - (fault.x_lo + fault.x_hi)) / span
    bulge = height * np.sqrt(np.maximum(1.0 - xi ** 2, 0.0))
    inside_x = (X > fault.x_lo) & (X < fault.x_hi)
    if above:
        return inside_x & (Y > fault.y) & (Y < fault.y + bulge)
    return inside_x & (Y < fault.y) & (Y > fault.y - bulge)


def build_scene(grid: Grid, fault_y: float, fault_x: tuple, material: ElasticMaterial,
                u_box: tuple, v_box: tuple = None, lens_height: float = None,
                mask_D1: RegionMask = None, mask_D2: RegionMask = None) -> RuptureScene:
    """Assemble and validate a rupture scene; failures name the broken clause.

    The fault is snapped to the nearest grid row and columns.  Lens side sets
    are generated as half-ellipses of the given height unless explicit masks
    are supplied.
    """
    if grid.dim != 2:
        raise SceneError("rupture scenes are two-dimensional")
    x = grid.axis_coords(0)
    y = grid.axis_coords(1)
    row = int(np.argmin(np.abs(y - fault_y)))
    col_lo = int(np.argmin(np.abs(x - fault_x[0])))
    col_hi = int(np.argmin(np.abs(x - fault_x[1])))
    if col_hi - col_lo < 4:
        raise SceneError("fault must span at least four grid cells")
    fault = FaultLine(row=row, col_lo=col_lo, col_hi=col_hi,
                      y=float(y[row]), x_lo=float(x[col_lo]), x_hi=float(x[col_hi]))
    if row < 3 or row > grid.shape[1] - 4 or col_lo < 3 or col_hi > grid.shape[0] - 4:
        raise SceneError("fault closure touches the outer boundary "
                         "(need clearance from every wall)")

    M = grid.full_mask()
    if lens_height is None:
        lens_height = 0.45 * min(fault.y - 0.0, grid.extents[1] - fault.y,
                                 0.5 * (fault.x_hi - fault.x_lo))
    D1 = mask_D1 or RegionMask(grid, _lens_mask(grid, fault, lens_height, True), "D1")
    D2 = mask_D2 or RegionMask(grid, _lens_mask(grid, fault, lens_height, False), "D2")

    if (D1.values & D2.values).any():
        raise SceneError("side sets D1 and D2 are not disjoint")
    for name, D in (("D1", D1), ("D2", D2)):
        if (D.closure_values() & ~M.interior()).any():
            raise SceneError(f"closure of {name} leaves the interior of M")
    fault_nodes = np.zeros(grid.shape, dtype=bool)
    fault_nodes[fault.all_cols, fault.row] = True
    for name, D in (("D1", D1), ("D2", D2)):
        covered = D.closure_values()
        if not covered[fault.interior_cols, fault.row].all():
            raise SceneError(
                f"fault is not contained in the boundary of {name}")
        if (D.values & fault_nodes).any():
            raise SceneError(f"{name} must be open away from the fault line")

    excluded1 = D1.values | fault_nodes
    excluded2 = D2.values | fault_nodes
    M1 = RegionMask(grid, M.values & ~excluded1, "M1")
    M2 = RegionMask(grid, M.values & ~excluded2, "M2")
    for name, Mj in (("M1", M1), ("M2", M2)):
        if not Mj.is_connected():
            raise SceneError(f"side manifold {name} is not connected")
    if not (M1.values | M2.values | fault_nodes).all():
        raise SceneError("side manifolds must cover M")

    U = rect_mask(grid, (u_box[0], u_box[1]), (u_box[2], u_box[3]), label="U")
    V = rect_mask(grid, (v_box[0], v_box[1]), (v_box[2], v_box[3]), label="V") \
        if v_box else RegionMask(grid, U.closure_values(), "V")
    if U.is_empty() or not U.is_connected():
        raise SceneError("observation set U must be nonempty and connected")
    if not RegionMask(grid, U.values).strictly_inside(M):
        raise SceneError("closure of U touches the outer boundary")
    near_fault = RegionMask(grid, fault_nodes).closure_values()
    if (U.closure_values() & near_fault).any():
        raise SceneError("closure of U touches the fault")
    if not (V.values & ~U.values).size or not RegionMask(grid, V.values).contains(U):
        raise SceneError("U must sit inside the observation domain V")
    if not (M1.contains(U) and M2.contains(U)):
        raise SceneError("U must avoid both side sets D1 and D2")

    return RuptureScene(grid=grid, fault=fault, material=material, mask_M=M,
                        mask_D1=D1, mask_D2=D2, mask_M1=M1, mask_M2=M2,
                        mask_U=U, mask_V=V)


# ---------------------------------------------------------------------------
# traces and tractions
# ---------------------------------------------------------------------------

def extract_traces(values: np.ndarray, scene: RuptureScene, side: str) -> np.ndarray:
    """One-sided displacement limit on the fault by second-order extrapolation
    from the two nearest node layers.

    values: (..., nx, ny, nt) with at least the side rows populated; returns
    (..., n_fault_nodes, nt).
    """
    f = scene.fault
    cols = f.all_cols
    sgn = +1 if side == "+" else -1
    r1, r2 = f.row + sgn, f.row + 2 * sgn
    if r2 < 0 or r2 >= scene.grid.shape[1]:
        raise GeometryError("fewer than two node layers on this side of the fault")
    return 2.0 * values[..., cols, r1, :] - values[..., cols, r2, :]


def normal_derivative_traces(values: np.ndarray, scene: RuptureScene,
                             side: str) -> np.ndarray:
    """One-sided normal derivative on the fault from three node layers
    (second order; exact on quadratics)."""
    f = scene.fault
    cols = f.all_cols
    sgn = +1 if side == "+" else -1
    r = [f.row + sgn * k for k in (1, 2, 3)]
    if min(r) < 0 or max(r) >= scene.grid.shape[1]:
        raise GeometryError("fewer than three node layers on this side of the fault")
    hy = scene.grid.spacing[1]
    d = (-5.0 * values[..., cols, r[0], :] + 8.0 * values[..., cols, r[1], :]
         - 3.0 * values[..., cols, r[2], :]) / (2.0 * hy)
    return sgn * d


def tangential_derivative(trace: np.ndarray, scene: RuptureScene) -> np.ndarray:
    """Along-fault derivative of a trace array (n_fault, ..., nt)."""
    hx = scene.grid.spacing[0]
    mask = np.ones(trace.shape[0], dtype=bool)
    moved = np.moveaxis(trace, 0, -1)
    out = ops.diff(moved, mask, 0, hx)
    return np.moveaxis(out, -1, 0)


@dataclass
class SideTractions:
    tau1: np.ndarray      # (n_fault, 2, nt)
    tau2: np.ndarray      # (n_fault, 2, nt)
    prestress: np.ndarray  # n . T0 on the fault, (n_fault, 2)


def compute_tractions(scene: RuptureScene, u_trace: np.ndarray,
                      dn_trace: np.ndarray, side: str) -> SideTractions:
    """Traction pieces from one-sided traces.

    tau1 = (L : grad u) . n with the one-sided gradient (tangential derivative
    along the fault, normal derivative from the side layers).  tau2 is the
    surface divergence term - div_S(u (n . T0)); with a straight fault and
    hydrostatic prestress its tangential transport coefficient n . T0 . t
    vanishes, so it reduces to the curvature term, zero here.
    """
    f = scene.fault
    cols = f.all_cols
    lam = scene.material.lam[cols, f.row]
    mu = scene.material.mu[cols, f.row]
    p0 = scene.material.p0[cols, f.row]

    du_dx = tangential_derivative(u_trace, scene)       # (nF, 2, nt)
    grad = np.stack([du_dx, dn_trace], axis=2)          # grad[:, k, l] = d_l u_k
    # (L : grad u)_ij = lam d_ij tr + mu (d_j u_i + d_i u_j)
    #                   - p0 d_ij tr + p0 d_i u_j
    tr = grad[:, 0, 0, :] + grad[:, 1, 1, :]
    stress = np.empty((len(cols), 2, 2, tr.shape[-1]))
    for i in range(2):
        for j in range(2):
            sym = grad[:, i, j, :] + grad[:, j, i, :]
            stress[:, i, j, :] = mu[:, None] * sym
            if i == j:
                stress[:, i, j, :] += (lam - p0)[:, None] * tr
            stress[:, i, j, :] += p0[:, None] * grad[:, j, i, :]
    tau1 = stress[:, :, 1, :]  # contract second index with n = (0, 1)

    q_t = 0.0  # (n . T0) . tangent vanishes for hydrostatic prestress
    tau2 = np.zeros_like(tau1)
    prestress = np.zeros((len(cols), 2))
    prestress[:, 1] = -p0  # n . T0 = -p0 n
    return SideTractions(tau1=tau1, tau2=tau2, prestress=prestress)


@dataclass
class FaultTraces:
    """Two-sided fault data on the fault arc x output times."""

    arc: np.ndarray
    times: np.ndarray
    u_plus: np.ndarray       # (nF, 2, nt)
    u_minus: np.ndarray
    slip_rate: np.ndarray    # (nF, nt), tangential
    tau1_plus: np.ndarray
    tau1_minus: np.ndarray
    tau2_plus: np.ndarray
    tau2_minus: np.ndarray
    tau_frc: np.ndarray      # (nF, nt)
    sigma_n: np.ndarray      # (nF, nt)
    normal_jump_max: float
    balance_residual: float
    friction_reliable: bool

    @property
    def jump(self):
        return self.u_plus - self.u_minus


def compute_friction(scene: RuptureScene, u_plus, u_minus, dn_plus, dn_minus,
                     times, tol_balance: float = None) -> FaultTraces:
    """Assemble slip rate, tractions, friction force, and normal stress.

    The friction force is the tangential part of n.T0 + tau1 + tau2 averaged
    across the two sides after checking the traction balance; the slip rate is
    the tangential centered time derivative of the displacement jump.
    """
    tp = compute_tractions(scene, u_plus, dn_plus, "+")
    tm = compute_tractions(scene, u_minus, dn_minus, "-")
    jump = u_plus - u_minus
    dt = times[1] - times[0]
    tmask = np.ones(len(times), dtype=bool)
    slip_rate = ops.diff(jump[:, 0, :], tmask, 0, dt)  # tangential component

    total_p = tp.tau1 + tp.tau2
    total_m = tm.tau1 + tm.tau2
    balance = total_p - total_m
    scale = max(np.abs(total_p).max(), np.abs(total_m).max(), 1e-30)
    balance_residual = float(np.abs(balance).max())
    reliable = balance_residual <= (tol_balance if tol_balance is not None
                                    else 0.25 * scale)
    if not reliable:
        warnings.warn("traction balance violated; friction force flagged "
                      "unreliable", stacklevel=2)
    mean_tau = 0.5 * (total_p + total_m)
    mean_tau = mean_tau + tp.prestress[:, :, None]
    tau_frc = mean_tau[:, 0, :]    # tangential part ((n.T0)_T = 0 here)
    sigma_n = mean_tau[:, 1, :]
    return FaultTraces(
        arc=scene.fault.arc_coords(scene.grid), times=np.asarray(times),
        u_plus=u_plus, u_minus=u_minus, slip_rate=slip_rate,
        tau1_plus=tp.tau1, tau1_minus=tm.tau1,
        tau2_plus=tp.tau2, tau2_minus=tm.tau2,
        tau_frc=tau_frc, sigma_n=sigma_n,
        normal_jump_max=float(np.abs(jump[:, 1, :]).max()),
        balance_residual=balance_residual,
        friction_reliable=bool(reliable))


# ---------------------------------------------------------------------------
# trace norms
# ---------------------------------------------------------------------------

def trace_norm(values: np.ndarray, arc: np.ndarray, times: np.ndarray,
               kind: str = "L2", s: float = None) -> float:
    """Sobolev-type norm on the fault arc x time rectangle.

    values: (nF, nt) or (nF, c, nt); component squares add.
    """
    if values.ndim == 2:
        values = values[:, None, :]
    h = arc[1] - arc[0]
    dt = times[1] - times[0]
    w1 = np.full(len(arc), h)
    w1[[0, -1]] *= 0.5
    w2 = np.full(len(times), dt)
    w2[[0, -1]] *= 0.5
    w = w1[:, None] * w2[None, :]
    l2sq = float(np.sum(values ** 2 * w[:, None, :]))
    if kind == "L2":
        return np.sqrt(l2sq)
    mask_a = np.ones(len(arc), dtype=bool)
    mask_t = np.ones(len(times), dtype=bool)
    da = ops.diff(np.moveaxis(values, 0, -1), mask_a, 0, h)
    da = np.moveaxis(da, -1, 0)
    dtv = ops.diff(values, mask_t, 0, dt)
    dsq = float(np.sum(da ** 2 * w[:, None, :])) + float(np.sum(dtv ** 2 * w[:, None, :]))
    if kind == "H1":
        return np.sqrt(l2sq + dsq)
    if kind == "Hs":
        if s is None or not (0 < s < 1):
            raise ValueError("Hs trace norm needs s in (0, 1)")
        l2 = np.sqrt(l2sq)
        h1 = np.sqrt(l2sq + dsq)
        return float(l2 ** (1 - s) * h1 ** s)
    raise ValueError(f"unknown trace norm kind {kind!r}")


@dataclass
class DisjointUnionNorm:
    side_plus: float
    side_minus: float

    @property
    def combined(self) -> float:
        return float(np.sqrt(self.side_plus ** 2 + self.side_minus ** 2))


def higher_order_trace_error(err_l2: float, bound: float, s: float, r: float) -> float:
    """Interpolation surrogate for an H^r trace error given an a-priori H^s
    bound: err_L2^(1 - r/s') * bound^(r/s') with s' = s - 1/2."""
    sp = s - 0.5
    if not (0 < r < sp):
        raise ValueError("need 0 < r < s - 1/2")
    return float(err_l2 ** (1.0 - r / sp) * bound ** (r / sp))


def mollify_along_fault(values: np.ndarray, width_nodes: int = 2) -> np.ndarray:
    """Triangular smoothing along the arc axis (width in fault spacings);
    used for reporting friction-force errors in a softened norm."""
    if width_nodes < 1:
        return values
    kernel = np.bartlett(2 * width_nodes + 1)
    kernel /= kernel.sum()
    out = np.apply_along_axis(
        lambda v: np.convolve(np.pad(v, width_nodes, mode="edge"), kernel,
                              mode="valid"), 0, values)
    return out


# ---------------------------------------------------------------------------
# two-sided inverse pipeline
# ---------------------------------------------------------------------------

def _interp_to_nodes(field_values, fine_grid, points):
    """Bilinear space interpolation of (c, nx, ny, nt) onto rows of points."""
    from scipy.interpolate import RegularGridInterpolator
    c, nx, ny, nt = field_values.shape
    stacked = np.moveaxis(field_values, 0, -1).reshape(nx, ny, c * nt)
    interp = RegularGridInterpolator(
        (fine_grid.axis_coords(0), fine_grid.axis_coords(1)), stacked,
        method="linear", bounds_error=True)
    out = interp(points)  # (npts, c * nt)
    return out.reshape(len(points), c, nt)


def observed_data_field(solution, inv_grid: Grid, mask_U: RegionMask) -> SpaceTimeField:
    """Restrict a forward rupture solution to the observation nodes of the
    inversion grid, assembling the four-component state (u, div u, curl u).

    The forward output must be sampled at the inversion time step.  The field
    is zero before t = 0 (causal source).
    """
    fine = solution.scene.grid
    dt_out = solution.times[1] - solution.times[0]
    if abs(dt_out - inv_grid.time_step) > 1e-12:
        raise GeometryError("forward output cadence must match the inversion "
                            "time step")
    if len(solution.times) - 1 != inv_grid.half_steps:
        raise GeometryError("forward output must span the inversion horizon")
    pts_idx = np.argwhere(mask_U.values)
    pts = np.column_stack([inv_grid.axis_coords(0)[pts_idx[:, 0]],
                           inv_grid.axis_coords(1)[pts_idx[:, 1]]])
    vals = _interp_to_nodes(solution.field, fine, pts)  # (npts, 2, n_out)
    out = np.zeros((4,) + inv_grid.shape + (inv_grid.nt,))
    i0 = inv_grid.t0_index
    for k, (ix, iy) in enumerate(pts_idx):
        out[0, ix, iy, i0:] = vals[k, 0]
        out[1, ix, iy, i0:] = vals[k, 1]
    # div and curl from the observed displacement, differenced on U
    u_st = mask_U.values[..., None] & np.ones(inv_grid.nt, dtype=bool)
    hx, hy = inv_grid.spacing
    out[2] = ops.diff(out[0], u_st, 0, hx) + ops.diff(out[1], u_st, 1, hy)
    out[3] = ops.diff(out[1], u_st, 0, hx) - ops.diff(out[0], u_st, 1, hy)
    out *= u_st[None]
    return SpaceTimeField(inv_grid, out, check_finite=False)


def _half_time_indices(grid: Grid):
    t = grid.times()
    T = grid.time_horizon
    return np.flatnonzero((t >= -T / 2 - 1e-12) & (t <= T / 2 + 1e-12))


def run_inverse_rupture(scene_fine: RuptureScene, solution, eps0: float = 0.0,
                        inv_nodes: int = 61, cg_maxiter: int = 300,
                        cg_tol: float = 1e-8, gamma_energy: float = None,
                        residual_rim: int = 3, seed: int = 0,
                        truth_traces: dict = None, kappa: float = 0.25) -> tuple:
    """Two-sided continuation from interior data to the fault.

    Pipeline: restrict the observed displacement to the observation set of a
    coarser inversion grid; reduce elasticity to the four-component system on
    each one-sided submanifold; continue each side from the data by the
    penalized least-squares solver (the side boundary along the fault is
    unknown, so the field method is used); extract one-sided traces on
    [-T/2, T/2]; form slip rate, tractions, friction force and normal stress.

    Returns (FaultTraces, report).  When truth traces are supplied the report
    carries relative errors and the surrogate trace-norm table.
    """
    from .continuation import (DEFAULT_GAMMA_NOISELESS, ContinuationProblem,
                               continue_solution, make_noise)
    from .reduction import reduce_elastic_to_hyperbolic

    fine_grid = scene_fine.grid
    T = fine_grid.time_horizon
    dt_out = solution.times[1] - solution.times[0]
    half_inv = int(round(T / dt_out))
    inv_grid = Grid(2, fine_grid.extents, (inv_nodes, inv_nodes), T, half_inv)
    material = ElasticMaterial(
        inv_grid,
        _resample(scene_fine.material.rho, fine_grid, inv_grid),
        _resample(scene_fine.material.lam, fine_grid, inv_grid),
        _resample(scene_fine.material.mu, fine_grid, inv_grid),
        _resample(scene_fine.material.p0, fine_grid, inv_grid))
    scene = build_scene(
        inv_grid, scene_fine.fault.y,
        (scene_fine.fault.x_lo, scene_fine.fault.x_hi), material,
        u_box=_mask_box(scene_fine.mask_U, fine_grid))

    data = observed_data_field(solution, inv_grid, scene.mask_U)
    if eps0 > 0:
        rng = np.random.default_rng(seed)
        data = make_noise(data, scene.mask_U, eps0, rng)

    report = {"eps0": eps0, "inv_nodes": inv_nodes, "sides": {}}
    side_fields = {}
    for side, mask in (("-", scene.mask_M1), ("+", scene.mask_M2)):
        reduced = reduce_elastic_to_hyperbolic(material, mask)
        prob = ContinuationProblem(
            system=reduced.system, mask_M=mask, mask_U=scene.mask_U,
            data=data, eps0=eps0, method="field", residual_rim=residual_rim,
            gamma_energy=(gamma_energy if gamma_energy is not None
                          else (None if eps0 > 0 else DEFAULT_GAMMA_NOISELESS)),
            cg_maxiter=cg_maxiter, cg_tol=cg_tol)
        res = continue_solution(prob)
        side_fields[side] = res.reconstruction.values
        report["sides"][side] = {
            "iterations": res.iterations, "converged": bool(res.converged),
            "data_misfit": res.data_misfit, "gamma_energy": res.gamma_energy,
            "residual_norm": res.residual_norm}

    idx = _half_time_indices(inv_grid)
    times = inv_grid.times()[idx]
    u_plus = np.moveaxis(
        extract_traces(side_fields["+"][:2][..., idx], scene, "+"), 0, 1)
    u_minus = np.moveaxis(
        extract_traces(side_fields["-"][:2][..., idx], scene, "-"), 0, 1)
    dn_plus = np.moveaxis(
        normal_derivative_traces(side_fields["+"][:2][..., idx], scene, "+"), 0, 1)
    dn_minus = np.moveaxis(
        normal_derivative_traces(side_fields["-"][:2][..., idx], scene, "-"), 0, 1)
    traces = compute_friction(scene, u_plus, u_minus, dn_plus, dn_minus, times)
    report["normal_jump_max"] = traces.normal_jump_max
    report["balance_residual"] = traces.balance_residual

    if truth_traces is not None:
        report["errors"] = trace_error_report(scene, traces, truth_traces,
                                              kappa=kappa)
    return traces, report


def _resample(values, fine_grid, inv_grid):
    from scipy.interpolate import RegularGridInterpolator
    interp = RegularGridInterpolator(
        (fine_grid.axis_coords(0), fine_grid.axis_coords(1)), values)
    X, Y = inv_grid.coordinate_arrays()
    return interp(np.column_stack([X.ravel(), Y.ravel()])).reshape(inv_grid.shape)


def _mask_box(mask: RegionMask, grid: Grid):
    idx = np.argwhere(mask.values)
    x = grid.axis_coords(0)
    y = grid.axis_coords(1)
    h = grid.spacing
    return (x[idx[:, 0].min()] - 0.5 * h[0], y[idx[:, 1].min()] - 0.5 * h[1],
            x[idx[:, 0].max()] + 0.5 * h[0], y[idx[:, 1].max()] + 0.5 * h[1])


def closed_loop_truth(solution, source, scene_inv: RuptureScene, times) -> dict:
    """Closed-loop reference traces at the inversion fault nodes and times.

    Displacement traces come from the forward split nodes; the slip rate from
    the prescribed source; tractions, friction force and normal stress from
    the fine-grid one-sided recomputation.
    """
    fine_scene = solution.scene
    fine = fine_scene.grid
    arc_f = fine_scene.fault.arc_coords(fine)
    arc_i = scene_inv.fault.arc_coords(scene_inv.grid)
    dt_out = solution.times[1] - solution.times[0]
    times = np.asarray(times)

    def time_index(t):
        return int(round(t / dt_out)) if t > -1e-12 else None

    def on_grid(tr):
        tr3 = tr if tr.ndim == 3 else tr[:, None, :]
        out = np.zeros((len(arc_i), tr3.shape[1], len(times)))
        for k, t in enumerate(times):
            j = time_index(t)
            if j is None:
                continue
            for c in range(tr3.shape[1]):
                out[:, c, k] = np.interp(arc_i, arc_f, tr3[:, c, j])
        return out if tr.ndim == 3 else out[:, 0, :]

    fine_up = np.moveaxis(extract_traces(solution.field, fine_scene, "+"), 0, 1)
    fine_um = np.moveaxis(extract_traces(solution.field, fine_scene, "-"), 0, 1)
    fine_dp = np.moveaxis(
        normal_derivative_traces(solution.field, fine_scene, "+"), 0, 1)
    fine_dm = np.moveaxis(
        normal_derivative_traces(solution.field, fine_scene, "-"), 0, 1)
    fine_traces = compute_friction(fine_scene, fine_up, fine_um, fine_dp,
                                   fine_dm, solution.times)
    slip_rate = source.slip_rate(arc_i, fine_scene.fault.x_lo,
                                 fine_scene.fault.x_hi, times)
    sigma_n = on_grid(fine_traces.sigma_n)
    # before the rupture the fault carries the static prestress, not zero
    rest = np.interp(arc_i, arc_f, fine_traces.sigma_n[:, 0])
    sigma_n[:, times < -1e-12] = rest[:, None]
    return {
        "u_plus": on_grid(solution.u_plus),
        "u_minus": on_grid(solution.u_minus),
        "slip_rate": slip_rate,
        "tau_frc": on_grid(fine_traces.tau_frc),
        "sigma_n": sigma_n,
        "times": times, "arc": arc_i,
        "fine_normal_jump": fine_traces.normal_jump_max,
        "fine_balance_residual": fine_traces.balance_residual,
    }


def trace_error_report(scene: RuptureScene, traces: FaultTraces, truth: dict,
                       kappa: float = 0.25) -> dict:
    """Relative trace errors in the disjoint-union L2 norm plus the surrogate
    H^kappa table; the friction column is reported after fault-arc
    mollification (two spacings wide)."""
    arc, times = traces.arc, traces.times
    out = {}

    def rel(err_vals, ref_vals, kind="L2", s=None):
        num = trace_norm(err_vals, arc, times, kind, s)
        den = trace_norm(ref_vals, arc, times, kind, s)
        return num / den if den > 0 else np.inf

    du = DisjointUnionNorm(
        trace_norm(traces.u_plus - truth["u_plus"], arc, times),
        trace_norm(traces.u_minus - truth["u_minus"], arc, times))
    ref = DisjointUnionNorm(trace_norm(truth["u_plus"], arc, times),
                            trace_norm(truth["u_minus"], arc, times))
    out["u_rel_L2"] = du.combined / ref.combined
    out["u_rel_Hk"] = DisjointUnionNorm(
        trace_norm(traces.u_plus - truth["u_plus"], arc, times, "Hs", kappa),
        trace_norm(traces.u_minus - truth["u_minus"], arc, times, "Hs", kappa),
    ).combined / DisjointUnionNorm(
        trace_norm(truth["u_plus"], arc, times, "Hs", kappa),
        trace_norm(truth["u_minus"], arc, times, "Hs", kappa)).combined

    if "slip_rate" in truth:
        out["slip_rate_rel_L2"] = rel(traces.slip_rate - truth["slip_rate"],
                                      truth["slip_rate"])
    if "tau_frc" in truth:
        moll_err = mollify_along_fault(traces.tau_frc - truth["tau_frc"])
        out["tau_frc_rel_L2"] = (trace_norm(moll_err, arc, times)
                                 / trace_norm(mollify_along_fault(truth["tau_frc"]),
                                              arc, times))
    if "sigma_n" in truth:
        out["sigma_n_rel_L2"] = rel(traces.sigma_n - truth["sigma_n"],
                                    truth["sigma_n"])
    return out
