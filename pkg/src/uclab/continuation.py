"""Regularized least-squares continuation of hyperbolic fields from interior
data, with error evaluation on influence domains and noise-stability sweeps.

The reconstruction minimizes

    J(u) = || P u + L(Du, u) - f ||^2_{L2(M x [-T,T])}
         + gamma_data  * || u - d ||^2_{H1(U x [-T,T])}
         + gamma_energy * || u ||^2_{H1(M x [-T,T])}

over all grid fields, by conjugate gradients on the normal equations.  The
residual operator is assembled once as shared sparse matrices (time stencil,
spatial stencil, first derivatives) applied to all components as a dense
block, so a sweep re-solves cheaply for different data or weights.  The CG
loop tracks the objective exactly through its recurrence and asserts descent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .grids import Grid, RegionMask, SpaceTimeField, spacetime_mask
from .forward import HyperbolicSystem
from . import geometry as geo
from . import ops

GAMMA_LADDER = tuple(10.0 ** (-k) for k in range(4, 11))
DISCREPANCY_FACTOR = 1.2
DEFAULT_GAMMA_NOISELESS = 1e-8


def _tile_time(spatial_values, grid) -> np.ndarray:
    """Flatten a spatial coefficient field tiled across the time axis."""
    arr = np.asarray(spatial_values, dtype=float)
    if arr.ndim == 0:
        return np.full(int(np.prod(grid.shape_spacetime)), float(arr))
    return np.repeat(arr.ravel(), grid.nt)


class ContinuationOperator:
    """Sparse machinery for one (system, M, U) triple; reusable across solves."""

    def __init__(self, system: HyperbolicSystem, mask_M: RegionMask,
                 mask_U: RegionMask, residual_rim: int = 1):
        g = system.grid
        self.system = system
        self.grid = g
        self.mask_M = mask_M
        self.mask_U = mask_U
        self.m = system.m
        self.N = int(np.prod(g.shape_spacetime))
        self.residual_rim = residual_rim
        mask_st = mask_M.values[..., None] & np.ones(g.nt, dtype=bool)
        u_st = mask_U.values[..., None] & np.ones(g.nt, dtype=bool)
        spac = g.spacing + (g.time_step,)

        self.T2 = ops.diff_matrix(mask_st, g.dim, g.time_step, order=2)
        self.D1 = [ops.diff_matrix(mask_st, a, spac[a], order=1)
                   for a in range(g.dim + 1)]
        S = sp.csr_matrix((self.N, self.N))
        gu = system.metric.g_upper if system.metric is not None else None
        for j in range(g.dim):
            for k in range(g.dim):
                coef = gu[j, k] if gu is not None else (1.0 if j == k else 0.0)
                if np.all(np.asarray(coef) == 0.0):
                    continue
                if j == k:
                    term = ops.diff_matrix(mask_st, j, g.spacing[j], order=2)
                else:
                    term = self.D1[j] @ self.D1[k]
                if gu is not None:
                    term = sp.diags(_tile_time(coef, g)) @ term
                S = S + term
        if system.lower_h is not None:
            for a in range(g.dim):
                if np.any(system.lower_h[a] != 0.0):
                    S = S + sp.diags(_tile_time(system.lower_h[a], g)) @ self.D1[a]
        if system.lower_q is not None:
            S = S + sp.diags(_tile_time(system.lower_q, g))
        self.S = S.tocsr()
        self.T2t = self.T2.T.tocsr()
        self.St = self.S.T.tocsr()
        self.D1t = [d.T.tocsr() for d in self.D1]

        # speeds squared per column of the dense block
        self.V2 = np.column_stack([_tile_time(system.speeds[i] ** 2, g)
                                   for i in range(self.m)])
        # coupling tables: (i, k, axis_index or 'time') -> flat coefficient
        self.coup_d = [((i, k, l), _tile_time(c, g))
                       for (i, k, l), c in sorted(system.coupling_d.items())]
        self.coup_0 = [((i, k), _tile_time(c, g))
                       for (i, k), c in sorted(system.coupling_0.items())]

        # Residual quadrature is restricted to rows with fully centered
        # stencils (an equally consistent quadrature of the same integral):
        # on one-sided rim rows the discrete operator cannot be annihilated
        # even by the exact discrete evolution, which would pollute the
        # minimizer at a fixed O(h^2) floor.  A wider rim (residual_rim > 1)
        # additionally keeps the quadrature away from boundary layers that
        # the grid does not resolve, e.g. the slip layer hugging a fault.
        from scipy import ndimage
        centered = ndimage.binary_erosion(
            mask_st, structure=ndimage.generate_binary_structure(g.dim + 1, 1),
            iterations=max(1, residual_rim), border_value=0)
        self.w_res = np.where(centered,
                              ops.trapezoid_weights(mask_st, spac), 0.0).ravel()
        self.w_U = ops.trapezoid_weights(u_st, spac).ravel()
        self.w_M = ops.trapezoid_weights(mask_st, spac).ravel()
        self.DU = [ops.diff_matrix(u_st, a, spac[a], order=1)
                   for a in range(g.dim + 1)]
        self.DUt = [d.T.tocsr() for d in self.DU]

    # -- residual operator ---------------------------------------------------

    def _axis_matrix(self, l):
        # coupling index l: 0 = time, 1..dim = spatial axes
        return self.D1[self.grid.dim] if l == 0 else self.D1[l - 1]

    def apply_A(self, X: np.ndarray) -> np.ndarray:
        out = self.T2 @ X - self.V2 * (self.S @ X)
        cache = {}
        for (i, k, l), c in self.coup_d:
            key = (k, l)
            if key not in cache:
                cache[key] = self._axis_matrix(l) @ X[:, k]
            out[:, i] += c * cache[key]
        for (i, k), c in self.coup_0:
            out[:, i] += c * X[:, k]
        return out

    def apply_At(self, Y: np.ndarray) -> np.ndarray:
        out = self.T2t @ Y - self.St @ (self.V2 * Y)
        for (i, k, l), c in self.coup_d:
            mat = self.D1t[self.grid.dim] if l == 0 else self.D1t[l - 1]
            out[:, k] += mat @ (c * Y[:, i])
        for (i, k), c in self.coup_0:
            out[:, k] += c * Y[:, i]
        return out

    def h1_form(self, X: np.ndarray, which: str) -> np.ndarray:
        """Normal-equation contribution of an H1-norm term on U or M."""
        if which == "U":
            w, D, Dt = self.w_U, self.DU, self.DUt
        else:
            w, D, Dt = self.w_M, self.D1, self.D1t
        out = w[:, None] * X
        for d, dt in zip(D, Dt):
            out += dt @ (w[:, None] * (d @ X))
        return out

    def h1_norm(self, X: np.ndarray, which: str) -> float:
        return float(np.sqrt(np.sum(X * self.h1_form(X, which))))

    def residual_norm(self, X: np.ndarray, F: np.ndarray = None) -> float:
        R = self.apply_A(X)
        if F is not None:
            R = R - F
        return float(np.sqrt(np.sum(self.w_res[:, None] * R ** 2)))

    def normal_matvec(self, X, gamma_d, gamma_e):
        out = self.apply_At(self.w_res[:, None] * self.apply_A(X))
        if gamma_d:
            out += gamma_d * self.h1_form(X, "U")
        if gamma_e:
            out += gamma_e * self.h1_form(X, "M")
        return out

    def jacobi_diagonal(self, gamma_d, gamma_e) -> np.ndarray:
        """diag of the normal operator, for preconditioning."""
        diag = np.zeros((self.N, self.m))
        T2sq = self.T2.copy()
        T2sq.data **= 2
        Ssq = self.S.copy()
        Ssq.data **= 2
        base_t = T2sq.T @ self.w_res
        base_s = Ssq.T @ self.w_res
        for i in range(self.m):
            diag[:, i] = base_t + self.V2[:, i] ** 2 * base_s
        for (i, k, l), c in self.coup_d:
            mat = self.D1[self.grid.dim] if l == 0 else self.D1[l - 1]
            msq = mat.copy()
            msq.data **= 2
            diag[:, k] += msq.T @ (self.w_res * c ** 2)
        for (i, k), c in self.coup_0:
            diag[:, k] += self.w_res * c ** 2
        for gamma, which in ((gamma_d, "U"), (gamma_e, "M")):
            if not gamma:
                continue
            w = self.w_U if which == "U" else self.w_M
            D = self.DU if which == "U" else self.D1
            extra = w.copy()
            for d in D:
                dsq = d.copy()
                dsq.data **= 2
                extra = extra + dsq.T @ w
            diag += gamma * extra[:, None]
        return diag

    def make_preconditioner(self, gamma_d, gamma_e):
        """Circulant approximate inverse of the normal operator.

        Uses the discrete stencil symbols of the constant-coefficient wave
        operator (mean speed per component) plus the H1 symbol with the data
        term smeared by the volume fraction of U.  Spectrally positive, so
        the preconditioned CG keeps its descent property; boundary and
        variable-coefficient effects only degrade clustering, not symmetry.
        """
        g = self.grid
        shape = g.shape_spacetime
        dt = g.time_step
        s_t = (2 - 2 * np.cos(2 * np.pi * np.fft.fftfreq(shape[-1], dt) * dt)) / dt ** 2
        s_x = []
        for a in range(g.dim):
            h = g.spacing[a]
            s_x.append((2 - 2 * np.cos(2 * np.pi * np.fft.fftfreq(shape[a], h) * h)) / h ** 2)
        grids = np.meshgrid(*s_x, s_t, indexing="ij")
        s_space = sum(grids[:-1]) if g.dim > 0 else 0.0
        s_time = grids[-1]
        h1_sym = 1.0 + s_space + s_time
        wbar = float(np.prod(g.spacing)) * dt
        qU = self.mask_U.node_count / max(1, self.mask_M.node_count)
        inv_syms = []
        sel = self.mask_M.values
        for i in range(self.m):
            v2 = float(np.mean(self.system.speeds[i][sel] ** 2))
            p_sym = s_time - v2 * s_space
            inv_syms.append(1.0 / (wbar * p_sym ** 2
                                   + (gamma_d * qU + gamma_e) * wbar * h1_sym))

        def precond(V):
            out = np.empty_like(V)
            for i in range(self.m):
                arr = V[:, i].reshape(shape)
                out[:, i] = np.real(
                    np.fft.ifftn(np.fft.fftn(arr) * inv_syms[i])).ravel()
            return out

        return precond

    def flatten(self, f: SpaceTimeField) -> np.ndarray:
        return np.column_stack([f.values[i].ravel() for i in range(f.values.shape[0])])

    def unflatten(self, X: np.ndarray) -> SpaceTimeField:
        vals = np.stack([X[:, i].reshape(self.grid.shape_spacetime)
                         for i in range(self.m)])
        return SpaceTimeField(self.grid, vals, check_finite=False)


class EvolutionOperator:
    """Linear map from initial data (u, du/dt at t = 0) to the space-time
    field produced by the explicit march with homogeneous Dirichlet walls,
    together with its exact adjoint.

    Restricting the least-squares search to this solution manifold is the
    hard-constraint limit of the Tikhonov objective: the interior residual
    rows vanish identically and only the data and energy terms remain.  It is
    the right formulation when the scene prescribes the exterior boundary
    condition (the quantitative domains stay away from the walls, so the
    choice is insulated; see the boundary-perturbation test).
    """

    def __init__(self, system: HyperbolicSystem, mask_M: RegionMask):
        g = system.grid
        if any(l == 0 for (_, _, l) in system.coupling_d):
            raise GeometryError(
                "evolution method does not support time-derivative coupling")
        self.system = system
        self.grid = g
        self.mask_M = mask_M
        self.m = system.m
        self.NS = int(np.prod(g.shape))
        mask = mask_M.values
        interior = mask & ~mask_M.boundary()
        self.interior_flat = np.tile(interior.ravel(), self.m)
        self.mask_flat = np.tile(mask.ravel(), self.m)

        # spatial operator K: rows on interior nodes; speeds^2 Lap + coupling
        blocks = []
        gu = system.metric.g_upper if system.metric is not None else None
        lap_terms = []
        for j in range(g.dim):
            for k in range(g.dim):
                coef = gu[j, k] if gu is not None else (1.0 if j == k else 0.0)
                if np.all(np.asarray(coef) == 0.0):
                    continue
                if j == k:
                    t = ops.diff_matrix(mask, j, g.spacing[j], order=2)
                else:
                    t = ops.diff_matrix(mask, j, g.spacing[j]) \
                        @ ops.diff_matrix(mask, k, g.spacing[k])
                if gu is not None:
                    t = sp.diags(np.asarray(coef, dtype=float).ravel()) @ t
                lap_terms.append(t)
        lap = sum(lap_terms[1:], lap_terms[0])
        if system.lower_h is not None:
            for a in range(g.dim):
                if np.any(system.lower_h[a] != 0.0):
                    lap = lap + sp.diags(system.lower_h[a].ravel()) \
                        @ ops.diff_matrix(mask, a, g.spacing[a])
        if system.lower_q is not None:
            lap = lap + sp.diags(system.lower_q.ravel())
        d1 = {a: ops.diff_matrix(mask, a, g.spacing[a]) for a in range(g.dim)}
        rows, cols, blocks = [], [], {}
        for i in range(self.m):
            blocks[(i, i)] = sp.diags(system.speeds[i].ravel() ** 2) @ lap
        for (i, k, l), coef in sorted(system.coupling_d.items()):
            term = sp.diags(np.asarray(coef, dtype=float).ravel()) @ d1[l - 1]
            blocks[(i, k)] = blocks.get((i, k), 0) - term
        for (i, k), coef in sorted(system.coupling_0.items()):
            term = sp.diags(np.asarray(coef, dtype=float).ravel() * np.ones(self.NS))
            blocks[(i, k)] = blocks.get((i, k), 0) - term
        grid_blocks = [[blocks.get((i, k), None) for k in range(self.m)]
                       for i in range(self.m)]
        K = sp.bmat(grid_blocks, format="csr")
        P_int = sp.diags(self.interior_flat.astype(float))
        self.K = (P_int @ K).tocsr()
        self.Kt = self.K.T.tocsr()
        dt = g.time_step
        self.M1 = (P_int @ (2.0 * sp.eye(self.m * self.NS) + dt ** 2 * K)).tocsr()
        self.A1 = (P_int @ (sp.eye(self.m * self.NS) + 0.5 * dt ** 2 * K)).tocsr()
        self.M1t = self.M1.T.tocsr()
        self.A1t = self.A1.T.tocsr()
        self.dt = dt

    @property
    def n_unknowns(self):
        return 2 * self.m * self.NS

    def _march_half(self, u0, w0, out, direction, source=None):
        g = self.grid
        i0 = g.t0_index
        z_prev = u0 * self.interior_flat
        srcv = None
        if source is not None:
            srcv = source
        z = self.A1 @ u0 + self.dt * (w0 * self.interior_flat)
        if srcv is not None:
            z = z + 0.5 * self.dt ** 2 * (srcv[:, i0] * self.interior_flat)
        for s in range(1, g.half_steps + 1):
            idx = i0 + direction * s
            out[:, idx] = z
            if s == g.half_steps:
                break
            z_next = self.M1 @ z - z_prev
            if srcv is not None:
                z_next = z_next + self.dt ** 2 * (srcv[:, idx] * self.interior_flat)
            z_prev, z = z, z_next

    def apply(self, u0, w0, source=None):
        """Field (m*NS, nt) from initial data; both time halves marched."""
        g = self.grid
        out = np.zeros((self.m * self.NS, g.nt))
        u0 = u0 * self.interior_flat
        out[:, g.t0_index] = u0
        self._march_half(u0, w0, out, +1, source)
        self._march_half(u0, -w0, out, -1, source)
        return out

    def apply_adjoint(self, Ybar):
        """Adjoint of `apply` with respect to the standard inner products.

        Input: cotangent of the full field (m*NS, nt); output (u0_bar, w0_bar).
        """
        g = self.grid
        i0 = g.t0_index
        u0_bar = Ybar[:, i0].copy()
        w0_bar = np.zeros(self.m * self.NS)
        for direction, w_sign in ((+1, +1.0), (-1, -1.0)):
            K = g.half_steps
            lam_next = np.zeros(self.m * self.NS)
            lam_next2 = np.zeros(self.m * self.NS)
            for s in range(K, 0, -1):
                lam = Ybar[:, i0 + direction * s].copy()
                if s <= K - 1:
                    lam += self.M1t @ lam_next
                if s <= K - 2:
                    lam -= lam_next2
                lam_next2 = lam_next
                lam_next = lam
            lam1, lam2 = lam_next, lam_next2
            u0_bar += self.A1t @ lam1 - lam2
            w0_bar += w_sign * self.dt * lam1
        w0_bar *= self.interior_flat
        u0_bar *= self.interior_flat
        return u0_bar, w0_bar


def _pcg(matvec, b, precond, tol, maxiter):
    """Preconditioned CG with exact objective tracking.

    Returns (x, iterations, converged, objective_decrements) where the
    decrements are the per-step decreases of phi(x) = x.B x / 2 - b.x.
    """
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    b_norm = float(np.sqrt(np.sum(b * b))) or 1.0
    drops = []
    it = 0
    converged = False
    while it < maxiter:
        if np.sqrt(np.sum(r * r)) <= tol * b_norm:
            converged = True
            break
        Bp = matvec(p)
        pBp = float(np.sum(p * Bp))
        if pBp <= 0:
            break
        alpha = rz / pBp
        x += alpha * p
        r -= alpha * Bp
        drops.append(0.5 * alpha * rz)
        z = precond(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    else:
        converged = np.sqrt(np.sum(r * r)) <= tol * b_norm
    return x, it, converged, drops


@dataclass
class ContinuationProblem:
    """method 'evolution' searches the discrete solution manifold of the
    marched system with the scene's homogeneous walls (hard-constraint limit
    of the objective; the right choice when the exterior condition is part of
    the scene).  method 'field' keeps all grid fields as unknowns with the
    residual as a penalty (the right choice when part of the boundary is
    unknown, as on the rupture sides)."""

    system: HyperbolicSystem
    mask_M: RegionMask
    mask_U: RegionMask
    data: SpaceTimeField
    source: SpaceTimeField = None
    eps0: float = 0.0
    energy_bound: float = None
    gamma_data: float = 1.0
    gamma_energy: float = None     # None: discrepancy ladder / noiseless default
    cg_tol: float = 1e-8
    cg_maxiter: int = 600
    method: str = "evolution"
    preconditioner: str = "fft"
    residual_rim: int = 1
    whole_domain: bool = False
    truth: SpaceTimeField = None

    def validate(self, domains: "ContinuationDomains" = None) -> None:
        if not self.mask_U.strictly_inside(self.mask_M):
            raise GeometryError("observation set must sit strictly inside M")
        if self.whole_domain:
            if domains is None:
                raise GeometryError("whole-domain validation needs domain maps")
            need = 2.0 * (domains.diameter + 1.0) / self.system.v_min
            if self.system.grid.time_horizon <= need:
                raise GeometryError(
                    f"whole-domain mode needs T > {need:.3f}, "
                    f"got {self.system.grid.time_horizon}")


@dataclass
class ContinuationResult:
    reconstruction: SpaceTimeField
    iterations: int
    converged: bool
    gamma_data: float
    gamma_energy: float
    data_misfit: float
    residual_norm: float
    objective_history: list
    error_table: dict = None
    solves: int = 1


class ContinuationDomains:
    """Distance maps and influence domains for one (M, U) pair."""

    def __init__(self, grid: Grid, mask_M: RegionMask, mask_U: RegionMask,
                 metric=None):
        self.grid = grid
        self.mask_M = mask_M
        self.mask_U = mask_U
        within = mask_M.values
        self.d_dU = geo.compute_distance_map(
            grid, metric, RegionMask(grid, mask_U.boundary()).values, within=within)
        self.d_dM = geo.compute_distance_map(grid, metric, mask_M.boundary(),
                                             within=within)
        self.d_U = geo.compute_distance_map(grid, metric, mask_U.values,
                                            within=within)
        finite = self.d_dM[within]
        start = np.argwhere(within)[int(np.argmax(finite))]
        far = geo.compute_distance_map(
            grid, metric, _point_mask(grid, tuple(start)), within=within)
        far = np.where(np.isfinite(far) & within, far, 0.0)
        second = np.unravel_index(int(np.argmax(far)), grid.shape)
        back = geo.compute_distance_map(grid, metric, _point_mask(grid, second),
                                        within=within)
        self.diameter = float(np.where(np.isfinite(back) & within, back, 0.0).max())

    def omega_v(self, v, h) -> geo.DomainMask:
        return geo.build_omega_v(self.mask_M, self.mask_U, self.d_dU, self.d_dM,
                                 v, self.grid.time_horizon, h)

    def omega_v0(self, v, h) -> geo.DomainMask:
        return geo.build_omega_v0(self.mask_M, self.mask_U, self.d_dU, self.d_dM,
                                  v, self.grid.time_horizon, h)

    def half_time_region(self) -> np.ndarray:
        T = self.grid.time_horizon
        outside = self.mask_M.values & ~self.mask_U.values
        return spacetime_mask(RegionMask(self.grid, outside), -T / 2, T / 2)


def _point_mask(grid, idx):
    m = np.zeros(grid.shape, dtype=bool)
    m[tuple(idx)] = True
    return m


def _make_field_solver(problem, op, D, F):
    """CG on the normal equations over all grid fields (penalized residual)."""

    def solve_one(gamma_e):
        b = problem.gamma_data * op.h1_form(D, "U")
        if F is not None:
            b = b + op.apply_At(op.w_res[:, None] * F)
        if problem.preconditioner == "fft":
            precond = op.make_preconditioner(problem.gamma_data, gamma_e)
        elif problem.preconditioner == "jacobi":
            diag = op.jacobi_diagonal(problem.gamma_data, gamma_e)
            inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
            precond = lambda r: inv * r
        else:
            precond = lambda r: r
        X, iters, conv, drops = _pcg(
            lambda v: op.normal_matvec(v, problem.gamma_data, gamma_e),
            b, precond, problem.cg_tol, problem.cg_maxiter)
        assert all(d >= -1e-12 for d in drops), "objective must not increase"
        misfit = op.h1_norm(X - D, "U")
        const = float(np.sum(op.w_res[:, None] * (F ** 2 if F is not None else 0.0))) \
            + problem.gamma_data * float(np.sum(D * op.h1_form(D, "U")))
        hist = [const]
        for d in drops:
            hist.append(hist[-1] - 2.0 * d)
        return X, iters, conv, misfit, hist

    return solve_one


def _make_manifold_solver(problem, op, evo, D):
    """CG on the normal equations restricted to the marched solution manifold.

    Unknowns are the initial data; the field is recovered by the march, so
    the interior residual vanishes identically and the objective reduces to
    the data and energy terms.
    """
    g = problem.system.grid
    m, NS, nt = evo.m, evo.NS, g.nt

    def to_X(field_rows):
        return np.column_stack([
            field_rows[i * NS:(i + 1) * NS, :].ravel() for i in range(m)])

    def to_rows(X):
        out = np.empty((m * NS, nt))
        for i in range(m):
            out[i * NS:(i + 1) * NS, :] = X[:, i].reshape(NS, nt)
        return out

    if problem.source is not None:
        src_rows = np.vstack([problem.source.values[i].reshape(NS, nt)
                              for i in range(m)])
        particular = evo.apply(np.zeros(m * NS), np.zeros(m * NS), src_rows)
        X_part = to_X(particular)
    else:
        src_rows = None
        X_part = None

    def E(a):
        u0, w0 = a[: m * NS], a[m * NS:]
        return to_X(evo.apply(u0, w0))

    def Et(X):
        u0b, w0b = evo.apply_adjoint(to_rows(X))
        return np.concatenate([u0b, w0b])

    def solve_one(gamma_e):
        target = D if X_part is None else D - X_part

        def matvec(a):
            X = E(a)
            Y = problem.gamma_data * op.h1_form(X, "U") + gamma_e * op.h1_form(X, "M")
            return Et(Y)

        b = Et(problem.gamma_data * op.h1_form(target, "U")
               - (gamma_e * op.h1_form(X_part, "M") if X_part is not None else 0.0))
        a, iters, conv, drops = _pcg(matvec, b, lambda r: r,
                                     problem.cg_tol, problem.cg_maxiter)
        assert all(d >= -1e-12 for d in drops), "objective must not increase"
        X = E(a)
        if X_part is not None:
            X = X + X_part
        misfit = op.h1_norm(X - D, "U")
        const = problem.gamma_data * float(np.sum(target * op.h1_form(target, "U")))
        hist = [const]
        for d in drops:
            hist.append(hist[-1] - 2.0 * d)
        return X, iters, conv, misfit, hist

    return solve_one


def continue_solution(problem: ContinuationProblem,
                      operator: ContinuationOperator = None,
                      evolution: EvolutionOperator = None,
                      domains: ContinuationDomains = None) -> ContinuationResult:
    """Minimize the Tikhonov objective; deterministic from the zero start.

    gamma_energy = None selects the weight by the discrepancy principle when
    eps0 > 0 (largest ladder value whose data misfit is below 1.2 eps0) and
    falls back to the noiseless default otherwise.
    """
    problem.validate(domains)
    op = operator or ContinuationOperator(problem.system, problem.mask_M,
                                          problem.mask_U,
                                          residual_rim=problem.residual_rim)
    D = op.flatten(problem.data)
    F = op.flatten(problem.source) if problem.source is not None else None

    if problem.method == "evolution":
        evo = evolution or EvolutionOperator(problem.system, problem.mask_M)
        solve_one = _make_manifold_solver(problem, op, evo, D)
    elif problem.method == "field":
        solve_one = _make_field_solver(problem, op, D, F)
    else:
        raise GeometryError(f"unknown continuation method {problem.method!r}")

    solves = 0
    if problem.gamma_energy is not None:
        gamma_e = float(problem.gamma_energy)
        X, iters, conv, misfit, hist = solve_one(gamma_e)
        solves = 1
    elif problem.eps0 <= 0:
        gamma_e = DEFAULT_GAMMA_NOISELESS
        X, iters, conv, misfit, hist = solve_one(gamma_e)
        solves = 1
    else:
        chosen = None
        for gamma_e in GAMMA_LADDER:
            X, iters, conv, misfit, hist = solve_one(gamma_e)
            solves += 1
            if misfit <= DISCREPANCY_FACTOR * problem.eps0:
                chosen = gamma_e
                break
        if chosen is None:
            warnings.warn("discrepancy target not reached; keeping the smallest "
                          "energy weight", stacklevel=2)
            gamma_e = GAMMA_LADDER[-1]

    if not conv:
        warnings.warn("CG did not converge within the iteration budget",
                      stacklevel=2)
    recon = op.unflatten(X)
    result = ContinuationResult(
        reconstruction=recon, iterations=iters, converged=conv,
        gamma_data=problem.gamma_data, gamma_energy=gamma_e,
        data_misfit=misfit,
        residual_norm=op.residual_norm(X, F),
        objective_history=hist, solves=solves)
    return result


def evaluate_errors(problem: ContinuationProblem, result: ContinuationResult,
                    h: float, theta: float = 0.5,
                    domains: ContinuationDomains = None) -> dict:
    """Error table on the influence domains, using the minimal wave speed.

    Columns: L2 on Omega_v(h), L2 and H^(1-theta) surrogate on
    (M minus U) x [-T/2, T/2], and the t = 0 slice on Omega_v(2h, 0).
    """
    if problem.truth is None:
        raise GeometryError("error evaluation needs an attached truth field")
    g = problem.system.grid
    if domains is None:
        domains = ContinuationDomains(g, problem.mask_M, problem.mask_U,
                                      problem.system.metric)
    v = problem.system.v_min
    err = SpaceTimeField(
        g, result.reconstruction.values - problem.truth.values, check_finite=False)
    omega = domains.omega_v(v, h)
    table = {"h": h, "v": v, "eps0": problem.eps0,
             "iters": result.iterations, "converged": result.converged,
             "gamma_energy": result.gamma_energy,
             "omega_empty": omega.is_empty()}
    if omega.is_empty():
        warnings.warn("influence domain is empty at this h", stacklevel=2)
        table.update({"err_L2_omega": np.nan, "err_L2_half": np.nan,
                      "err_H1theta": np.nan, "err_t0": np.nan})
        return table
    half = domains.half_time_region()
    table["err_L2_omega"] = ops.norm(err, "L2", omega.values,
                                     domain=problem.mask_M)
    table["err_L2_half"] = ops.norm(err, "L2", half, domain=problem.mask_M)
    table["err_H1theta"] = ops.norm(err, "Hs", half, s=1.0 - theta,
                                    domain=problem.mask_M)
    table["err_t0"] = initial_value_error(problem, result, h, domains)
    return table


def initial_value_error(problem: ContinuationProblem, result: ContinuationResult,
                        h: float, domains: ContinuationDomains = None) -> float:
    """L2 error of the t = 0 slice on the initial-value domain with slack 2h."""
    g = problem.system.grid
    if domains is None:
        domains = ContinuationDomains(g, problem.mask_M, problem.mask_U,
                                      problem.system.metric)
    omega0 = domains.omega_v0(problem.system.v_min, 2.0 * h)
    if omega0.is_empty():
        warnings.warn("initial-value domain is empty at this h", stacklevel=2)
        return np.nan
    diff = result.reconstruction.at_t0() - problem.truth.at_t0()
    w = ops.trapezoid_weights(omega0.values, g.spacing)
    return float(np.sqrt(np.sum(diff ** 2 * w)))


def make_noise(problem_data: SpaceTimeField, mask_U: RegionMask, eps0: float,
               rng: np.random.Generator,
               operator: ContinuationOperator = None) -> SpaceTimeField:
    """Gaussian noise supported on U, rescaled to exact H1(U x [-T,T]) norm."""
    g = problem_data.grid
    raw = rng.standard_normal(problem_data.values.shape)
    raw *= mask_U.values[None, ..., None]
    fld = SpaceTimeField(g, raw, check_finite=False)
    if operator is not None:
        X = operator.flatten(fld)
        scale = operator.h1_norm(X, "U")
    else:
        region = spacetime_mask(mask_U)
        scale = ops.norm(fld, "H1", region, domain=mask_U)
    if scale == 0:
        raise GeometryError("degenerate noise draw")
    return SpaceTimeField(g, problem_data.values + raw * (eps0 / scale),
                          check_finite=False)


@dataclass
class StabilityCurve:
    rows: list
    fit_amplitude: float = None
    fit_exponent: float = None
    inversions: int = 0
    flagged: bool = False

    def monotone_violations(self) -> int:
        errs = [r["err_L2_half"] for r in self.rows if r["eps0"] > 0]
        return sum(1 for a, b in zip(errs, errs[1:]) if b > a * (1 + 1e-12))


def fit_loglog_law(eps_values, err_values):
    """Least squares for err = A * (log|log eps|)^(-c) in transformed axes."""
    eps = np.asarray(eps_values, dtype=float)
    err = np.asarray(err_values, dtype=float)
    keep = (eps > 0) & (eps < 1) & (err > 0)
    x = np.log(np.log(np.abs(np.log(eps[keep]))))
    y = np.log(err[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return float(np.exp(intercept)), float(-slope)


def run_stability_sweep(problem: ContinuationProblem, eps0_list, seed: int,
                        h: float, theta: float = 0.5,
                        domains: ContinuationDomains = None) -> StabilityCurve:
    """Re-solve the problem across noise levels; noise draws are seeded per
    sweep point (seed + index) so points are reproducible independently."""
    if problem.truth is None:
        raise GeometryError("stability sweep needs an attached truth field")
    op = ContinuationOperator(problem.system, problem.mask_M, problem.mask_U)
    evo = EvolutionOperator(problem.system, problem.mask_M) \
        if problem.method == "evolution" else None
    if domains is None:
        domains = ContinuationDomains(problem.system.grid, problem.mask_M,
                                      problem.mask_U, problem.system.metric)
    rows = []
    clean_data = problem.data
    for idx, eps0 in enumerate(sorted(eps0_list, reverse=True)):
        if eps0 > 0:
            rng = np.random.default_rng(seed + idx)
            noisy = make_noise(clean_data, problem.mask_U, eps0, rng, op)
        else:
            noisy = clean_data
        sub = ContinuationProblem(
            system=problem.system, mask_M=problem.mask_M, mask_U=problem.mask_U,
            data=noisy, source=problem.source, eps0=eps0,
            gamma_data=problem.gamma_data, gamma_energy=problem.gamma_energy,
            cg_tol=problem.cg_tol, cg_maxiter=problem.cg_maxiter,
            method=problem.method, preconditioner=problem.preconditioner,
            truth=problem.truth)
        res = continue_solution(sub, operator=op, evolution=evo, domains=domains)
        row = evaluate_errors(sub, res, h, theta, domains)
        row["solves"] = res.solves
        rows.append(row)
    curve = StabilityCurve(rows=rows)
    noisy_rows = [r for r in rows if r["eps0"] > 0 and np.isfinite(r["err_L2_half"])]
    if len(noisy_rows) >= 3:
        A, c = fit_loglog_law([r["eps0"] for r in noisy_rows],
                              [r["err_L2_half"] for r in noisy_rows])
        curve.fit_amplitude, curve.fit_exponent = A, c
    curve.inversions = curve.monotone_violations()
    n_noisy = max(1, len(noisy_rows) - 1)
    curve.flagged = curve.inversions > 0.2 * n_noisy
    if curve.flagged:
        warnings.warn("stability sweep is non-monotone beyond the allowance; "
                      "likely under-regularized", stacklevel=2)
    return curve
