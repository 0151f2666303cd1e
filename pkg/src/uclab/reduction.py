"""Prestressed elasticity tensor and the reduction of elastodynamics to a
coupled first-order-in-coupling hyperbolic system.

For isotropic material with hydrostatic prestress -p0 * I the tensor is

    L_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)
             - p0 (d_ij d_kl - d_il d_jk).

Dividing the momentum balance by the density and eliminating the vector
Laplacian through Lap u = grad(div u) - curl*(curl u) turns the system for
F = (u, div u, curl u) into wave equations with shear speed sqrt(mu/rho) on
the u and curl blocks, pressure speed sqrt((2 mu + lam)/rho) on the div
block, and first-order coupling whose coefficients involve first and second
derivatives of the material fields.  The closed forms encoded here are
validated against manufactured solutions by :func:`verify_reduction` rather
than taken on trust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .grids import Grid, RegionMask, ScalarField, SpaceTimeField
from .forward import HyperbolicSystem
from . import ops


def _as_field(grid, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape != grid.shape:
        raise GeometryError("material field shape does not match the grid")
    return arr


@dataclass
class ElasticMaterial:
    """Density, Lame moduli, and hydrostatic prestress pressure on a grid."""

    grid: Grid
    rho: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        g = self.grid
        self.rho = _as_field(g, self.rho)
        self.lam = _as_field(g, self.lam)
        self.mu = _as_field(g, self.mu)
        self.p0 = _as_field(g, self.p0)

    def validate(self, mask: RegionMask = None) -> None:
        """Well-posed wave speeds and finite curvature of the fields."""
        sel = mask.values if mask is not None else np.ones(self.grid.shape, bool)
        if self.rho[sel].min() <= 0 or self.mu[sel].min() <= 0:
            raise GeometryError("rho and mu must be positive")
        if (2 * self.mu + self.lam)[sel].min() <= 0:
            raise GeometryError("2 mu + lam must be positive")
        for name in ("rho", "lam", "mu", "p0"):
            fld = getattr(self, name)
            for a in range(self.grid.dim):
                d2 = ops.diff(fld, sel, a, self.grid.spacing[a], order=2)
                if not np.isfinite(d2[sel]).all():
                    raise GeometryError(f"material field {name} is not smooth")

    @property
    def v_shear(self) -> np.ndarray:
        return np.sqrt(self.mu / self.rho)

    @property
    def v_press(self) -> np.ndarray:
        return np.sqrt((2 * self.mu + self.lam) / self.rho)


def _delta(i, j):
    return 1.0 if i == j else 0.0


@dataclass
class PrestressedTensor:
    """Rank-4 coefficients L_ijkl per node, shape (n, n, n, n, *spatial)."""

    grid: Grid
    values: np.ndarray

    def contract(self, grad_u: np.ndarray) -> np.ndarray:
        """(L : grad u)_ij = sum_kl L_ijkl d_l u_k with grad_u[k, l] = d_l u_k."""
        return np.einsum("ijkl...,kl...->ij...", self.values, grad_u)


def build_prestressed_tensor(material: ElasticMaterial, dim: int = None) -> PrestressedTensor:
    g = material.grid
    n = dim or g.dim
    lam, mu, p0 = material.lam, material.mu, material.p0
    out = np.zeros((n, n, n, n) + g.shape)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    out[i, j, k, l] = (
                        lam * _delta(i, j) * _delta(k, l)
                        + mu * (_delta(i, k) * _delta(j, l) + _delta(i, l) * _delta(j, k))
                        - p0 * (_delta(i, j) * _delta(k, l) - _delta(i, l) * _delta(j, k)))
    return PrestressedTensor(g, out)


def prestressed_from_stiffness(C: np.ndarray, T0: np.ndarray) -> np.ndarray:
    """General prestress correction of a stiffness tensor.

    L_ijkl = C_ijkl + (1/2)(T0_ij d_kl + T0_kl d_ij + T0_ik d_jl
                            - T0_il d_jk - T0_jk d_il - T0_jl d_ik).
    Used as a consistency check against the hydrostatic closed form.
    """
    n = C.shape[0]
    out = np.array(C, dtype=float, copy=True)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    out[i, j, k, l] += 0.5 * (
                        T0[i, j] * _delta(k, l) + T0[k, l] * _delta(i, j)
                        + T0[i, k] * _delta(j, l) - T0[i, l] * _delta(j, k)
                        - T0[j, k] * _delta(i, l) - T0[j, l] * _delta(i, k))
    return out


@dataclass
class ReducedSystem:
    """Hyperbolic system for F = (u_1..u_n, div u, curl u) plus bookkeeping."""

    system: HyperbolicSystem
    material: ElasticMaterial
    n: int

    @property
    def block_components(self) -> dict:
        return {"u": tuple(range(self.n)), "div": (self.n,), "curl": (self.n + 1,)}


def reduce_elastic_to_hyperbolic(material: ElasticMaterial,
                                 mask: RegionMask = None) -> ReducedSystem:
    """Assemble the four-component (2D) reduced system with explicit coupling.

    Coupling coefficients are stored with the sign convention
    P_i F_i + L_i(DF, F) = f_i, i.e. they are the negated right-hand-side
    terms of the divided momentum balance and its divergence and curl.
    """
    g = material.grid
    if g.dim != 2:
        raise GeometryError("the reduction is implemented for dim = 2")
    material.validate(mask)
    sel = mask.values if mask is not None else np.ones(g.shape, dtype=bool)
    h = g.spacing

    def dx(fld, axis):
        return ops.diff(fld, sel, axis, h[axis])

    rho, lam, mu, p0 = material.rho, material.lam, material.mu, material.p0
    f = 1.0 / rho
    murho = mu / rho
    g2 = (2 * mu + lam) / rho
    a_vec = [dx(lam, 0) - dx(p0, 0), dx(lam, 1) - dx(p0, 1)]
    b_vec = [dx(mu, 0), dx(mu, 1)]
    c_vec = [dx(mu, 0) + dx(p0, 0), dx(mu, 1) + dx(p0, 1)]

    m = 4  # (u1, u2, div, curl)
    IU, IV, IW = (0, 1), 2, 3
    speeds = np.stack([material.v_shear, material.v_shear,
                       material.v_press, material.v_shear])
    cd = {}
    c0 = {}

    def add_d(i, k, axis, coef):
        # axis is the spatial axis (0-based); stored with l = axis + 1
        key = (i, k, axis + 1)
        cd[key] = cd.get(key, 0.0) - coef  # negate: terms move to the left side

    def add_0(i, k, coef):
        key = (i, k)
        c0[key] = c0.get(key, 0.0) - coef

    # u block: d_t^2 u_i = (mu/rho) Lap u_i + f[(lam+mu) d_i v + a_i v
    #                                          + b . grad u_i + c . d_i u]
    for i in IU:
        add_d(i, IV, i, f * (lam + mu))
        add_0(i, IV, f * a_vec[i])
        for j in range(2):
            add_d(i, i, j, f * b_vec[j])
            add_d(i, j, i, f * c_vec[j])

    # div block: d_t^2 v = g2 Lap v + grad g2 . grad v - grad(mu/rho) x curl* w
    #            + div(f a) v + f a . grad v
    #            + sum_ij d_i(f b_j) d_j u_i + f b . grad v
    #            + sum_ij d_i(f c_j) d_i u_j + f c . grad v
    #            - f (c_1 d_2 w - c_2 d_1 w)
    for j in range(2):
        add_d(IV, IV, j, dx(g2, j) + f * a_vec[j] + f * b_vec[j] + f * c_vec[j])
    add_d(IV, IW, 0, dx(murho, 1) + f * c_vec[1])
    add_d(IV, IW, 1, -dx(murho, 0) - f * c_vec[0])
    add_0(IV, IV, dx(f * a_vec[0], 0) + dx(f * a_vec[1], 1))
    for i in range(2):
        for j in range(2):
            add_d(IV, i, j, dx(f * b_vec[j], i))
            add_d(IV, j, i, dx(f * c_vec[j], i))

    # curl block: d_t^2 w = (mu/rho) Lap w + grad(mu/rho) . grad w
    #             + d_1 g2 d_2 v - d_2 g2 d_1 v
    #             + [d_1(f a_2) - d_2(f a_1)] v + f a_2 d_1 v - f a_1 d_2 v
    #             + sum_j d_1(f b_j) d_j u_2 - sum_j d_2(f b_j) d_j u_1
    #             + f b . grad w
    #             + sum_j [d_1(f c_j) d_2 u_j - d_2(f c_j) d_1 u_j]
    for j in range(2):
        add_d(IW, IW, j, dx(murho, j) + f * b_vec[j])
    add_d(IW, IV, 0, -dx(g2, 1) + f * a_vec[1])
    add_d(IW, IV, 1, dx(g2, 0) - f * a_vec[0])
    add_0(IW, IV, dx(f * a_vec[1], 0) - dx(f * a_vec[0], 1))
    for j in range(2):
        add_d(IW, 1, j, dx(f * b_vec[j], 0))
        add_d(IW, 0, j, -dx(f * b_vec[j], 1))
        add_d(IW, j, 1, dx(f * c_vec[j], 0))
        add_d(IW, j, 0, -dx(f * c_vec[j], 1))

    # one-sided stencils leave O(eps/h) crumbs on constant fields; drop
    # coefficients far below the material scale
    scale = max(1.0, *(float(np.abs(fld).max()) for fld in (rho, lam, mu, p0, f)))
    tol = 1e-10 * scale / min(h)
    cd = {k: v for k, v in cd.items() if np.abs(v).max() > tol}
    c0 = {k: v for k, v in c0.items() if np.abs(v).max() > tol}
    system = HyperbolicSystem(g, m, speeds, mask=mask, coupling_d=cd, coupling_0=c0)
    return ReducedSystem(system=system, material=material, n=2)


def displacement_to_state(u: SpaceTimeField, mask: RegionMask = None) -> SpaceTimeField:
    """Assemble F = (u_1, u_2, div u, curl u) by per-slice differencing."""
    g = u.grid
    if g.dim != 2 or u.m != 2:
        raise GeometryError("expected a two-component displacement in 2D")
    sel = mask.values if mask is not None else np.ones(g.shape, dtype=bool)
    sel_st = sel[..., None] & np.ones(g.nt, dtype=bool)
    h = g.spacing
    div = ops.diff(u.values[0], sel_st, 0, h[0]) + ops.diff(u.values[1], sel_st, 1, h[1])
    curl = ops.diff(u.values[1], sel_st, 0, h[0]) - ops.diff(u.values[0], sel_st, 1, h[1])
    vals = np.concatenate([u.values, div[None], curl[None]], axis=0)
    return SpaceTimeField(g, np.where(sel_st[None], vals, 0.0), check_finite=False)


def elastic_residual(material: ElasticMaterial, u: SpaceTimeField,
                     source: SpaceTimeField = None,
                     mask: RegionMask = None) -> SpaceTimeField:
    """Discrete rho d_t^2 u - div(L : grad u) - g; the oracle side of the
    reduction consistency contract."""
    g = material.grid
    sel = mask.values if mask is not None else np.ones(g.shape, dtype=bool)
    sel_st = sel[..., None] & np.ones(g.nt, dtype=bool)
    h = g.spacing
    n = g.dim
    tensor = build_prestressed_tensor(material)
    grad_u = np.stack([
        np.stack([ops.diff(u.values[k], sel_st, l, h[l]) for l in range(n)])
        for k in range(n)])  # grad_u[k, l] = d_l u_k
    stress = np.einsum("ijkl...,kl...->ij...", tensor.values[..., None], grad_u)
    out = material.rho[..., None] * ops.diff(u.values, sel_st, n, g.time_step, order=2)
    for i in range(n):
        for j in range(n):
            out[i] -= ops.diff(stress[i, j], sel_st, j, h[j])
    if source is not None:
        out = out - source.values
    return SpaceTimeField(g, np.where(sel_st[None], out, 0.0), check_finite=False)


def reduced_source(material: ElasticMaterial, source: SpaceTimeField,
                   mask: RegionMask = None) -> SpaceTimeField:
    """Transform an elastic body force g into the reduced-system source:
    (g/rho, div(g/rho), curl(g/rho))."""
    g = material.grid
    scaled = SpaceTimeField(g, source.values / material.rho[..., None],
                            check_finite=False)
    return displacement_to_state(scaled, mask)


def verify_reduction(material: ElasticMaterial, u: SpaceTimeField,
                     source: SpaceTimeField = None, mask: RegionMask = None,
                     reduced: ReducedSystem = None, rim: int = 3) -> dict:
    """Per-block L2 residuals of the reduced system on F = (u, div u, curl u).

    Contract: if the elasticity residual of u is O(h^2) then each block
    residual is O(h^2) once the coupling includes the material-gradient terms.

    Residuals are reported on the mask eroded by ``rim`` nodes.  On the rim
    itself the operator composes second differences with the one-sided first
    differences that produced div u and curl u, which mixes stencil error
    families and is not second-order; the identity being checked is an
    interior statement.
    """
    from scipy import ndimage

    from .forward import apply_operator

    g = material.grid
    if reduced is None:
        reduced = reduce_elastic_to_hyperbolic(material, mask)
    state = displacement_to_state(u, mask)
    resid = apply_operator(reduced.system, state)
    vals = resid.values
    if source is not None:
        vals = vals - reduced_source(material, source, mask).values
    sel = mask.values if mask is not None else np.ones(g.shape, dtype=bool)
    if rim > 0:
        sel = ndimage.binary_erosion(
            sel, structure=ndimage.generate_binary_structure(g.dim, 1),
            iterations=rim, border_value=0)
    if not sel.any():
        raise GeometryError("mask too small to erode the stencil rim")
    region = sel[..., None] & np.ones(g.nt, dtype=bool)
    w = ops.trapezoid_weights(region, g.spacing + (g.time_step,))
    report = {}
    for name, comps in reduced.block_components.items():
        sq = sum(float(np.sum(vals[c] ** 2 * w)) for c in comps)
        report[name] = np.sqrt(sq)
    report["total"] = float(np.sqrt(sum(v ** 2 for v in report.values())))
    return report
