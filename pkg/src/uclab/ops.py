"""Mask-aware finite differences, quadrature, and Sobolev-type norms.

Stencils are second-order accurate everywhere: centered in the interior of a
mask run, one-sided (still second order) where a run starts or ends.  The same
stencil selection drives both the direct `apply` path and the sparse-matrix
assembly used by the least-squares continuation solver, so the two paths agree
to rounding.

Quadrature is trapezoidal: a node gets weight factor 1 along an axis when both
its along-axis neighbours belong to the region, 0.5 otherwise.  Derivatives in
reported norms are always taken on the field's domain mask while the region
only selects the quadrature support; this keeps norms monotone under region
inclusion.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .grids import Grid, MetricField, RegionMask, ScalarField, SpaceTimeField, VectorField

# one-sided / centered stencil tables: {(order, kind): (offsets, coeffs)}
_STENCILS = {
    (1, "c"): ((-1, 1), (-0.5, 0.5)),
    (1, "f"): ((0, 1, 2), (-1.5, 2.0, -0.5)),
    (1, "b"): ((0, -1, -2), (1.5, -2.0, 0.5)),
    (2, "c"): ((-1, 0, 1), (1.0, -2.0, 1.0)),
    (2, "f"): ((0, 1, 2, 3), (2.0, -5.0, 4.0, -1.0)),
    (2, "b"): ((0, -1, -2, -3), (2.0, -5.0, 4.0, -1.0)),
}


def _shifted(mask: np.ndarray, axis: int, k: int) -> np.ndarray:
    """mask[i + k] along `axis`, False outside the array."""
    if k == 0:
        return mask
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if k > 0:
        src[axis] = slice(k, None)
        dst[axis] = slice(None, -k)
    else:
        src[axis] = slice(None, k)
        dst[axis] = slice(-k, None)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def stencil_groups(mask: np.ndarray, axis: int, order: int):
    """Classify mask nodes by the stencil that fits along `axis`.

    Returns (centered, forward, backward) boolean arrays.  Raises
    GeometryError naming an offending node when some mask node admits no
    second-order stencil (mask run too short).
    """
    reach = 2 if order == 1 else 3
    has = {k: _shifted(mask, axis, k) for k in range(-reach, reach + 1)}
    centered = mask & has[-1] & has[1]
    fwd = mask & ~has[-1]
    bwd = mask & ~has[1] & has[-1]
    for k in range(1, reach + 1):
        fwd = fwd & has[k]
        bwd = bwd & has[-k]
    invalid = mask & ~(centered | fwd | bwd)
    if invalid.any():
        node = np.argwhere(invalid)[0]
        raise GeometryError(
            f"mask too thin for order-{order} stencil along axis {axis} "
            f"at node {tuple(int(i) for i in node)}")
    return centered, fwd, bwd


def _roll_view(values: np.ndarray, axis: int, k: int) -> np.ndarray:
    # np.roll semantics chosen so result[i] = values[i + k]
    return np.roll(values, -k, axis=axis)


def diff(values: np.ndarray, mask: np.ndarray, axis: int, h: float,
         order: int = 1) -> np.ndarray:
    """Derivative of `values` along a mask axis; zero outside the mask.

    `mask` must match the trailing dimensions of `values`; leading axes
    (components) broadcast.  `axis` indexes the mask dimensions.
    """
    nd_off = values.ndim - mask.ndim
    ax = nd_off + axis
    out = np.zeros_like(values, dtype=float)
    groups = stencil_groups(mask, axis, order)
    for sel, kind in zip(groups, ("c", "f", "b")):
        if not sel.any():
            continue
        offs, coeffs = _STENCILS[(order, kind)]
        acc = np.zeros_like(values, dtype=float)
        for o, c in zip(offs, coeffs):
            acc += c * _roll_view(values, ax, o)
        out = np.where(sel, acc, out)
    return out / h ** order


def diff_matrix(mask: np.ndarray, axis: int, h: float, order: int = 1) -> sp.csr_matrix:
    """Sparse matrix of :func:`diff` acting on flattened arrays of mask.shape."""
    strides = np.zeros(mask.ndim, dtype=np.int64)
    strides[-1] = 1
    for a in range(mask.ndim - 2, -1, -1):
        strides[a] = strides[a + 1] * mask.shape[a + 1]
    stride = strides[axis]
    groups = stencil_groups(mask, axis, order)
    rows, cols, data = [], [], []
    for sel, kind in zip(groups, ("c", "f", "b")):
        if not sel.any():
            continue
        idx = np.flatnonzero(sel.ravel())
        offs, coeffs = _STENCILS[(order, kind)]
        for o, c in zip(offs, coeffs):
            if c == 0.0:
                continue
            rows.append(idx)
            cols.append(idx + o * stride)
            data.append(np.full(idx.size, c / h ** order))
    n = mask.size
    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    return mat.tocsr()


def spatial_diff(field_values: np.ndarray, grid: Grid, mask: np.ndarray,
                 axis: int, order: int = 1) -> np.ndarray:
    return diff(field_values, mask, axis, grid.spacing[axis], order)


def apply_laplace_beltrami(field: ScalarField, metric: MetricField = None,
                           lower_h: VectorField = None, lower_q: ScalarField = None,
                           mask: RegionMask = None) -> ScalarField:
    """Discrete Laplace-type operator sum_jk g^jk D_j D_k + sum_j h_j D_j + q.

    Diagonal second derivatives use compact stencils; mixed terms compose two
    first derivatives.  Exact on quadratics for constant coefficients.
    """
    grid = field.grid
    m = mask.values if mask is not None else np.ones(grid.shape, dtype=bool)
    out = _laplace_values(field.values, grid, m,
                          metric.g_upper if metric is not None else None,
                          lower_h.values if lower_h is not None else None,
                          lower_q.values if lower_q is not None else None)
    return ScalarField(grid, out, smoothness="C0")


def _laplace_values(values, grid, mask, g_upper=None, hvec=None, q=None):
    n = grid.dim
    h = grid.spacing
    out = np.zeros_like(values, dtype=float)
    first = {}
    for j in range(n):
        for k in range(n):
            if g_upper is None:
                coef = 1.0 if j == k else 0.0
            else:
                coef = g_upper[j, k]
            if np.all(coef == 0.0):
                continue
            if j == k:
                term = diff(values, mask, j, h[j], order=2)
            else:
                if k not in first:
                    first[k] = diff(values, mask, k, h[k], order=1)
                term = diff(first[k], mask, j, h[j], order=1)
            out += coef * term
    if hvec is not None:
        for j in range(n):
            if np.any(hvec[j] != 0.0):
                out += hvec[j] * diff(values, mask, j, h[j], order=1)
    if q is not None:
        out += q * values
    return np.where(mask, out, 0.0)


def apply_div(field: VectorField, mask: RegionMask = None) -> ScalarField:
    grid = field.grid
    m = mask.values if mask is not None else np.ones(grid.shape, dtype=bool)
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        out += diff(field.values[a], m, a, grid.spacing[a], order=1)
    return ScalarField(grid, np.where(m, out, 0.0))


def apply_curl(field: VectorField, mask: RegionMask = None):
    """Curl: scalar field in 2D (d1 u2 - d2 u1), vector field in 3D."""
    grid = field.grid
    if grid.dim == 1:
        raise GeometryError("curl undefined in one dimension")
    m = mask.values if mask is not None else np.ones(grid.shape, dtype=bool)
    h = grid.spacing
    u = field.values
    if grid.dim == 2:
        w = diff(u[1], m, 0, h[0]) - diff(u[0], m, 1, h[1])
        return ScalarField(grid, np.where(m, w, 0.0))
    comps = []
    for (a, b, c) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        comps.append(diff(u[c], m, b, h[b]) - diff(u[b], m, c, h[c]))
    return VectorField(grid, np.where(m, np.stack(comps), 0.0))


def trapezoid_weights(region: np.ndarray, spacings) -> np.ndarray:
    """Product trapezoid weights over an arbitrary boolean region."""
    w = np.where(region, float(np.prod(spacings)), 0.0)
    for a in range(region.ndim):
        both = _shifted(region, a, 1) & _shifted(region, a, -1)
        factor = np.where(region & both, 1.0, 0.5)
        w *= factor
    return w


def _region_array(region, grid) -> np.ndarray:
    if isinstance(region, RegionMask):
        return region.values[..., None] & np.ones(grid.nt, dtype=bool)
    values = getattr(region, "values", region)
    return np.asarray(values, dtype=bool)


def norm(field: SpaceTimeField, kind: str, region, tau: float = None,
         s: float = None, domain: RegionMask = None) -> float:
    """Sobolev-type norm of a multi-component space-time field on a region.

    Component convention: the square of the norm is the sum of per-component
    squares.  ``domain`` is the mask on which derivatives are formed (defaults
    to the full grid); ``region`` only selects quadrature nodes.
    """
    grid = field.grid
    reg = _region_array(region, grid)
    if reg.shape != grid.shape_spacetime:
        raise GeometryError("region shape does not match grid space-time shape")
    if not reg.any():
        warnings.warn("norm over empty region; returning 0", stacklevel=2)
        return 0.0
    spac = grid.spacing + (grid.time_step,)
    w = trapezoid_weights(reg, spac)
    dom = domain.values if domain is not None else np.ones(grid.shape, dtype=bool)
    dom_st = dom[..., None] & np.ones(grid.nt, dtype=bool)

    l2sq = float(np.sum(field.values ** 2 * w))
    if kind == "L2":
        return float(np.sqrt(l2sq))

    dsq = 0.0
    for a in range(grid.dim):
        da = diff(field.values, dom_st, a, grid.spacing[a], order=1)
        dsq += float(np.sum(da ** 2 * w))
    dt = diff(field.values, dom_st, grid.dim, grid.time_step, order=1)
    dsq += float(np.sum(dt ** 2 * w))

    if kind == "H1":
        return float(np.sqrt(l2sq + dsq))
    if kind == "H1tau":
        if tau is None:
            raise ValueError("H1tau norm requires tau")
        return float(np.sqrt(tau ** 2 * l2sq + dsq))
    if kind == "Hs":
        if s is None or not (0.0 < s < 1.0):
            raise ValueError("Hs norm requires s in (0, 1)")
        l2 = np.sqrt(l2sq)
        h1 = np.sqrt(l2sq + dsq)
        return float(l2 ** (1.0 - s) * h1 ** s)
    raise ValueError(f"unknown norm kind {kind!r}")


def seminorm_gradient_sq(field: SpaceTimeField, region, domain: RegionMask = None) -> float:
    """Squared L2 norm of the full space-time gradient on a region."""
    grid = field.grid
    reg = _region_array(region, grid)
    spac = grid.spacing + (grid.time_step,)
    w = trapezoid_weights(reg, spac)
    dom = domain.values if domain is not None else np.ones(grid.shape, dtype=bool)
    dom_st = dom[..., None] & np.ones(grid.nt, dtype=bool)
    total = 0.0
    for a in range(grid.dim):
        da = diff(field.values, dom_st, a, grid.spacing[a], order=1)
        total += float(np.sum(da ** 2 * w))
    dt = diff(field.values, dom_st, grid.dim, grid.time_step, order=1)
    total += float(np.sum(dt ** 2 * w))
    return total
