"""Influence-domain geometry: distance maps, continuation domains, level
functions with non-characteristic margins, greedy separated nets, and
quadratic convexified weights.

Distances are shortest paths on a weighted lattice graph (2-neighbour chain in
1D; axis + diagonal + knight moves in 2D, which keeps the lattice anisotropy
overshoot below about 2 percent).  Domains are evaluated pointwise from the
distance maps; a separate brute-force oracle in the test suite re-derives the
same sets node by node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import GeometryError
from .grids import Grid, MetricField, RegionMask

EIKONAL_FLAG_TOL = 0.2  # |grad d|_g deviation marking non-smooth distance nodes


# ---------------------------------------------------------------------------
# distance maps
# ---------------------------------------------------------------------------

_OFFSETS_2D = [
    ((1, 0), None),
    ((0, 1), None),
    ((1, 1), ((1, 0), (0, 1))),
    ((1, -1), ((1, 0), (0, -1))),
    ((2, 1), ((1, 0), (1, 1))),
    ((2, -1), ((1, 0), (1, -1))),
    ((1, 2), ((0, 1), (1, 1))),
    ((1, -2), ((0, -1), (1, -1))),
]


def _offset_table(dim, neighborhood):
    if dim == 1:
        return [((1,), None)]
    if dim == 2:
        return _OFFSETS_2D[:4] if neighborhood == 8 else _OFFSETS_2D
    raise GeometryError("distance maps implemented for dim 1 and 2")


def _shift_index(shape, offset):
    """Flat indices of valid (p, p+offset) pairs for one lattice offset."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    src = [slice(None)] * len(shape)
    dst = [slice(None)] * len(shape)
    for a, k in enumerate(offset):
        if k > 0:
            src[a] = slice(None, -k)
            dst[a] = slice(k, None)
        elif k < 0:
            src[a] = slice(-k, None)
            dst[a] = slice(None, k)
    return idx[tuple(src)].ravel(), idx[tuple(dst)].ravel()


def _grid_graph(grid: Grid, metric: MetricField = None, within: np.ndarray = None,
                neighborhood: int = 16) -> sp.csr_matrix:
    """Undirected lattice graph with Riemannian edge lengths.

    Diagonal and knight edges are gated on their intermediate nodes so paths
    cannot tunnel through one-node-thick excluded walls.
    """
    shape = grid.shape
    n = int(np.prod(shape))
    inside = within if within is not None else np.ones(shape, dtype=bool)
    g_lower = metric.g_lower if metric is not None else None
    h = np.asarray(grid.spacing)
    rows, cols, data = [], [], []
    flat_inside = inside.ravel()
    for offset, gates in _offset_table(grid.dim, neighborhood):
        i_src, i_dst = _shift_index(shape, offset)
        ok = flat_inside[i_src] & flat_inside[i_dst]
        for gate in gates or ():
            g_src, g_dst = _shift_index(shape, gate)
            gate_ok = np.zeros(n, dtype=bool)
            gate_ok[g_src] = flat_inside[g_dst]
            ok &= gate_ok[i_src]
        if not ok.any():
            continue
        i_src, i_dst = i_src[ok], i_dst[ok]
        dx = np.asarray(offset, dtype=float) * h[: grid.dim]
        if g_lower is None:
            w = np.full(i_src.size, float(np.sqrt(np.dot(dx, dx))))
        else:
            gl = g_lower.reshape(grid.dim, grid.dim, -1)
            g_mid = 0.5 * (gl[:, :, i_src] + gl[:, :, i_dst])
            w = np.sqrt(np.einsum("i,ij...,j->...", dx, g_mid, dx))
        rows.append(i_src)
        cols.append(i_dst)
        data.append(w)
    if not rows:
        raise GeometryError("empty lattice graph")
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    return mat.tocsr()


def compute_distance_map(grid: Grid, metric: MetricField, target: np.ndarray,
                         within: np.ndarray = None, neighborhood: int = 16) -> np.ndarray:
    """Shortest-path distance from every node to the target node set.

    Unreachable nodes get +inf.  Converges to the Riemannian distance up to
    the lattice anisotropy factor of the chosen neighbourhood.
    """
    target = np.asarray(target, dtype=bool)
    if not target.any():
        raise GeometryError("distance target is empty")
    graph = _grid_graph(grid, metric, within, neighborhood)
    sources = np.flatnonzero(target.ravel())
    dist = dijkstra(graph, directed=False, indices=sources, min_only=True)
    return dist.reshape(grid.shape)


@dataclass
class DistanceMaps:
    """Named collection of per-node distance maps on one grid."""

    grid: Grid
    entries: dict = field(default_factory=dict)

    def add(self, label: str, values: np.ndarray) -> np.ndarray:
        self.entries[label] = values
        return values

    def __getitem__(self, label):
        return self.entries[label]


# ---------------------------------------------------------------------------
# continuation domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainMask:
    """Boolean node set, spatial or space-time, with construction bookkeeping."""

    grid: Grid
    values: np.ndarray
    label: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.shape not in (self.grid.shape, self.grid.shape_spacetime):
            raise GeometryError("domain mask must be spatial or space-time shaped")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def spatial(self) -> bool:
        return self.values.shape == self.grid.shape

    def node_count(self) -> int:
        return int(self.values.sum())

    def is_empty(self) -> bool:
        return not self.values.any()


def build_omega_v(mask_M: RegionMask, mask_U: RegionMask, d_to_dU: np.ndarray,
                  d_to_dM: np.ndarray, v: float, T: float, h: float) -> DomainMask:
    """Quantitative continuation domain: the sqrt(h)-shrunken influence cone.

    Membership on (M minus U) x [-T, T]:
        v*T - v*|t| - d(x, bdry U) > sqrt(h)   and   d(x, bdry M) > h.
    """
    if h <= 0:
        raise GeometryError("h must be positive")
    grid = mask_M.grid
    t = np.abs(grid.times())
    base = mask_M.values & ~mask_U.values & (d_to_dM > h)
    slack = v * T - v * t[(None,) * grid.dim + (slice(None),)]
    member = base[..., None] & (slack - d_to_dU[..., None] > np.sqrt(h))
    return DomainMask(grid, member, label="Omega_v(h)",
                      params={"v": v, "T": T, "h": h})


def build_omega_v0(mask_M: RegionMask, mask_U: RegionMask, d_to_dU: np.ndarray,
                   d_to_dM: np.ndarray, v: float, T: float, h: float) -> DomainMask:
    """Initial-time continuation domain (spatial):
        d(x, bdry U) < v*T - sqrt(h)   and   d(x, bdry M) > sqrt(h)   on M minus U.
    """
    if h <= 0:
        raise GeometryError("h must be positive")
    grid = mask_M.grid
    rh = np.sqrt(h)
    member = (mask_M.values & ~mask_U.values
              & (d_to_dU < v * T - rh) & (d_to_dM > rh))
    return DomainMask(grid, member, label="Omega_v(h,0)",
                      params={"v": v, "T": T, "h": h})


def build_double_cone(mask_M: RegionMask, d_to_U: np.ndarray, T: float,
                      v: float = 1.0) -> DomainMask:
    """Influence double cone K(U, T): d(x, U) < v*(T - |t|) on M x [-T, T]."""
    grid = mask_M.grid
    t = np.abs(grid.times())
    bound = v * (T - t)[(None,) * grid.dim + (slice(None),)]
    member = mask_M.values[..., None] & (d_to_U[..., None] < bound)
    return DomainMask(grid, member, label="K(U,T)", params={"T": T, "v": v})


def _boundary_spacetime(values: np.ndarray) -> np.ndarray:
    """Nodes of a space-time set with an axis neighbour outside the set
    (array edges count as outside)."""
    from scipy import ndimage
    interior = ndimage.binary_erosion(
        values, structure=ndimage.generate_binary_structure(values.ndim, 1),
        border_value=0)
    return values & ~interior


def _spacetime_coords(grid: Grid, mask_values: np.ndarray) -> np.ndarray:
    axes = [grid.axis_coords(a) for a in range(grid.dim)] + [grid.times()]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m[mask_values] for m in mesh])


def boundary_gap(omega: DomainMask, cone: DomainMask, mask_U: RegionMask) -> float:
    """Hausdorff distance between the node boundaries of the shrunken domain
    and of the influence cone with the observation cylinder removed."""
    grid = omega.grid
    cone_minus_U = cone.values & ~mask_U.values[..., None]
    bd_a = _boundary_spacetime(omega.values)
    bd_b = _boundary_spacetime(cone_minus_U)
    if not bd_a.any() or not bd_b.any():
        raise GeometryError("cannot measure gap against an empty boundary")
    pa = _spacetime_coords(grid, bd_a)
    pb = _spacetime_coords(grid, bd_b)
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


# ---------------------------------------------------------------------------
# level functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiFunction:
    """Level function (T - d(x,z)/v)^2 - t^2 with cached gradients.

    kind 'flat' uses the closed-form Euclidean distance to the centre, kind
    'geodesic' a lattice distance map.  Spatial gradients are formed by
    centered differences; nodes where the distance map fails the eikonal test
    |grad d|_g = 1 (cut locus, kinks) are flagged for exclusion.
    """

    grid: Grid
    kind: str
    center: tuple
    T: float
    v: float
    d: np.ndarray = None
    metric: MetricField = None

    def __post_init__(self):
        if self.kind not in ("flat", "geodesic"):
            raise GeometryError("psi kind must be 'flat' or 'geodesic'")
        d = self.d
        if d is None:
            if self.kind == "flat":
                coords = self.grid.coordinate_arrays()
                d = np.sqrt(sum((c - z) ** 2 for c, z in zip(coords, self.center)))
            else:
                raise GeometryError("geodesic psi requires a distance map")
        d = np.ascontiguousarray(np.asarray(d, dtype=float))
        d.flags.writeable = False
        object.__setattr__(self, "d", d)

    @property
    def radial(self) -> np.ndarray:
        """R(x) = T - d(x,z)/v; psi = R^2 - t^2."""
        return self.T - self.d / self.v

    def values_spacetime(self) -> np.ndarray:
        t = self.grid.times()
        return self.radial[..., None] ** 2 - t ** 2

    def grad_d(self, mask: np.ndarray = None):
        from . import ops
        m = mask if mask is not None else np.ones(self.grid.shape, dtype=bool)
        return np.stack([ops.diff(self.d, m, a, self.grid.spacing[a])
                         for a in range(self.grid.dim)])

    def flagged_nodes(self, mask: np.ndarray = None, tol: float = EIKONAL_FLAG_TOL):
        """Nodes failing the |grad d|_g = 1 test (distance not smooth there)."""
        gd = self.grad_d(mask)
        if self.metric is None:
            sq = np.sum(gd ** 2, axis=0)
        else:
            sq = np.einsum("i...,ij...,j...->...", gd, self.metric.g_upper, gd)
        return np.abs(np.sqrt(np.maximum(sq, 0.0)) - 1.0) > tol

    def level_region(self, h: float, mask_M: RegionMask = None) -> DomainMask:
        member = self.values_spacetime() > h
        if mask_M is not None:
            member &= mask_M.values[..., None]
        return DomainMask(self.grid, member, label="psi_level",
                          params={"h": h, "T": self.T, "v": self.v})


@dataclass
class MarginReport:
    min_margin: float
    argmin: tuple
    per_component_min: list
    excluded_nodes: int
    region_nodes: int
    tolerance: float


def check_noncharacteristic(psi: PsiFunction, speeds: np.ndarray,
                            metric: MetricField, region: DomainMask,
                            h: float) -> MarginReport:
    """Evaluate -p_i(y, grad psi) = v_i^2 g^{kl} d_k psi d_l psi - |d_t psi|^2
    on a level region and report the worst margin over nodes and components.

    Gradients come from centered differences of the cached distance map;
    flagged (cut-locus) nodes are excluded and counted.
    """
    grid = psi.grid
    R = psi.radial
    gd = psi.grad_d()
    # grad_x psi = -(2 R / v) grad d
    if metric is None:
        quad = np.sum(gd ** 2, axis=0)
    else:
        quad = np.einsum("i...,ij...,j...->...", gd, metric.g_upper, gd)
    spatial_sq = (2.0 * R / psi.v) ** 2 * quad  # |grad_x psi|_g^2
    t = grid.times()
    tt2 = (2.0 * t) ** 2
    flagged = psi.flagged_nodes()
    region_values = region.values
    if region_values.shape == grid.shape:
        region_values = region_values[..., None] & np.ones(grid.nt, dtype=bool)
    usable = region_values & ~flagged[..., None]
    excluded = int((region_values & flagged[..., None]).sum())
    speeds = np.atleast_1d(np.asarray(speeds, dtype=float))
    mins, argmin, best = [], None, np.inf
    for vi in speeds:
        vi_sq = np.broadcast_to(np.asarray(vi, dtype=float) ** 2, grid.shape)
        margin = vi_sq[..., None] * spatial_sq[..., None] - tt2
        masked = np.where(usable, margin, np.inf)
        i_flat = int(np.argmin(masked))
        m = float(masked.ravel()[i_flat])
        mins.append(m)
        if m < best:
            best = m
            argmin = np.unravel_index(i_flat, masked.shape)
    return MarginReport(min_margin=best, argmin=argmin, per_component_min=mins,
                        excluded_nodes=excluded,
                        region_nodes=int(region_values.sum()),
                        tolerance=4.0 * h)


# ---------------------------------------------------------------------------
# greedy separated net
# ---------------------------------------------------------------------------

@dataclass
class SeparatedNet:
    points: np.ndarray        # (N, dim+1) space-time coordinates
    node_indices: np.ndarray  # (N,) flat indices into the space-time array
    psi_values: np.ndarray    # (N,) nonincreasing
    r: float

    @property
    def size(self) -> int:
        return len(self.node_indices)

    def min_separation(self) -> float:
        if self.size < 2:
            return np.inf
        tree = cKDTree(self.points)
        d, _ = tree.query(self.points, k=2)
        return float(d[:, 1].min())

    def covering_radius(self, region_coords: np.ndarray) -> float:
        tree = cKDTree(self.points)
        return float(tree.query(region_coords)[0].max())


def build_separated_net(region: DomainMask, psi_values: np.ndarray,
                        r: float) -> SeparatedNet:
    """Greedy maximal r/2-separated set ordered by decreasing psi.

    Each step picks the remaining node with maximal psi (ties broken by the
    smallest row-major node index) and removes the open ball of radius r/2
    around it.  The result is r/2-separated and an r/2-net of the region.
    """
    grid = region.grid
    if region.is_empty():
        raise GeometryError("net region is empty")
    if r <= 2.0 * max(grid.spacing + (grid.time_step,)):
        raise GeometryError("net radius r is not resolvable on this grid")
    vals = np.asarray(psi_values, dtype=float)
    if vals.shape != region.values.shape:
        raise GeometryError("psi values must match the region shape")
    coords = _spacetime_coords(grid, region.values)
    flat_idx = np.flatnonzero(region.values.ravel())
    pvals = vals.ravel()[flat_idx]
    rhalf_sq = (r / 2.0) ** 2
    tol = 1e-12 * max(1.0, rhalf_sq)
    active = np.ones(len(flat_idx), dtype=bool)
    sel = []
    while active.any():
        cand = np.where(active, pvals, -np.inf)
        j = int(np.argmax(cand))  # first max in row-major order
        sel.append(j)
        dsq = np.sum((coords - coords[j]) ** 2, axis=1)
        active &= dsq >= rhalf_sq - tol
    sel = np.asarray(sel)
    return SeparatedNet(points=coords[sel], node_indices=flat_idx[sel],
                        psi_values=pvals[sel], r=float(r))


def net_packing_check(net: SeparatedNet, region: DomainMask) -> dict:
    """Packing form of the net-size bound: N * vol(B_{r/4}) against the node-
    counted volume of the region fattened by r/4."""
    grid = region.grid
    dim_st = grid.dim + 1
    rq = net.r / 4.0
    if dim_st == 2:
        ball = np.pi * rq ** 2
    elif dim_st == 3:
        ball = 4.0 / 3.0 * np.pi * rq ** 3
    else:
        ball = 2.0 * rq
    cell = float(np.prod(grid.spacing)) * grid.time_step
    region_coords = _spacetime_coords(grid, region.values)
    all_coords = _spacetime_coords(grid, np.ones(grid.shape_spacetime, dtype=bool))
    tree = cKDTree(region_coords)
    close = tree.query(all_coords, distance_upper_bound=rq * (1 + 1e-12))[0]
    fattened_nodes = int(np.isfinite(close).sum())
    return {
        "n_points": net.size,
        "lhs": net.size * ball,
        "rhs": fattened_nodes * cell,
        "holds": net.size * ball <= fattened_nodes * cell,
    }


# ---------------------------------------------------------------------------
# quadratic convexified weight
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CarlemanWeight:
    """Quadratic weight phi(y) = b . (y - y0) + (y - y0)^T Q (y - y0).

    Built as the second-order expansion of the level function at an anchor on
    its zero set, bent down by sigma * |y - y0|^2.  kappa is the verified ball
    radius for the support condition, delta the verified slack for the
    localization condition, R the support radius it was checked against.
    """

    y0: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    sigma: float
    kappa: float
    delta: float
    R: float

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        delta = coords - self.y0
        lin = delta @ self.b
        quad = np.einsum("...i,ij,...j->...", delta, self.Q, delta)
        return lin + quad

    def hessian(self) -> np.ndarray:
        return 2.0 * self.Q

    def values_spacetime(self, grid: Grid) -> np.ndarray:
        coords = _spacetime_coords(grid, np.ones(grid.shape_spacetime, dtype=bool))
        return self(coords).reshape(grid.shape_spacetime)


def _fd_gradient_hessian(values: np.ndarray, idx: tuple, steps: np.ndarray):
    """Centered gradient and Hessian of a sampled function at one node."""
    nd = values.ndim
    g = np.zeros(nd)
    H = np.zeros((nd, nd))

    def at(off):
        return values[tuple(int(i + o) for i, o in zip(idx, off))]

    e = np.eye(nd, dtype=int)
    for a in range(nd):
        g[a] = (at(e[a]) - at(-e[a])) / (2 * steps[a])
        H[a, a] = (at(e[a]) - 2 * at(np.zeros(nd, dtype=int)) + at(-e[a])) / steps[a] ** 2
        for b in range(a + 1, nd):
            H[a, b] = H[b, a] = (at(e[a] + e[b]) - at(e[a] - e[b])
                                 - at(-e[a] + e[b]) + at(-e[a] - e[b])) / (4 * steps[a] * steps[b])
    return g, H


def build_carleman_weight(psi, y0_index: tuple, sigma: float,
                          kappa_search, R: float = None,
                          delta_scan: int = 30, grid: Grid = None) -> CarlemanWeight:
    """Convexified quadratic weight anchored at a space-time node.

    phi is the second-order expansion of (psi - psi(y0)) minus sigma |y-y0|^2.
    kappa is found by shrinking scan so that on the grid restricted to the
    kappa-ball {psi <= 0} is contained in {phi < 0} plus the anchor; delta is
    the largest dyadic value keeping {psi <= 0, phi >= -8 delta} inside the
    R-ball.  Raises GeometryError, naming a violating node, when no kappa in
    the scan works (signals sigma too small).

    ``psi`` is a PsiFunction or a raw space-time array (then pass ``grid``).
    """
    if isinstance(psi, PsiFunction):
        grid = psi.grid
        psi_st = psi.values_spacetime()
    else:
        if grid is None:
            raise GeometryError("grid required when psi is a raw array")
        psi_st = np.asarray(psi, dtype=float)
    steps = np.asarray(grid.spacing + (grid.time_step,))
    for a, i in enumerate(y0_index):
        if i < 1 or i >= psi_st.shape[a] - 1:
            raise GeometryError("anchor too close to the grid edge for stencils")
    g, H = _fd_gradient_hessian(psi_st, y0_index, steps)
    if np.linalg.norm(g) < 1e-10:
        raise GeometryError("level function has vanishing gradient at the anchor")
    axes = [grid.axis_coords(a) for a in range(grid.dim)] + [grid.times()]
    y0 = np.array([axes[a][y0_index[a]] for a in range(grid.dim + 1)])
    Q = 0.5 * H - sigma * np.eye(grid.dim + 1)
    weight = CarlemanWeight(y0=y0, b=g, Q=Q, sigma=sigma,
                            kappa=0.0, delta=0.0, R=0.0)

    coords = _spacetime_coords(grid, np.ones(grid.shape_spacetime, dtype=bool))
    psi_flat = (psi_st - psi_st[y0_index]).ravel()
    phi_flat = weight(coords)
    dist = np.linalg.norm(coords - y0, axis=1)
    anchor_flat = int(np.ravel_multi_index(y0_index, grid.shape_spacetime))
    kappa_min = 4.0 * float(steps.max())

    chosen_kappa = None
    violating = None
    for kappa in kappa_search:
        if kappa < kappa_min:
            break
        ball = dist <= kappa
        bad = ball & (psi_flat <= 0) & (phi_flat >= 0)
        bad[anchor_flat] = False
        if not bad.any():
            chosen_kappa = float(kappa)
            break
        violating = coords[np.flatnonzero(bad)[0]]
    if chosen_kappa is None:
        raise GeometryError(
            "support condition failed for every kappa in the search range; "
            f"first violating node near {violating}; increase sigma")

    if R is None:
        R = chosen_kappa / 4.0
    if not R < chosen_kappa / 2.0:
        raise GeometryError("support radius R must satisfy R < kappa / 2")
    ball = dist <= chosen_kappa
    base = ball & (psi_flat <= 0)
    delta = float(np.abs(phi_flat[ball]).max()) or 1.0
    chosen_delta = 0.0
    for _ in range(delta_scan):
        inside = base & (phi_flat >= -8.0 * delta)
        if inside.any() and dist[inside].max() > R:
            delta *= 0.5
            continue
        chosen_delta = delta
        break
    if chosen_delta == 0.0:
        raise GeometryError("no dyadic delta satisfies the localization condition")
    return CarlemanWeight(y0=y0, b=g, Q=Q, sigma=sigma, kappa=chosen_kappa,
                          delta=chosen_delta, R=float(R))


def construct_weight(psi, y0_index: tuple, R: float = None, grid: Grid = None,
                     kappa_max: float = None, max_doublings: int = 10) -> CarlemanWeight:
    """Standard-sigma wrapper: start at 2 ||Hess psi(y0)|| + 1 and double on
    failure, up to max_doublings."""
    if isinstance(psi, PsiFunction):
        grid = psi.grid
        psi_st = psi.values_spacetime()
    else:
        psi_st = np.asarray(psi, dtype=float)
    steps = np.asarray(grid.spacing + (grid.time_step,))
    _, H = _fd_gradient_hessian(psi_st, y0_index, steps)
    sigma = 2.0 * np.linalg.norm(H, 2) + 1.0
    if kappa_max is None:
        kappa_max = 0.25 * min(grid.extents + (2 * grid.time_horizon,))
    last_err = None
    for _ in range(max_doublings + 1):
        kappas = kappa_max * 0.5 ** np.arange(12)
        try:
            return build_carleman_weight(psi, y0_index, sigma, kappas, R=R, grid=grid)
        except GeometryError as err:
            last_err = err
            sigma *= 2.0
    raise GeometryError(f"no convexification sigma found: {last_err}")


# ---------------------------------------------------------------------------
# domain-chain validator
# ---------------------------------------------------------------------------

def validate_domain_chain(grid: Grid, chain, support_mask: np.ndarray,
                          upsilon: np.ndarray, speeds, metric: MetricField = None):
    """Check the multi-domain propagation conditions for a user-supplied chain.

    ``chain`` is a list of dicts with keys psi (PsiFunction), omega0
    (space-time bool), psi_min, psi_max.  Returns a list of clause reports;
    all-clear when every clause holds.
    """
    reports = []
    omegas = []
    cum_prev = np.zeros(grid.shape_spacetime, dtype=bool)
    for j, link in enumerate(chain):
        psi, omega0 = link["psi"], np.asarray(link["omega0"], dtype=bool)
        psi_min, psi_max = float(link["psi_min"]), float(link["psi_max"])
        vals = psi.values_spacetime()
        entry = {"j": j}
        margin = check_noncharacteristic(
            psi, speeds, metric, DomainMask(grid, omega0), h=0.0)
        entry["noncharacteristic"] = margin.min_margin > 0
        entry["min_margin"] = margin.min_margin
        upsilon_j = omega0 & (cum_prev | upsilon)
        above = omega0 & (vals > psi_max)
        from scipy import ndimage
        closure_yj = ndimage.binary_dilation(
            upsilon_j, structure=ndimage.generate_binary_structure(upsilon_j.ndim, 1))
        entry["support_clear"] = not (support_mask & upsilon).any()
        entry["top_level_nonempty"] = bool(above.any())
        entry["top_level_in_upsilon"] = bool((above & ~closure_yj).sum() == 0)
        omega_j = (omega0 & ~closure_yj) & (vals > psi_min)
        entry["omega_nonempty"] = bool(omega_j.any())
        bd0 = _boundary_spacetime(omega0)
        if omega_j.any() and bd0.any():
            pa = _spacetime_coords(grid, omega_j)
            pb = _spacetime_coords(grid, bd0)
            entry["dist_to_shell"] = float(cKDTree(pb).query(pa)[0].min())
            entry["positive_distance"] = entry["dist_to_shell"] > 0
        else:
            entry["positive_distance"] = False
        omegas.append(omega_j)
        cum_prev |= omega_j
        reports.append(entry)
    union = np.zeros(grid.shape_spacetime, dtype=bool)
    for om in omegas:
        union |= om
    from scipy import ndimage
    closure = ndimage.binary_dilation(
        union, structure=ndimage.generate_binary_structure(union.ndim, 1))
    _, pieces = ndimage.label(closure, structure=ndimage.generate_binary_structure(union.ndim, 1))
    ok_all = bool(union.any()) and pieces == 1
    return {"links": reports, "union_connected": ok_all}
