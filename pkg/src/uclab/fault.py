"""Explicit elastodynamics with a kinematic split-node fault.

Bilinear quadrilateral elements on the scene grid carry the prestressed
stiffness; mass is row-sum lumped.  Interior fault nodes are duplicated: the
copies belong to the elements above and below the fault line respectively.
Each leapfrog step first advances both copies freely and then applies the
interface traction that enforces the prescribed tangential jump and zero
normal jump exactly (traction-at-split-node).  The exterior boundary is
traction free (natural condition of the weak form).

The interface traction acts with opposite signs on the two copies, so the
traction balance holds by construction; with the jump held constant it does
no work, which keeps the discrete energy conserved after the slip pulse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CFLError, GeometryError
from .grids import Grid, SpaceTimeField
from .rupture import FaultLine, RuptureScene
from . import freq

_GAUSS = 1.0 / np.sqrt(3.0)
_GPTS = [(-_GAUSS, -_GAUSS), (_GAUSS, -_GAUSS), (_GAUSS, _GAUSS), (-_GAUSS, _GAUSS)]
_CORNERS = [(-1, -1), (1, -1), (1, 1), (-1, 1)]  # local node order


def _shape_gradients(hx, hy):
    """Physical shape-function gradients at the four Gauss points: (4, 4, 2)."""
    out = np.zeros((4, 4, 2))
    for gi, (xi, eta) in enumerate(_GPTS):
        for a, (xa, ya) in enumerate(_CORNERS):
            out[gi, a, 0] = 0.25 * xa * (1 + ya * eta) * (2.0 / hx)
            out[gi, a, 1] = 0.25 * ya * (1 + xa * xi) * (2.0 / hy)
    return out


@dataclass
class SplitNodeDofs:
    n_base: int
    n_total: int
    pair_base: np.ndarray    # flat node ids of duplicated fault nodes (minus copy)
    pair_plus: np.ndarray    # appended ids of the plus copies


def _fault_dofs(grid: Grid, fault: FaultLine) -> SplitNodeDofs:
    nx, ny = grid.shape
    base = fault.interior_cols * ny + fault.row
    plus = nx * ny + np.arange(len(base))
    return SplitNodeDofs(n_base=nx * ny, n_total=nx * ny + len(base),
                         pair_base=base, pair_plus=plus)


def _corner_ids(grid: Grid, fault: FaultLine, dofs: SplitNodeDofs):
    """Node ids of the 4 corners of every element, with fault-row corners of
    elements above the fault redirected to the plus copies."""
    nx, ny = grid.shape
    ex, ey = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ex, ey = ex.ravel(), ey.ravel()
    corners = np.stack([
        ex * ny + ey,
        (ex + 1) * ny + ey,
        (ex + 1) * ny + ey + 1,
        ex * ny + ey + 1,
    ], axis=1)
    lookup = np.full(dofs.n_base, -1, dtype=int)
    lookup[dofs.pair_base] = dofs.pair_plus
    above = ey >= fault.row
    for a in range(4):
        ids = corners[:, a]
        redirect = above & (lookup[ids] >= 0) & (ids % ny == fault.row)
        corners[redirect, a] = lookup[ids[redirect]]
    return corners


def assemble_stiffness(scene: RuptureScene, dofs: SplitNodeDofs) -> sp.csr_matrix:
    grid = scene.grid
    hx, hy = grid.spacing
    detj = 0.25 * hx * hy
    grads = _shape_gradients(hx, hy)  # (gauss, a, axis)
    nx, ny = grid.shape
    # tensor at element centres (acceptance scenes are constant anyway)
    lam = 0.25 * (scene.material.lam[:-1, :-1] + scene.material.lam[1:, :-1]
                  + scene.material.lam[:-1, 1:] + scene.material.lam[1:, 1:])
    mu = 0.25 * (scene.material.mu[:-1, :-1] + scene.material.mu[1:, :-1]
                 + scene.material.mu[:-1, 1:] + scene.material.mu[1:, 1:])
    p0 = 0.25 * (scene.material.p0[:-1, :-1] + scene.material.p0[1:, :-1]
                 + scene.material.p0[:-1, 1:] + scene.material.p0[1:, 1:])
    lam, mu, p0 = lam.ravel(), mu.ravel(), p0.ravel()
    d = np.eye(2)
    lam_t = np.zeros((2, 2, 2, 2, lam.size))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    lam_t[i, j, k, l] = (lam * d[i, j] * d[k, l]
                                         + mu * (d[i, k] * d[j, l] + d[i, l] * d[j, k])
                                         - p0 * (d[i, j] * d[k, l] - d[i, l] * d[j, k]))
    # K_e[(a,i),(b,k)] = sum_g detj L_ijkl dphi_a/dx_j dphi_b/dx_l
    ke = np.einsum("ijkle,gaj,gbl->eaibk", lam_t, grads, grads) * detj
    corners = _corner_ids(grid, scene.fault, dofs)
    nelem = corners.shape[0]
    rows = (2 * corners[:, :, None, None, None]
            + np.arange(2)[None, None, :, None, None]
            + np.zeros((1, 1, 1, 4, 2), dtype=int))
    cols = (2 * corners[:, None, None, :, None]
            + np.zeros((1, 4, 2, 1, 1), dtype=int)
            + np.arange(2)[None, None, None, None, :])
    K = sp.coo_matrix(
        (ke.reshape(nelem, 4, 2, 4, 2).ravel(),
         (rows.ravel(), np.broadcast_to(cols, rows.shape).ravel())),
        shape=(2 * dofs.n_total, 2 * dofs.n_total))
    return K.tocsr()


def assemble_lumped_mass(scene: RuptureScene, dofs: SplitNodeDofs) -> np.ndarray:
    grid = scene.grid
    hx, hy = grid.spacing
    rho = 0.25 * (scene.material.rho[:-1, :-1] + scene.material.rho[1:, :-1]
                  + scene.material.rho[:-1, 1:] + scene.material.rho[1:, 1:]).ravel()
    corners = _corner_ids(grid, scene.fault, dofs)
    mass = np.zeros(dofs.n_total)
    contrib = rho * hx * hy / 4.0
    for a in range(4):
        np.add.at(mass, corners[:, a], contrib)
    return np.repeat(mass, 2)


def stable_time_step(K: sp.csr_matrix, mass: np.ndarray, safety: float = 0.9,
                     iterations: int = 80) -> float:
    """Leapfrog limit 2 / sqrt(lambda_max(M^-1 K)) by power iteration."""
    inv = 1.0 / mass
    x = np.ones(K.shape[0])
    x /= np.linalg.norm(x)
    lam = 1.0
    for _ in range(iterations):
        y = inv * (K @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            raise GeometryError("degenerate stiffness")
        x = y / lam
    return safety * 2.0 / np.sqrt(lam)


@dataclass
class SlipSource:
    """Prescribed tangential slip: amplitude * profile(arc) * ramp(t).

    The profile is a smooth compactly supported bump over the fault segment;
    the ramp rises from 0 to 1 over rise_time and stays, so the slip is
    permanent and the slip rate is a single smooth pulse."""

    amplitude: float
    rise_time: float
    profile_alpha: float = 0.5
    plateau_fraction: float = 0.4

    def profile(self, arc, x_lo, x_hi):
        span = x_hi - x_lo
        pad = 0.5 * (1 - self.plateau_fraction) * span
        bump = freq.make_gevrey_bump(
            self.profile_alpha, (x_lo + pad, x_hi - pad), (x_lo, x_hi),
            check_decay=False)
        return bump(arc)

    def ramp(self, t):
        return freq.gevrey_ramp(np.asarray(t, dtype=float) / self.rise_time, 0.5)

    def ramp_rate(self, t):
        return freq.gevrey_ramp_derivative(
            np.asarray(t, dtype=float) / self.rise_time, 0.5) / self.rise_time

    def slip(self, arc, x_lo, x_hi, t):
        return self.amplitude * np.outer(self.profile(arc, x_lo, x_hi),
                                         self.ramp(t))

    def slip_rate(self, arc, x_lo, x_hi, t):
        return self.amplitude * np.outer(self.profile(arc, x_lo, x_hi),
                                         self.ramp_rate(t))


@dataclass
class FaultSolution:
    """Forward rupture simulation output on [0, T]; the field vanishes for
    t < 0 (causal source)."""

    scene: RuptureScene
    times: np.ndarray            # output samples on [0, T]
    field: np.ndarray            # (2, nx, ny, n_out), minus copy on the fault row
    u_plus: np.ndarray           # (nF, 2, n_out) including the end nodes
    u_minus: np.ndarray
    multiplier: np.ndarray       # interface traction estimate (nF_int, 2, n_out)
    energy_times: np.ndarray
    energy: np.ndarray
    dt_sim: float

    def spacetime_field(self) -> SpaceTimeField:
        """Full field on [-T, T] with zeros before the rupture starts."""
        g = self.scene.grid
        out = np.zeros((2,) + g.shape + (g.nt,))
        idx = g.t0_index + np.arange(len(self.times))
        out[..., idx] = self.field
        return SpaceTimeField(g, out, check_finite=False)


def solve_elastic_fault(scene: RuptureScene, source: SlipSource,
                        output_dt: float = None) -> FaultSolution:
    """March the split-node scheme from rest over [0, T].

    The prescribed jump must vanish at t <= 0; the pre-rupture field is zero.
    Outputs are sampled every `output_dt` (snapped to a whole number of
    internal steps).
    """
    grid = scene.grid
    fault = scene.fault
    dofs = _fault_dofs(grid, fault)
    K = assemble_stiffness(scene, dofs)
    mass = assemble_lumped_mass(scene, dofs)
    T = grid.time_horizon
    dt_max = stable_time_step(K, mass)
    if output_dt is None:
        output_dt = grid.time_step
    stride = max(1, int(np.ceil(output_dt / dt_max)))
    dt = output_dt / stride
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9:
        raise GeometryError("output_dt must divide the time horizon")

    arc = fault.arc_coords(grid)
    arc_int = grid.axis_coords(0)[fault.interior_cols]
    if np.abs(source.slip(arc_int, fault.x_lo, fault.x_hi, np.array([0.0, -2 * dt]))).max() > 0:
        raise GeometryError("slip source must vanish for t <= 0")

    base = dofs.pair_base
    plus = dofs.pair_plus
    bx, by = 2 * base, 2 * base + 1
    px, py = 2 * plus, 2 * plus + 1
    m_minus = mass[bx]
    m_plus = mass[px]
    area = grid.spacing[0]
    tsn_factor = dt ** 2 * area * (1.0 / m_plus + 1.0 / m_minus)

    n_out = n_steps // stride + 1
    nxny = grid.shape
    field = np.zeros((2,) + nxny + (n_out,))
    u_plus_hist = np.zeros((len(arc), 2, n_out))
    u_minus_hist = np.zeros((len(arc), 2, n_out))
    multiplier = np.zeros((len(base), 2, n_out))
    energy = np.zeros(n_steps)

    u_prev = np.zeros(2 * dofs.n_total)
    u_curr = np.zeros(2 * dofs.n_total)
    inv_mass = 1.0 / mass

    def record(k_out, u, lam_vec):
        arr = u[: 2 * dofs.n_base].reshape(dofs.n_base, 2)
        field[0, :, :, k_out] = arr[:, 0].reshape(nxny)
        field[1, :, :, k_out] = arr[:, 1].reshape(nxny)
        cols = fault.all_cols
        flat = cols * grid.shape[1] + fault.row
        um = arr[flat]
        up = um.copy()
        upx = u[px]
        upy = u[py]
        up[1:-1, 0] = upx
        up[1:-1, 1] = upy
        u_minus_hist[:, :, k_out] = um
        u_plus_hist[:, :, k_out] = up
        if lam_vec is not None:
            multiplier[:, :, k_out] = lam_vec

    record(0, u_curr, None)
    lam_now = np.zeros((len(base), 2))
    for step in range(1, n_steps + 1):
        t_new = step * dt
        force = -(K @ u_curr)
        if step == 1:
            u_next = u_curr + 0.5 * dt ** 2 * inv_mass * force
        else:
            u_next = 2 * u_curr - u_prev + dt ** 2 * inv_mass * force
        # interface traction enforcing the prescribed jump at t_new
        target_t = (source.slip(arc_int, fault.x_lo, fault.x_hi,
                                np.array([t_new]))[:, 0])
        jump_x = u_next[px] - u_next[bx]
        jump_y = u_next[py] - u_next[by]
        lam_x = (jump_x - target_t) / tsn_factor
        lam_y = (jump_y - 0.0) / tsn_factor
        u_next[px] -= dt ** 2 * area / m_plus * lam_x
        u_next[py] -= dt ** 2 * area / m_plus * lam_y
        u_next[bx] += dt ** 2 * area / m_minus * lam_x
        u_next[by] += dt ** 2 * area / m_minus * lam_y
        lam_now = np.stack([lam_x, lam_y], axis=1)
        # conserved leapfrog energy with the velocity at the half step
        vel = (u_next - u_curr) / dt
        energy[step - 1] = 0.5 * float(np.sum(mass * vel ** 2)) \
            + 0.5 * float(u_next @ (K @ u_curr))
        u_prev, u_curr = u_curr, u_next
        if step % 200 == 0 and not np.isfinite(u_curr).all():
            raise CFLError(f"fault march lost finiteness at step {step}")
        if step % stride == 0:
            record(step // stride, u_curr, lam_now)
    if not np.isfinite(field).all():
        raise CFLError("fault march lost finiteness")
    times = np.arange(n_out) * output_dt
    return FaultSolution(scene=scene, times=times, field=field,
                         u_plus=u_plus_hist, u_minus=u_minus_hist,
                         multiplier=multiplier,
                         energy_times=np.arange(1, n_steps + 1) * dt,
                         energy=energy, dt_sim=dt)
