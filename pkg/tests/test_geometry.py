"""Distance maps, continuation domains, level-set margins, nets, weights."""

import numpy as np
import pytest

from uclab.errors import GeometryError
from uclab.grids import Grid, MetricField, RegionMask, interval_mask, rect_mask
from uclab import geometry as geo


def grid1d(nx=301, L=3.0, T=3.0, half=300):
    return Grid(1, (L,), (nx,), T, half)


def scene1d(nx=301, L=3.0, T=3.0, half=300, u=(1.2, 1.8)):
    g = grid1d(nx, L, T, half)
    M = g.full_mask()
    U = interval_mask(g, *u, label="U")
    d_dU = geo.compute_distance_map(g, None, RegionMask(g, U.boundary()).values)
    d_dM = geo.compute_distance_map(g, None, M.boundary())
    d_U = geo.compute_distance_map(g, None, U.values)
    return g, M, U, d_dU, d_dM, d_U


class TestDistanceMaps:
    def test_point_source_accuracy_2d(self):
        g = Grid(2, (1.0, 1.0), (101, 101), 0.1, 2)
        target = np.zeros(g.shape, dtype=bool)
        target[50, 50] = True
        d = geo.compute_distance_map(g, None, target)
        X, Y = g.coordinate_arrays()
        exact = np.hypot(X - 0.5, Y - 0.5)
        mask = exact > 5 * g.spacing[0]
        rel = np.abs(d - exact)[mask] / exact[mask]
        assert rel.max() <= 0.03

    def test_rectangle_boundary_exact(self):
        g = Grid(2, (1.0, 2.0), (41, 81), 0.1, 2)
        M = g.full_mask()
        d = geo.compute_distance_map(g, None, M.boundary())
        X, Y = g.coordinate_arrays()
        exact = np.minimum.reduce([X, 1.0 - X, Y, 2.0 - Y])
        np.testing.assert_allclose(d, exact, atol=1e-12)

    def test_metric_doubling_doubles_distances(self):
        g = Grid(2, (1.0, 1.0), (31, 31), 0.1, 2)
        target = np.zeros(g.shape, dtype=bool)
        target[3, 4] = True
        gl = np.zeros((2, 2) + g.shape)
        gl[0, 0] = gl[1, 1] = 1.0
        gl[0, 1] = gl[1, 0] = 0.3
        m1 = MetricField(g, np.linalg.inv([[1.0, 0.3], [0.3, 1.0]])[..., None, None]
                         * np.ones((2, 2) + g.shape))
        m4 = MetricField(g, np.linalg.inv([[4.0, 1.2], [1.2, 4.0]])[..., None, None]
                         * np.ones((2, 2) + g.shape))
        d1 = geo.compute_distance_map(g, m1, target)
        d4 = geo.compute_distance_map(g, m4, target)
        np.testing.assert_allclose(d4, 2.0 * d1, rtol=1e-12, atol=1e-12)

    def test_zero_on_target_and_triangle(self):
        g = Grid(2, (1.0, 1.0), (21, 21), 0.1, 2)
        picks = [(2, 3), (15, 10), (7, 18)]
        maps = []
        for p in picks:
            t = np.zeros(g.shape, dtype=bool)
            t[p] = True
            maps.append(geo.compute_distance_map(g, None, t))
            assert maps[-1][p] == 0.0
        dab = maps[0][picks[1]]
        dbc = maps[1][picks[2]]
        dac = maps[0][picks[2]]
        assert dac <= dab + dbc + 1e-12

    def test_disconnected_gets_inf(self):
        g = Grid(1, (1.0,), (21,), 0.1, 2)
        x = g.axis_coords(0)
        within = (x < 0.4) | (x > 0.6)
        target = np.zeros(g.shape, dtype=bool)
        target[0] = True
        d = geo.compute_distance_map(g, None, target, within=within)
        assert np.isinf(d[x > 0.6]).all()


def brute_force_omega(g, Mv, Uv, d_dU, d_dM, v, T, h):
    """Independent per-node re-evaluation of the shrunken-cone membership."""
    t = g.times()
    out = np.zeros(g.shape_spacetime, dtype=bool)
    for flat in range(Mv.size):
        idx = np.unravel_index(flat, g.shape)
        if not Mv[idx] or Uv[idx]:
            continue
        if not d_dM[idx] > h:
            continue
        for k in range(g.nt):
            if v * T - v * abs(t[k]) - d_dU[idx] > np.sqrt(h):
                out[idx + (k,)] = True
    return out


class TestOmegaDomains:
    def test_membership_example(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=151, half=60)
        om = geo.build_omega_v(M, U, d_dU, d_dM, v=1.0, T=3.0, h=0.04)
        ix = int(np.argmin(np.abs(g.axis_coords(0) - 0.5)))
        it = g.t0_index
        assert om.values[ix, it]
        assert not om.values[:, 0].any() and not om.values[:, -1].any()

    def test_equals_brute_force_oracle(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=101, half=40)
        om = geo.build_omega_v(M, U, d_dU, d_dM, v=1.0, T=3.0, h=0.05)
        oracle = brute_force_omega(g, M.values, U.values, d_dU, d_dM, 1.0, 3.0, 0.05)
        np.testing.assert_array_equal(om.values, oracle)

    def test_omega_v0_membership_and_empty(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=151, half=60)
        om0 = geo.build_omega_v0(M, U, d_dU, d_dM, v=1.0, T=3.0, h=0.04)
        ix = int(np.argmin(np.abs(g.axis_coords(0) - 0.5)))
        assert om0.values[ix]
        tiny_T = geo.build_omega_v0(M, U, d_dU, d_dM, v=1.0, T=0.01, h=0.04)
        assert tiny_T.is_empty()

    def test_mask_monotonicity_in_h(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=151, half=60)
        om_small = geo.build_omega_v(M, U, d_dU, d_dM, 1.0, 3.0, h=0.02)
        om_large = geo.build_omega_v(M, U, d_dU, d_dM, 1.0, 3.0, h=0.08)
        assert not (om_large.values & ~om_small.values).any()

    def test_contained_in_double_cone(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=151, half=60)
        om = geo.build_omega_v(M, U, d_dU, d_dM, 1.0, 3.0, h=0.04)
        K = geo.build_double_cone(M, d_U, T=3.0, v=1.0)
        assert not (om.values & ~K.values).any()
        # every member satisfies the cone inequality with the same speed
        t = np.abs(g.times())
        ineq = d_U[..., None] < 1.0 * (3.0 - t)[None, :]
        assert not (om.values & ~ineq).any()

    def test_rejects_nonpositive_h(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=101, half=40)
        with pytest.raises(GeometryError):
            geo.build_omega_v(M, U, d_dU, d_dM, 1.0, 3.0, h=0.0)

    def test_gap_scales_like_sqrt_h(self):
        g, M, U, d_dU, d_dM, d_U = scene1d(nx=601, half=600)
        K = geo.build_double_cone(M, d_U, T=3.0, v=1.0)
        hs = np.array([0.01, 0.03, 0.1])
        gaps = []
        for h in hs:
            om = geo.build_omega_v(M, U, d_dU, d_dM, 1.0, 3.0, h=h)
            gaps.append(geo.boundary_gap(om, K, U))
        slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
        assert 0.35 <= slope <= 0.65


class TestNoncharacteristic:
    def setup_scene(self, nx=201, T=1.2):
        g = Grid(1, (2.0,), (nx,), T, nx)
        psi = geo.PsiFunction(g, "flat", (1.0,), T=T, v=1.0)
        return g, psi

    def test_flat_margin_near_4h(self):
        g, psi = self.setup_scene()
        h = 0.05
        region = psi.level_region(h)
        rep = geo.check_noncharacteristic(psi, [1.0], None, region, h)
        hx = g.spacing[0]
        assert 4 * h - 5 * hx <= rep.min_margin <= 4 * h + 5 * hx
        assert rep.excluded_nodes < 0.01 * rep.region_nodes

    def test_two_speed_margin_grows(self):
        g, psi = self.setup_scene()
        h = 0.05
        region = psi.level_region(h)
        rep1 = geo.check_noncharacteristic(psi, [1.0, 1.0], None, region, h)
        rep2 = geo.check_noncharacteristic(psi, [1.0, 2.0], None, region, h)
        assert rep2.min_margin >= rep1.min_margin - 1e-12
        assert rep2.per_component_min[1] > rep2.per_component_min[0]

    def test_matches_scalar_loop_oracle(self):
        g = Grid(2, (2.0, 2.0), (41, 41), 1.0, 20)
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 2))
        spd = a @ a.T + 2 * np.eye(2)
        gu = np.linalg.inv(spd)
        metric = MetricField(g, gu[..., None, None] * np.ones((2, 2) + g.shape))
        target = np.zeros(g.shape, dtype=bool)
        target[20, 20] = True
        d = geo.compute_distance_map(g, metric, target)
        psi = geo.PsiFunction(g, "geodesic", (1.0, 1.0), T=1.0, v=1.0,
                              d=d, metric=metric)
        h = 0.05
        region = psi.level_region(h)
        speeds = [1.0, 1.3]
        rep = geo.check_noncharacteristic(psi, speeds, metric, region, h)

        # scalar re-derivation over every region node, same rule set
        hx, hy = g.spacing
        t = g.times()
        dmap = psi.d
        best = np.inf
        for i in range(1, 40):
            for j in range(1, 40):
                gx = (dmap[i + 1, j] - dmap[i - 1, j]) / (2 * hx)
                gy = (dmap[i, j + 1] - dmap[i, j - 1]) / (2 * hy)
                q = (gu[0, 0] * gx * gx + 2 * gu[0, 1] * gx * gy + gu[1, 1] * gy * gy)
                if abs(np.sqrt(q) - 1.0) > geo.EIKONAL_FLAG_TOL:
                    continue
                R = 1.0 - dmap[i, j]
                for k in range(g.nt):
                    if R * R - t[k] ** 2 <= h:
                        continue
                    for v in speeds:
                        m = v * v * (2 * R) ** 2 * q - (2 * t[k]) ** 2
                        best = min(best, m)
        assert abs(rep.min_margin - best) < 1e-10


class TestSeparatedNet:
    def line_region(self):
        g = Grid(1, (1.0,), (51,), 0.1, 10)
        member = np.zeros(g.shape_spacetime, dtype=bool)
        member[:, g.t0_index] = True
        region = geo.DomainMask(g, member)
        x = g.axis_coords(0)
        psi = np.broadcast_to(x[:, None], g.shape_spacetime).copy()
        return g, region, psi

    def test_greedy_line_example(self):
        g, region, psi = self.line_region()
        net = geo.build_separated_net(region, psi, r=0.4)
        assert net.size == 6
        np.testing.assert_allclose(sorted(net.points[:, 0]),
                                   [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], atol=1e-12)
        assert (np.diff(net.psi_values) <= 1e-12).all()

    def test_invariants_on_constant_psi(self):
        g, region, psi = self.line_region()
        net = geo.build_separated_net(region, np.ones_like(psi), r=0.3)
        assert net.min_separation() >= 0.15 - 1e-12
        coords = geo._spacetime_coords(g, region.values)
        assert net.covering_radius(coords) <= 0.15 + 1e-12

    def test_packing_inequality_2d(self):
        g = Grid(1, (2.0,), (81,), 1.0, 40)
        X = g.coordinate_arrays()[0]
        t = g.times()
        member = ((X[:, None] - 1.0) ** 2 + t[None, :] ** 2 < 0.5) \
            & (X[:, None] > 0.3) & (X[:, None] < 1.7) & (np.abs(t)[None, :] < 0.7)
        region = geo.DomainMask(g, member)
        rng = np.random.default_rng(0)
        psi = rng.normal(size=g.shape_spacetime)
        net = geo.build_separated_net(region, psi, r=0.25)
        check = geo.net_packing_check(net, region)
        assert check["holds"]

    def test_radius_too_small_rejected(self):
        g, region, psi = self.line_region()
        with pytest.raises(GeometryError):
            geo.build_separated_net(region, psi, r=0.01)


class TestCarlemanWeight:
    def test_linear_psi_any_kappa(self):
        g = Grid(1, (2.0,), (81,), 1.0, 40)
        X = g.coordinate_arrays()[0]
        t = g.times()
        psi = X[:, None] - 1.0 + 0.0 * t[None, :]
        w = geo.build_carleman_weight(psi, (40, g.t0_index), sigma=1.0,
                                      kappa_search=[0.8, 0.4, 0.2], grid=g)
        assert w.kappa == 0.8
        np.testing.assert_allclose(w.hessian(), -2.0 * np.eye(2), atol=1e-9)
        coords = np.array([[1.0, 0.0]])
        assert abs(w(coords)[0]) < 1e-14

    def test_anchor_and_hessian_readback(self):
        g = Grid(1, (2.0,), (161,), 1.2, 120)
        psi_fn = geo.PsiFunction(g, "flat", (0.6,), T=1.2, v=1.0)
        # anchor on the zero level set away from the cut locus
        vals = psi_fn.values_spacetime()
        ix = 120
        it = int(np.argmin(np.abs(vals[ix])))
        w = geo.construct_weight(psi_fn, (ix, it))
        y0 = w.y0[None, :]
        assert abs(w(y0)[0]) < 1e-14
        steps = np.asarray(g.spacing + (g.time_step,))
        _, H = geo._fd_gradient_hessian(vals, (ix, it), steps)
        np.testing.assert_allclose(w.hessian(), H - 2 * w.sigma * np.eye(2),
                                   atol=1e-10)
        assert w.kappa > 0 and w.delta > 0

    def test_delta_monotone_in_R(self):
        g = Grid(1, (2.0,), (161,), 1.2, 120)
        psi_fn = geo.PsiFunction(g, "flat", (0.6,), T=1.2, v=1.0)
        vals = psi_fn.values_spacetime()
        ix = 120
        it = int(np.argmin(np.abs(vals[ix])))
        steps = np.asarray(g.spacing + (g.time_step,))
        _, H = geo._fd_gradient_hessian(vals, (ix, it), steps)
        sigma = 2 * np.linalg.norm(H, 2) + 1
        kappas = 0.5 * 0.5 ** np.arange(8)
        deltas = []
        base = geo.build_carleman_weight(psi_fn, (ix, it), sigma, kappas)
        for R in (base.kappa / 4, base.kappa / 8, base.kappa / 16):
            w = geo.build_carleman_weight(psi_fn, (ix, it), sigma, [base.kappa], R=R)
            deltas.append(w.delta)
        assert all(d2 <= d1 + 1e-15 for d1, d2 in zip(deltas, deltas[1:]))

    def test_time_dilation_consistency(self):
        # replacing T by T/a and v by a*v dilates time: a^2 psi_2(x, t/a)
        # reproduces psi_1(x, t) exactly, so all level sets match under t -> t/a
        g = Grid(1, (2.0,), (81,), 1.0, 40)
        psi1 = geo.PsiFunction(g, "flat", (1.0,), T=1.0, v=1.0)
        a = 2.0
        g2 = Grid(1, (2.0,), (81,), 1.0 / a, 40)
        psi2 = geo.PsiFunction(g2, "flat", (1.0,), T=1.0 / a, v=a)
        np.testing.assert_allclose(psi1.values_spacetime(),
                                   a ** 2 * psi2.values_spacetime(), atol=1e-12)
        h = 0.05
        np.testing.assert_array_equal(psi1.values_spacetime() > h,
                                      psi2.values_spacetime() > h / a ** 2)
