"""Explicit solver tests: CFL bookkeeping, convergence, propagation, symmetry."""

import numpy as np
import pytest

from uclab.errors import CFLError
from uclab.grids import Grid, MetricField, SpaceTimeField, spacetime_mask
from uclab import forward, ops


def box_grid(nx, T=1.0, courant=0.9, L=np.pi, speed=1.0):
    h = L / (nx - 1)
    dt_target = courant * h / speed
    half = int(np.ceil(T / dt_target))
    return Grid(1, (L,), (nx,), T, half)


class TestCFL:
    def test_formula_1d(self):
        g = Grid(1, (1.0,), (101,), 1.0, 200)
        sys = forward.scalar_wave_system(g, speed=1.0)
        bound = forward.cfl_check(sys)
        assert abs(bound - 0.9 * 0.01) < 1e-12
        assert g.cfl["dt_bound"] == bound

    def test_doubling_speed_halves_bound(self):
        g = Grid(1, (1.0,), (101,), 1.0, 200)
        b1 = forward.cfl_check(forward.scalar_wave_system(g, 1.0))
        b2 = forward.cfl_check(forward.scalar_wave_system(g, 2.0))
        assert abs(b2 - b1 / 2) < 1e-14

    def test_anisotropic_metric_scaling(self):
        g = Grid(2, (1.0, 1.0), (21, 21), 0.5, 100)
        ident = forward.HyperbolicSystem(g, 1, np.array([1.0]))
        stretched = forward.HyperbolicSystem(
            g, 1, np.array([1.0]),
            metric=MetricField.diagonal(g, [4.0 * np.ones(g.shape),
                                            1.0 * np.ones(g.shape)]))
        b_id = forward.cfl_check(ident)
        b_st = forward.cfl_check(stretched)
        assert abs(b_st - b_id / 2.0) < 1e-14

    def test_violation_raises(self):
        g = Grid(1, (1.0,), (101,), 1.0, 50)  # dt = 0.02 >> h = 0.01
        sys = forward.scalar_wave_system(g, 1.0)
        with pytest.raises(CFLError):
            forward.solve_forward(sys)


class TestStandingWave:
    def solve(self, nx):
        g = box_grid(nx, T=1.0)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        u = forward.solve_forward(sys, initial=(np.sin(x)[None], np.zeros((1, nx))))
        exact = np.sin(x)[None, :, None] * np.cos(g.times())[None, None, :]
        err = SpaceTimeField(g, u.values - exact, check_finite=False)
        region = spacetime_mask(g.full_mask())
        return ops.norm(err, "L2", region), g.spacing[0]

    def test_second_order_convergence(self):
        e1, h1 = self.solve(51)
        e2, h2 = self.solve(101)
        order = np.log(e1 / e2) / np.log(h1 / h2)
        assert order >= 1.8

    def test_symmetric_in_time(self):
        # cosine-in-time data: the field must be exactly time-symmetric
        g = box_grid(41, T=0.5)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        u = forward.solve_forward(sys, initial=(np.sin(x)[None], np.zeros((1, 41))))
        np.testing.assert_allclose(u.values, u.values[..., ::-1], atol=1e-12)


class TestBasics:
    def test_zero_data_zero_field(self):
        g = box_grid(31, T=0.3)
        sys = forward.scalar_wave_system(g, 1.0)
        u = forward.solve_forward(sys)
        assert np.abs(u.values).max() == 0.0

    def test_linearity(self):
        g = box_grid(31, T=0.3)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        bump = np.exp(-40 * (x - 1.5) ** 2)[None]
        za = forward.solve_forward(sys, initial=(bump, 0 * bump))
        zb = forward.solve_forward(sys, initial=(0 * bump, bump))
        zc = forward.solve_forward(sys, initial=(2 * bump, -3 * bump))
        np.testing.assert_allclose(zc.values, 2 * za.values - 3 * zb.values,
                                   atol=1e-12)

    def test_determinism_bitwise(self):
        g = box_grid(31, T=0.3)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        bump = np.exp(-40 * (x - 1.5) ** 2)[None]
        a = forward.solve_forward(sys, initial=(bump, 0 * bump))
        b = forward.solve_forward(sys, initial=(bump, 0 * bump))
        assert (a.values == b.values).all()

    def test_source_term(self):
        # manufactured: u = sin(x) sin(t)^2 needs f = P u
        g = box_grid(81, T=0.5)
        sys = forward.scalar_wave_system(g, 1.0)
        x, t = g.axis_coords(0), g.times()
        exact = np.sin(x)[None, :, None] * (np.sin(t) ** 2)[None, None, :]
        f = np.sin(x)[None, :, None] * (2 * np.cos(2 * t))[None, None, :] \
            + np.sin(x)[None, :, None] * (np.sin(t) ** 2)[None, None, :]
        src = SpaceTimeField(g, f)
        u = forward.solve_forward(sys, source=src,
                                  initial=(np.zeros((1, 81)), np.zeros((1, 81))))
        err = np.abs(u.values - exact).max()
        assert err < 5e-3


class TestPropagationSpeeds:
    def test_per_component_support_radius(self):
        L, T = 4.0, 0.8
        nx = 321
        h = L / (nx - 1)
        g = Grid(1, (L,), (nx,), T, int(np.ceil(T / (0.4 * h))))
        sys = forward.HyperbolicSystem(g, 2, np.array([1.0, 2.0]))
        x = g.axis_coords(0)
        bump = np.where(np.abs(x - 2.0) < 0.2,
                        np.cos(np.pi * (x - 2.0) / 0.4) ** 2, 0.0)
        init = np.stack([bump, bump])
        u = forward.solve_forward(sys, initial=(init, np.zeros_like(init)))
        radii = []
        for i, v in enumerate((1.0, 2.0)):
            amp = np.abs(u.values[i, :, -1])
            live = amp > 1e-3 * amp.max()  # above the dispersive tail
            radius = np.abs(x[live] - 2.0).max() - 0.2
            radii.append(radius)
            assert radius <= v * T + 4 * h
        # the slow component must lag the fast one by the speed ratio
        assert radii[0] < 0.6 * radii[1]

    def test_reversal_recovers_initial(self):
        # leapfrog reversibility: march forward, then backward from the last pair
        g = box_grid(61, T=0.5)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        u = forward.solve_forward(sys, initial=(np.sin(x)[None], np.sin(2 * x)[None]))
        vals = u.values
        march = forward._make_march(sys, "dirichlet0")
        u_prev = vals[..., -1].copy()
        u_curr = vals[..., -2].copy()
        k = vals.shape[-1]
        for s in range(k - 2, 0, -1):
            u_next = march.step(u_prev, u_curr, None, g.time_step, 1.0)
            u_prev, u_curr = u_curr, u_next
        np.testing.assert_allclose(u_curr, vals[..., 0], atol=1e-10)


class TestApplyOperator:
    def test_discrete_solution_zero_residual_interior(self):
        g = box_grid(41, T=0.4)
        sys = forward.scalar_wave_system(g, 1.0)
        x = g.axis_coords(0)
        u = forward.solve_forward(sys, initial=(np.sin(x)[None], np.zeros((1, 41))))
        res = forward.apply_operator(sys, u)
        interior = res.values[0, 2:-2, 2:-2]
        assert np.abs(interior).max() < 1e-10

    def test_coupled_operator_matches_manual(self):
        g = Grid(1, (1.0,), (21,), 0.2, 10)
        coup = {(0, 1, 1): 0.7 * np.ones(g.shape), (1, 0, 0): -0.3 * np.ones(g.shape)}
        zer = {(0, 0): 1.5 * np.ones(g.shape)}
        sys = forward.HyperbolicSystem(g, 2, np.array([1.0, 2.0]),
                                       coupling_d=coup, coupling_0=zer)
        rng = np.random.default_rng(8)
        f = SpaceTimeField(g, rng.normal(size=(2,) + g.shape_spacetime))
        out = forward.apply_operator(sys, f)
        full = np.ones(g.shape_spacetime, dtype=bool)
        d2t = ops.diff(f.values, full, 1, g.time_step, order=2)
        d2x = ops.diff(f.values, full, 0, g.spacing[0], order=2)
        dt1 = ops.diff(f.values, full, 1, g.time_step)
        dx1 = ops.diff(f.values, full, 0, g.spacing[0])
        expect0 = d2t[0] - 1.0 * d2x[0] + 0.7 * dx1[1] + 1.5 * f.values[0]
        expect1 = d2t[1] - 4.0 * d2x[1] - 0.3 * dt1[0]
        np.testing.assert_allclose(out.values[0], expect0, atol=1e-12)
        np.testing.assert_allclose(out.values[1], expect1, atol=1e-12)

    def test_norm_l_bookkeeping(self):
        g = Grid(1, (1.0,), (11,), 0.2, 5)
        sys = forward.HyperbolicSystem(
            g, 2, np.array([1.0, 1.0]),
            coupling_d={(0, 1, 1): 0.7 * np.ones(g.shape)},
            coupling_0={(1, 0): -2.5 * np.ones(g.shape)})
        assert abs(sys.norm_L - 2.5) < 1e-15
        assert sys.v_min == 1.0
