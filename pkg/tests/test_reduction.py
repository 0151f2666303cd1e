"""Prestressed tensor table and elastic-to-hyperbolic reduction checks."""

import numpy as np
import pytest
import sympy as sym

from uclab.errors import GeometryError
from uclab.grids import Grid, SpaceTimeField
from uclab import reduction as red


def flat_grid(nx=9, ny=9, T=0.1, half=4):
    return Grid(2, (1.0, 1.0), (nx, ny), T, half)


def const_material(g, lam=1.0, mu=1.0, rho=1.0, p0=0.0):
    return red.ElasticMaterial(g, rho, lam, mu, p0)


def brute_force_tensor(lam, mu, p0, n):
    d = lambda i, j: 1.0 if i == j else 0.0
    out = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    out[i, j, k, l] = (lam * d(i, j) * d(k, l)
                                       + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
                                       - p0 * (d(i, j) * d(k, l) - d(i, l) * d(j, k)))
    return out


class TestPrestressedTensor:
    def test_textbook_entries(self):
        g = flat_grid(3, 3)
        t = red.build_prestressed_tensor(const_material(g, lam=1, mu=1, p0=0))
        assert t.values[0, 0, 0, 0, 0, 0] == 3.0
        assert t.values[0, 1, 0, 1, 0, 0] == 1.0
        assert t.values[0, 0, 1, 1, 0, 0] == 1.0

    @pytest.mark.parametrize("n", [2, 3])
    def test_brute_force_oracle_random_triples(self, n):
        g = flat_grid(3, 3)
        rng = np.random.default_rng(42)
        for _ in range(10):
            lam, mu, p0 = rng.uniform(-1, 2, size=3)
            t = red.build_prestressed_tensor(
                red.ElasticMaterial(g, 1.0, lam, mu, p0), dim=n)
            oracle = brute_force_tensor(lam, mu, p0, n)
            np.testing.assert_allclose(t.values[..., 0, 0], oracle, atol=1e-12)

    def test_major_symmetry(self):
        g = flat_grid(3, 3)
        rng = np.random.default_rng(3)
        lam, mu = rng.uniform(0.5, 2, size=2)
        t = red.build_prestressed_tensor(const_material(g, lam=lam, mu=mu)).values
        np.testing.assert_allclose(t, np.transpose(t, (2, 3, 0, 1, 4, 5)), atol=1e-12)

    def test_matches_general_stiffness_relation(self):
        # hydrostatic T0 = -p0 I fed through the general correction formula
        rng = np.random.default_rng(7)
        lam, mu, p0 = rng.uniform(0.2, 2, size=3)
        n = 3
        d = lambda i, j: 1.0 if i == j else 0.0
        C = np.zeros((n, n, n, n))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(n):
                        C[i, j, k, l] = lam * d(i, j) * d(k, l) \
                            + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
        general = red.prestressed_from_stiffness(C, -p0 * np.eye(n))
        direct = brute_force_tensor(lam, mu, p0, n)
        np.testing.assert_allclose(general, direct, atol=1e-12)

    def test_contraction_symmetric_gradient(self):
        # u = (x2, 0): (L:grad u)_12 = mu (d_2 u_1 + d_1 u_2) = 1
        g = flat_grid(11, 11)
        t = red.build_prestressed_tensor(const_material(g, lam=1, mu=1, p0=0))
        grad_u = np.zeros((2, 2) + g.shape)
        grad_u[0, 1] = 1.0  # d_2 u_1
        s = t.contract(grad_u)
        np.testing.assert_allclose(s[0, 1], 1.0, atol=1e-14)
        np.testing.assert_allclose(s[1, 0], 1.0, atol=1e-14)

    def test_speed_ordering(self):
        g = flat_grid(5, 5)
        m = const_material(g, lam=0.7, mu=1.3)
        assert (m.v_press > m.v_shear).all()

    def test_invalid_material_rejected(self):
        g = flat_grid(5, 5)
        with pytest.raises(GeometryError):
            red.ElasticMaterial(g, -1.0, 1.0, 1.0, 0.0).validate()
        with pytest.raises(GeometryError):
            red.ElasticMaterial(g, 1.0, -3.0, 1.0, 0.0).validate()


def wave_grid(nx, T=0.2):
    h = 1.0 / (nx - 1)
    half = int(np.ceil(T / (0.5 * h)))
    return Grid(2, (1.0, 1.0), (nx, nx), T, half)


def shear_wave_field(g, k=2 * np.pi, mu=1.0, rho=1.0):
    omega = np.sqrt(mu / rho) * k
    X, Y = g.coordinate_arrays()
    t = g.times()
    u2 = np.sin(k * X[..., None] - omega * t)
    return SpaceTimeField(g, np.stack([np.zeros_like(u2), u2]))


def pressure_wave_field(g, kvec=(2 * np.pi, 2 * np.pi), lam=1.0, mu=1.0, rho=1.0):
    kv = np.asarray(kvec)
    omega = np.sqrt((2 * mu + lam) / rho) * np.linalg.norm(kv)
    X, Y = g.coordinate_arrays()
    t = g.times()
    phase = kv[0] * X[..., None] + kv[1] * Y[..., None] - omega * t
    return SpaceTimeField(g, np.stack([kv[0] * np.cos(phase), kv[1] * np.cos(phase)]))


class TestReduction:
    def test_constant_coupling_closed_form(self):
        g = flat_grid(17, 17)
        lam, mu = 1.4, 0.8
        rs = red.reduce_elastic_to_hyperbolic(const_material(g, lam=lam, mu=mu))
        # u-block couples to div through -(lam + mu)/rho on D_i v only
        expect = -(lam + mu)
        np.testing.assert_allclose(rs.system.coupling_d[(0, 2, 1)], expect, atol=1e-12)
        np.testing.assert_allclose(rs.system.coupling_d[(1, 2, 2)], expect, atol=1e-12)
        others = set(rs.system.coupling_d) - {(0, 2, 1), (1, 2, 2)}
        assert not others
        assert not rs.system.coupling_0
        np.testing.assert_allclose(rs.system.speeds[2], np.sqrt(2 * mu + lam),
                                   atol=1e-14)

    def test_zero_displacement_zero_residuals(self):
        g = wave_grid(21)
        mat = const_material(g)
        rep = red.verify_reduction(mat, SpaceTimeField.zeros(g, 2))
        assert rep["total"] == 0.0

    def test_shear_wave_block_residual_order(self):
        errs, hs = [], []
        for nx in (51, 101):
            g = wave_grid(nx)
            mat = const_material(g)
            rep = red.verify_reduction(mat, shear_wave_field(g))
            errs.append(rep["u"])
            hs.append(g.spacing[0])
        order = np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1])
        assert order >= 1.8

    def test_pressure_wave_div_block_order(self):
        errs, hs = [], []
        for nx in (51, 101):
            g = wave_grid(nx)
            mat = const_material(g)
            rep = red.verify_reduction(mat, pressure_wave_field(g))
            errs.append(rep["div"])
            hs.append(g.spacing[0])
        order = np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1])
        assert order >= 1.8

    def test_time_independent_coefficients(self):
        g = flat_grid(9, 9)
        rs = red.reduce_elastic_to_hyperbolic(
            red.ElasticMaterial(g, 1.0, 1.0,
                                2.0 + 0.2 * g.coordinate_arrays()[0], 0.1))
        for coef in rs.system.coupling_d.values():
            assert coef.shape == g.shape  # purely spatial storage

    def test_reduction_requires_2d(self):
        g = Grid(1, (1.0,), (11,), 0.1, 4)
        with pytest.raises(GeometryError):
            red.reduce_elastic_to_hyperbolic(red.ElasticMaterial(g, 1, 1, 1, 0))


def manufactured_forcing(mu_expr, lam_expr, rho_expr, p0_expr, u_exprs):
    """Closed-form body force rho u_tt - div(L:grad u) via symbolic algebra."""
    x1, x2, t = sym.symbols("x1 x2 t")
    syms = (x1, x2, t)
    d = lambda i, j: 1 if i == j else 0
    mats = {"lam": lam_expr, "mu": mu_expr, "rho": rho_expr, "p0": p0_expr}
    grad = [[sym.diff(u_exprs[k], syms[l]) for l in range(2)] for k in range(2)]
    forcing = []
    for i in range(2):
        expr = mats["rho"] * sym.diff(u_exprs[i], t, 2)
        for j in range(2):
            stress_ij = 0
            for k in range(2):
                for l in range(2):
                    lam_ijkl = (mats["lam"] * d(i, j) * d(k, l)
                                + mats["mu"] * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
                                - mats["p0"] * (d(i, j) * d(k, l) - d(i, l) * d(j, k)))
                    stress_ij += lam_ijkl * grad[k][l]
            expr -= sym.diff(stress_ij, syms[j])
        forcing.append(sym.simplify(expr))
    return sym.lambdify(syms, forcing, "numpy")


class TestVariableCoefficients:
    @pytest.mark.parametrize("which", ["mu", "p0"])
    def test_manufactured_solution_order(self, which):
        x1, x2, t = sym.symbols("x1 x2 t")
        u_exprs = (sym.sin(sym.pi * x1) * sym.sin(sym.pi * x2) * sym.cos(t),
                   sym.cos(sym.pi * x1) * sym.sin(sym.pi * x2) * sym.sin(2 * t) / 2)
        if which == "mu":
            mu_e, lam_e, rho_e, p0_e = 2 + sym.sin(x1), sym.Integer(1), sym.Integer(1), sym.Integer(0)
        else:
            mu_e, lam_e, rho_e, p0_e = sym.Integer(1), sym.Integer(1), sym.Integer(1), \
                sym.Rational(1, 10) * (1 + x2 ** 2)
        f_fn = manufactured_forcing(mu_e, lam_e, rho_e, p0_e, u_exprs)
        u_fn = sym.lambdify((x1, x2, t), list(u_exprs), "numpy")

        errs, hs = [], []
        for nx in (41, 81):
            g = wave_grid(nx)
            X, Y = g.coordinate_arrays()
            tt = g.times()
            Xs, Ys, Ts = X[..., None], Y[..., None], tt[None, None, :]
            uu = np.stack(u_fn(Xs, Ys, Ts))
            ff = np.stack([np.broadcast_to(c, g.shape_spacetime)
                           for c in f_fn(Xs, Ys, Ts)])
            mu_val = 2 + np.sin(X) if which == "mu" else np.ones(g.shape)
            p0_val = np.zeros(g.shape) if which == "mu" else 0.1 * (1 + Y ** 2)
            mat = red.ElasticMaterial(g, 1.0, 1.0, mu_val, p0_val)
            u_field = SpaceTimeField(g, uu)
            src = SpaceTimeField(g, ff)
            # oracle: the elasticity residual itself is O(h^2) in the interior
            el = red.elastic_residual(mat, u_field, source=src)
            core = np.abs(el.values[:, 3:-3, 3:-3, :]).max()
            rep = red.verify_reduction(mat, u_field, source=src)
            errs.append((rep["total"], core))
            hs.append(g.spacing[0])
        order_blocks = np.log(errs[0][0] / errs[1][0]) / np.log(hs[0] / hs[1])
        order_elastic = np.log(errs[0][1] / errs[1][1]) / np.log(hs[0] / hs[1])
        assert order_elastic >= 1.8
        assert order_blocks >= 1.8
