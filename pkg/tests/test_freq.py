"""Temporal filters, Gevrey localizers, and the weighted-inequality probe."""

import numpy as np
import pytest

from uclab.errors import GeometryError
from uclab.grids import Grid, SpaceTimeField, spacetime_mask
from uclab import freq, geometry as geo, ops


def tgrid(nx=31, nt_half=60, L=1.0, T=1.0):
    return Grid(1, (L,), (nx,), T, nt_half)


class TestGevreyLocalizers:
    def test_plateau_and_support_exact(self):
        loc = freq.standard_localizer("chi", alpha=0.5, delta=0.1, check_decay=False)
        np.testing.assert_allclose(loc.outer, (-0.8, 0.1), atol=1e-15)
        np.testing.assert_allclose(loc.inner, (-0.7, 0.05), atol=1e-15)
        x = np.linspace(-1.2, 0.5, 2001)
        y = loc(x)
        assert (y[(x >= -0.7) & (x <= 0.05)] == 1.0).all()
        assert (y[(x <= -0.8) | (x >= 0.1)] == 0.0).all()
        assert ((y >= 0) & (y <= 1)).all()

    def test_transition_monotone_and_c1(self):
        loc = freq.standard_localizer("a", alpha=0.5, check_decay=False)
        x = np.linspace(-2.2, 2.2, 4001)
        y = loc(x)
        rising = y[(x > -2.0) & (x < -1.0)]
        assert (np.diff(rising) >= -1e-15).all()
        d = np.diff(y) / np.diff(x)[0]
        assert np.isfinite(d).all()

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("name,delta", [("b", None), ("a", None),
                                            ("chi", 0.1), ("eta1", None)])
    def test_decay_certificate(self, alpha, name, delta):
        loc = freq.standard_localizer(name, alpha, delta=delta, check_decay=False)
        fit = freq.fit_fourier_decay(loc)
        assert fit.decades >= 2.0
        assert fit.exponent >= 0.9 * alpha

    def test_alpha_half_plain_fit_band(self):
        loc = freq.standard_localizer("a", alpha=0.5, check_decay=False)
        fit = freq.fit_fourier_decay(loc)
        assert 0.45 <= fit.plain <= 0.6

    def test_non_gevrey_profile_fails(self):
        class SplineBump:
            alpha = 0.5

            def reference_samples(self, n=1 << 18):
                x = np.linspace(-3, 3, n, endpoint=False)
                return x, np.clip(1 - np.abs(x / 2), 0, 1) ** 3

        fit = freq.fit_fourier_decay(SplineBump())
        assert fit.exponent < 0.45

    def test_make_bump_validates(self):
        loc = freq.make_gevrey_bump(0.5, (-1, 1), (-2, 2))
        assert loc.fitted_exponent >= 0.45

    def test_bad_intervals_rejected(self):
        with pytest.raises(GeometryError):
            freq.make_gevrey_bump(0.5, (-2, 2), (-1, 1), check_decay=False)
        with pytest.raises(GeometryError):
            freq.standard_localizer("chi", 0.5, delta=None, check_decay=False)


class TestGaussianFilter:
    def test_constant_in_time_unchanged(self):
        g = tgrid()
        rng = np.random.default_rng(0)
        profile = rng.normal(size=g.shape)
        u = SpaceTimeField(g, np.repeat(profile[None, :, None], g.nt, axis=-1))
        out = freq.gaussian_time_filter(u, epsilon=0.1, tau=2.0)
        np.testing.assert_allclose(out.values, u.values, atol=1e-10)

    def test_pure_tone_eigenvalue(self):
        g = tgrid(nx=5, nt_half=60)
        t = g.times()
        omega = 5 * np.pi
        tone = np.cos(omega * t)
        u = SpaceTimeField(g, np.broadcast_to(tone, (1,) + g.shape_spacetime).copy())
        eps, tau = 0.0025, 1.0  # kernel std 0.05, well inside the axis
        out = freq.gaussian_time_filter(u, eps, tau)
        expect = np.exp(-eps * omega ** 2 / (2 * tau)) * tone
        interior = np.abs(t) < 0.5
        np.testing.assert_allclose(out.values[0, 0, interior], expect[interior],
                                   atol=1e-8)

    def test_kernel_mass_unit(self):
        assert abs(freq.kernel_mass(0.01, 2.0, 1.0 / 120) - 1.0) < 1e-10
        assert abs(freq.kernel_mass(0.5, 1.0, 0.01) - 1.0) < 1e-10

    def test_symbol_kernel_agreement(self):
        g = tgrid(nx=7, nt_half=100)
        t = g.times()
        envelope = np.exp(-((t / 0.35) ** 2))
        rng = np.random.default_rng(1)
        spatial = rng.normal(size=g.shape)
        vals = spatial[None, :, None] * envelope[None, None, :]
        u = SpaceTimeField(g, vals)
        a = freq.gaussian_time_filter(u, 0.02, 2.0, mode="symbol")
        b = freq.gaussian_time_filter(u, 0.02, 2.0, mode="kernel")
        assert np.abs(a.values - b.values).max() <= 1e-8

    def test_commutes_with_spatial_derivative(self):
        g = tgrid(nx=41, nt_half=40)
        rng = np.random.default_rng(2)
        u = rng.normal(size=(1,) + g.shape_spacetime)
        full = np.ones(g.shape_spacetime, dtype=bool)
        f_then_d = ops.diff(freq.filter_time_axis(u, g.time_step, 0.05, 1.0),
                            full, 0, g.spacing[0])
        d_then_f = freq.filter_time_axis(ops.diff(u, full, 0, g.spacing[0]),
                                         g.time_step, 0.05, 1.0)
        assert np.abs(f_then_d - d_then_f).max() <= 1e-12

    def test_rejects_bad_spec(self):
        g = tgrid(nx=5, nt_half=10)
        u = SpaceTimeField.zeros(g, 1)
        with pytest.raises(GeometryError):
            freq.gaussian_time_filter(u, -0.1, 1.0)

    def test_quadratic_weight_commutator_first_order(self):
        # [filter, tau * d_l phi] w matches eps * Hess[l,t] d_t filter(w) to O(dt)
        def residual(nt_half):
            g = tgrid(nx=21, nt_half=nt_half, T=1.0)
            t = g.times()
            x = g.axis_coords(0)
            w = (np.exp(-((t / 0.3) ** 2))[None, None, :]
                 * np.sin(2 * np.pi * x)[None, :, None]
                 * np.ones((1,) + g.shape_spacetime))
            y0 = np.array([0.5, 0.0])
            b = np.array([0.3, -0.2])
            Q = np.array([[0.4, 0.15], [0.15, -0.3]])
            weight = geo.CarlemanWeight(y0=y0, b=b, Q=Q, sigma=0.0,
                                        kappa=1.0, delta=0.1, R=0.5)
            eps, tau = 0.02, 3.0
            filt = lambda v: freq.filter_time_axis(v, g.time_step, eps, tau)
            X, Tm = np.meshgrid(x, t, indexing="ij")
            H = weight.hessian()
            full = np.ones(g.shape_spacetime, dtype=bool)
            res = 0.0
            dt_filter_w = ops.diff(filt(w), full, 1, g.time_step)
            for l, grad_l in enumerate((
                    b[0] + H[0, 0] * (X - 0.5) + H[0, 1] * Tm,
                    b[1] + H[1, 0] * (X - 0.5) + H[1, 1] * Tm)):
                lhs = filt(tau * grad_l * w) - tau * grad_l * filt(w)
                rhs = eps * H[l, 1] * dt_filter_w
                res = max(res, np.abs(lhs - rhs).max())
            return res, g.time_step

        r1, h1 = residual(50)
        r2, h2 = residual(100)
        assert r1 < 0.05
        assert r2 <= 0.75 * r1  # at least first-order decay in the step


class TestBandpass:
    def test_passband_identity(self):
        g = tgrid(nx=5, nt_half=50)
        t = g.times()
        k = 3  # exact tone of the discrete time circle (circumference nt*dt)
        omega = 2 * np.pi * k / (g.nt * g.time_step)
        tone = np.cos(omega * t)
        u = SpaceTimeField(g, np.broadcast_to(tone, (1,) + g.shape_spacetime).copy())
        mu, beta = 4.0 * omega, 3.0  # omega <= mu / beta
        out = freq.bandpass(u, mu, beta)
        np.testing.assert_allclose(out.values, u.values, atol=1e-12)

    def test_stopband_kills(self):
        g = tgrid(nx=5, nt_half=50)
        t = g.times()
        omega = 2 * np.pi * 30 / (g.nt * g.time_step)
        tone = np.cos(omega * t)
        u = SpaceTimeField(g, np.broadcast_to(tone, (1,) + g.shape_spacetime).copy())
        mu, beta = omega, 3.0  # 2 mu / beta < omega
        out = freq.bandpass(u, mu, beta)
        assert np.abs(out.values).max() <= 1e-12

    def test_commutes_with_spatial_ops(self):
        g = tgrid(nx=31, nt_half=30)
        rng = np.random.default_rng(3)
        u = SpaceTimeField(g, rng.normal(size=(2,) + g.shape_spacetime))
        full = np.ones(g.shape_spacetime, dtype=bool)
        a = ops.diff(freq.bandpass(u, 5.0, 3.0).values, full, 0, g.spacing[0])
        b = freq.bandpass(SpaceTimeField(
            g, ops.diff(u.values, full, 0, g.spacing[0])), 5.0, 3.0).values
        assert np.abs(a - b).max() <= 1e-12

    def test_iteration_spec_requires_beta3(self):
        with pytest.raises(GeometryError):
            freq.TemporalFilterSpec(mu=2.0, beta=2.0, for_iteration=True)
        freq.TemporalFilterSpec(mu=2.0, beta=3.0, for_iteration=True)


def _probe_setup():
    g = Grid(1, (2.0,), (161,), 1.2, 120)
    psi = geo.PsiFunction(g, "flat", (1.0,), T=1.2, v=1.0)
    vals = psi.values_spacetime()
    ix = 120  # x = 1.5, away from the cut locus
    it = int(np.argmin(np.abs(vals[ix])))
    weight = geo.construct_weight(psi, (ix, it))
    x = g.axis_coords(0)
    t = g.times()
    y0 = weight.y0
    r_u = 0.8 * weight.R
    X, Tm = np.meshgrid(x, t, indexing="ij")
    dist2 = (X - y0[0]) ** 2 + (Tm - y0[1]) ** 2
    bump = np.exp(-1.0 / np.maximum(1 - dist2 / r_u ** 2, 1e-12)) \
        * (dist2 < r_u ** 2)
    u = SpaceTimeField(g, bump[None])

    full = np.ones(g.shape_spacetime, dtype=bool)

    def apply_wave(fld):
        v = fld.values
        d2t = ops.diff(v, full, 1, g.time_step, order=2)
        d2x = ops.diff(v, full, 0, g.spacing[0], order=2)
        return SpaceTimeField(g, d2t - d2x)

    return g, weight, u, apply_wave


class TestCarlemanProbe:
    def test_zero_field_all_zero(self):
        g, weight, u, apply_wave = _probe_setup()
        z = SpaceTimeField.zeros(g, 1)
        rows = freq.carleman_probe(z, apply_wave, weight, epsilon=0.5,
                                   tau_list=[5.0, 10.0])
        for r in rows:
            assert r["lhs"] == 0.0 and r["term1"] == 0.0 and r["ratio"] == 0.0

    def test_sweep_finite_at_huge_tau_phi(self):
        g, weight, u, apply_wave = _probe_setup()
        rows = freq.carleman_probe(u, apply_wave, weight, epsilon=0.5,
                                   tau_list=[5.0, 20.0, 1e5])
        for r in rows:
            for key in ("lhs", "term1", "term2", "ratio"):
                assert np.isfinite(r[key])
        assert rows[-1]["log_shift"] != 0.0

    def test_decay_factor_closed_form_and_kappa_doubling(self):
        tau, kappa, eps = 7.0, 0.3, 0.5
        assert abs(freq.decay_factor_log(tau, kappa, eps)
                   - (-tau * kappa ** 2 / (4 * eps))) < 1e-15
        log_ratio = freq.decay_factor_log(tau, 2 * kappa, eps) \
            - freq.decay_factor_log(tau, kappa, eps)
        assert abs(log_ratio - (-3 * tau * kappa ** 2 / (4 * eps))) <= 1e-10

    def test_support_violation_rejected(self):
        g, weight, u, apply_wave = _probe_setup()
        wide = SpaceTimeField(g, np.ones((1,) + g.shape_spacetime))
        with pytest.raises(GeometryError):
            freq.carleman_probe(wide, apply_wave, weight, 0.5, [5.0])


class TestSchedulePlanner:
    def test_ladder_values(self):
        mus = freq.plan_frequency_schedule(1e4, alpha=0.5, c3=2.0, max_steps=10)
        assert mus[0] == 1e4
        assert abs(mus[1] - 1e2 / 2.0) < 1e-12
        assert all(m > 1.0 for m in mus)
        assert mus[-1] ** 0.5 / 2.0 <= 1.0 or len(mus) == 10

    def test_rejects_bad_params(self):
        with pytest.raises(GeometryError):
            freq.plan_frequency_schedule(0.5, 0.5, 2.0)
