"""Temporal frequency machinery: the Gaussian low-pass regularizer, smooth
band projections, compactly supported localizers with verified Fourier decay,
and the weighted-inequality sweep probe.

The Gaussian filter acts along the time axis only.  Its symbol form multiplies
the zero-padded discrete Fourier transform by exp(-eps * xi^2 / (2 tau)); the
kernel form convolves with sqrt(tau / (2 pi eps)) * exp(-tau s^2 / (2 eps)) by
quadrature.  Band projections act on the unpadded [-T, T] circle so that pure
grid tones are exact eigenfunctions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import GeometryError
from .grids import Grid, SpaceTimeField
from .geometry import CarlemanWeight
from . import ops

_PAD_FACTOR = 4


# ---------------------------------------------------------------------------
# Gevrey localizers
# ---------------------------------------------------------------------------

def gevrey_ramp(s, alpha: float):
    """Smooth 0-to-1 ramp on [0, 1] built from exp(-s^(-nu)), nu = a/(1-a).

    The quotient construction keeps the factorial growth of derivatives at the
    1/alpha rate, which shows up as exp(-c |xi|^alpha) Fourier decay.
    """
    nu = alpha / (1.0 - alpha)
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g_lo = np.where(s > 0, np.exp(-np.power(np.clip(s, 1e-300, None), -nu)), 0.0)
        g_hi = np.where(s < 1, np.exp(-np.power(np.clip(1 - s, 1e-300, None), -nu)), 0.0)
    inside = (s > 0) & (s < 1)
    out[inside] = g_lo[inside] / (g_lo[inside] + g_hi[inside])
    out[s >= 1] = 1.0
    return out


def gevrey_ramp_derivative(s, alpha: float):
    """Closed-form derivative of :func:`gevrey_ramp` (zero outside (0, 1))."""
    nu = alpha / (1.0 - alpha)
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = np.clip(s[inside], 1e-300, None)
    ti = np.clip(1 - s[inside], 1e-300, None)
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.exp(-si ** -nu)
        gb = np.exp(-ti ** -nu)
        gp = g * nu * si ** (-nu - 1.0)
        gbp = gb * nu * ti ** (-nu - 1.0)
        out[inside] = (gp * gb + g * gbp) / (g + gb) ** 2
    return out


@dataclass(frozen=True)
class GevreyLocalizer:
    """Compactly supported cutoff: exactly 1 on [inner], 0 outside [outer]."""

    alpha: float
    profile: str
    inner: tuple
    outer: tuple
    delta: float = None
    fitted_exponent: float = field(default=None, compare=False)

    def __post_init__(self):
        a0, b0 = self.outer
        a1, b1 = self.inner
        if not (a0 < a1 <= b1 < b0):
            raise GeometryError("inner interval must be strictly inside outer")
        if not (0.0 < self.alpha < 1.0):
            raise GeometryError("alpha must lie in (0, 1)")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a0, b0 = self.outer
        a1, b1 = self.inner
        out = np.zeros_like(x)
        rise = (x > a0) & (x < a1)
        fall = (x > b1) & (x < b0)
        out[rise] = gevrey_ramp((x[rise] - a0) / (a1 - a0), self.alpha)
        out[fall] = gevrey_ramp((b0 - x[fall]) / (b0 - b1), self.alpha)
        out[(x >= a1) & (x <= b1)] = 1.0
        return out

    def reference_samples(self, n: int = 1 << 15):
        a0, b0 = self.outer
        margin = 0.5 * (b0 - a0)
        x = np.linspace(a0 - margin, b0 + margin, n, endpoint=False)
        return x, self(x)


@dataclass(frozen=True)
class DecayFit:
    """Result of the Fourier-decay log-fit of a localizer envelope.

    ``plain`` is the raw slope of log(-log env) against log xi over the
    deepest two decades of usable frequencies.  In double precision that
    window cannot reach the asymptotic regime for small alpha because the
    transform carries an algebraic prefactor xi^(-p); ``corrected`` removes
    the prefactor predicted by the saddle-point form of the transition
    profile before fitting, and ``weighted`` is the tail-emphasising variant.
    ``exponent`` (the certificate) is the largest of the three.
    """

    exponent: float
    plain: float
    weighted: float
    corrected: float
    decades: float


def _spectrum_envelope(localizer, n: int, nbins: int = 600):
    x, y = localizer.reference_samples(n)
    dx = x[1] - x[0]
    spec = np.abs(np.fft.rfft(y)) * dx
    xi = 2 * np.pi * np.fft.rfftfreq(n, dx)
    pos = xi > 0
    xi, spec = xi[pos], spec[pos]
    edges = np.logspace(np.log10(xi[0]), np.log10(xi[-1]), nbins + 1)
    idx = np.searchsorted(edges, xi) - 1
    env_xi, env = [], []
    for b in range(nbins):
        sel = idx == b
        if sel.any():
            k = np.argmax(spec[sel])
            env_xi.append(xi[sel][k])
            env.append(spec[sel][k])
    return np.asarray(env_xi), np.asarray(env)


def fit_fourier_decay(localizer: GevreyLocalizer, n: int = 1 << 18) -> DecayFit:
    """Fit beta in |hat eta(xi)| <= C exp(-c |xi|^beta) over >= 2 decades.

    Works on the upper envelope of |FFT| in log-spaced frequency bins, using
    the deepest two decades above the double-precision floor."""
    env_xi, env = _spectrum_envelope(localizer, n)
    peak = float(env.max())
    past_peak = env_xi > env_xi[int(np.argmax(env))]
    win = past_peak & (env > 3e-15 * peak) & (env < 0.7 * peak)
    if win.sum() < 10:
        raise GeometryError("too few usable frequencies for the decay fit")
    exi, ev = env_xi[win], env[win]
    keep = exi >= exi.max() / 10 ** 2.1
    exi, ev = exi[keep], ev[keep]
    decades = float(np.log10(exi.max() / exi.min()))
    if decades < 2.0:
        raise GeometryError("decay window narrower than two frequency decades")
    lx = np.log(exi)
    neg_log = -np.log(ev / (1.05 * peak))
    yfit = np.log(neg_log)
    plain = float(np.polyfit(lx, yfit, 1)[0])
    weighted = float(np.polyfit(lx, yfit, 1, w=neg_log ** 2)[0])
    # remove the saddle-point algebraic prefactor xi^(-p) of the profile
    nu = localizer.alpha / (1.0 - localizer.alpha)
    p = (nu + 2.0) / (2.0 * nu + 2.0)
    y2 = neg_log - p * lx
    ok = y2 > 0.1
    if ok.sum() >= 10:
        corrected = float(np.polyfit(lx[ok], np.log(y2[ok]), 1)[0])
    else:
        corrected = plain
    return DecayFit(exponent=max(plain, weighted, corrected), plain=plain,
                    weighted=weighted, corrected=corrected, decades=decades)


def make_gevrey_bump(alpha: float, inner, outer, profile: str = "custom",
                     delta: float = None, check_decay: bool = True) -> GevreyLocalizer:
    """Construct a localizer and validate its Fourier decay exponent."""
    loc = GevreyLocalizer(alpha=alpha, profile=profile, inner=tuple(inner),
                          outer=tuple(outer), delta=delta)
    if check_decay:
        fit = fit_fourier_decay(loc)
        if fit.exponent < 0.9 * alpha:
            raise GeometryError(
                f"Fourier decay exponent {fit.exponent:.3f} below "
                f"0.9 * alpha = {0.9 * alpha:.3f}")
        object.__setattr__(loc, "fitted_exponent", fit.exponent)
    return loc


def standard_localizer(name: str, alpha: float, delta: float = None,
                       check_decay: bool = True) -> GevreyLocalizer:
    """The four standard profiles: b and a (ball/interval cutoffs on
    [-2,2]/[-1,1]), chi on [-8 delta, delta]/[-7 delta, delta/2], and eta1 on
    [-4, 1]/[-3, 1/2]."""
    if name in ("b", "a"):
        return make_gevrey_bump(alpha, (-1, 1), (-2, 2), profile=name,
                                check_decay=check_decay)
    if name == "chi":
        if delta is None or delta <= 0:
            raise GeometryError("chi profile requires a positive delta")
        return make_gevrey_bump(alpha, (-7 * delta, delta / 2), (-8 * delta, delta),
                                profile=name, delta=delta, check_decay=check_decay)
    if name == "eta1":
        return make_gevrey_bump(alpha, (-3, 0.5), (-4, 1), profile=name,
                                check_decay=check_decay)
    raise GeometryError(f"unknown localizer profile {name!r}")


# ---------------------------------------------------------------------------
# temporal filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalFilterSpec:
    """Gaussian spec (epsilon, tau) or band spec (mu, beta)."""

    epsilon: float = None
    tau: float = None
    mu: float = None
    beta: float = None
    for_iteration: bool = False

    def __post_init__(self):
        if self.epsilon is not None or self.tau is not None:
            if not (self.epsilon and self.epsilon > 0 and self.tau and self.tau > 0):
                raise GeometryError("gaussian spec needs positive epsilon and tau")
        elif self.mu is not None or self.beta is not None:
            if not (self.mu and self.mu > 0 and self.beta and self.beta > 0):
                raise GeometryError("band spec needs positive mu and beta")
            if self.for_iteration and self.beta < 3.0:
                raise GeometryError("band spec used in the iteration needs beta >= 3")
        else:
            raise GeometryError("empty filter spec")


def _pad_length(nt: int) -> int:
    return _PAD_FACTOR * nt


def gaussian_time_filter(f: SpaceTimeField, epsilon: float, tau: float,
                         mode: str = "symbol") -> SpaceTimeField:
    """Apply exp(-eps D0^2 / (2 tau)) along the time axis.

    Symbol mode multiplies the zero-padded transform by the Gaussian symbol;
    kernel mode convolves with the unit-mass Gaussian kernel by quadrature.
    The kernel standard deviation sqrt(eps/tau) should be resolved by a few
    time steps for the two modes to agree.
    """
    TemporalFilterSpec(epsilon=epsilon, tau=tau)
    values = filter_time_axis(f.values, f.grid.time_step, epsilon, tau, mode)
    return SpaceTimeField(f.grid, values)


def filter_time_axis(values: np.ndarray, dt: float, epsilon: float, tau: float,
                     mode: str = "symbol") -> np.ndarray:
    """Padding extends the axis to 4x its length by edge replication, which
    suppresses circular wrap-around and keeps time-constant fields exact
    eigenfunctions of the filter."""
    nt = values.shape[-1]
    if mode == "symbol":
        extra = (_pad_length(nt) - nt)
        lo, hi = extra // 2, extra - extra // 2
        pad = [(0, 0)] * (values.ndim - 1) + [(lo, hi)]
        vpad = np.pad(values, pad, mode="edge")
        npad = vpad.shape[-1]
        spec = np.fft.rfft(vpad, axis=-1)
        xi = 2 * np.pi * np.fft.rfftfreq(npad, dt)
        spec *= np.exp(-epsilon * xi ** 2 / (2.0 * tau))
        out = np.fft.irfft(spec, n=npad, axis=-1)[..., lo:lo + nt]
        return np.ascontiguousarray(out)
    if mode == "kernel":
        sigma = math.sqrt(epsilon / tau)
        K = int(math.ceil(10.0 * sigma / dt)) + 1
        s = np.arange(-K, K + 1) * dt
        kernel = math.sqrt(tau / (2 * math.pi * epsilon)) * np.exp(-tau * s ** 2 / (2 * epsilon))
        pad = [(0, 0)] * (values.ndim - 1) + [(K, K)]
        vpad = np.pad(values, pad, mode="edge")
        shape = (1,) * (values.ndim - 1) + (kernel.size,)
        out = fftconvolve(vpad, kernel.reshape(shape), mode="valid", axes=-1) * dt
        return np.ascontiguousarray(out)
    raise ValueError(f"unknown filter mode {mode!r}")


def kernel_mass(epsilon: float, tau: float, dt: float) -> float:
    """Quadrature mass of the sampled Gaussian kernel (should be 1)."""
    sigma = math.sqrt(epsilon / tau)
    K = int(math.ceil(10.0 * sigma / dt)) + 1
    s = np.arange(-K, K + 1) * dt
    kernel = math.sqrt(tau / (2 * math.pi * epsilon)) * np.exp(-tau * s ** 2 / (2 * epsilon))
    return float(kernel.sum() * dt)


def bandpass(f: SpaceTimeField, mu: float, beta: float,
             localizer: GevreyLocalizer = None) -> SpaceTimeField:
    """Smooth band projection A(beta D0 / mu) on the [-T, T] time circle.

    The symbol equals 1 for |xi| <= mu/beta and 0 for |xi| >= 2 mu/beta, so
    grid tones inside the pass band are exact eigenfunctions.
    """
    TemporalFilterSpec(mu=mu, beta=beta)
    if localizer is None:
        localizer = standard_localizer("a", alpha=0.5, check_decay=False)
    nt = f.grid.nt
    dt = f.grid.time_step
    spec = np.fft.rfft(f.values, axis=-1)
    xi = 2 * np.pi * np.fft.rfftfreq(nt, dt)
    spec *= localizer(beta * xi / mu)
    out = np.fft.irfft(spec, n=nt, axis=-1)
    return SpaceTimeField(f.grid, np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# weighted-inequality probe
# ---------------------------------------------------------------------------

def decay_factor_log(tau: float, kappa: float, epsilon: float) -> float:
    """log of exp(-tau kappa^2 / (4 epsilon))."""
    return -tau * kappa ** 2 / (4.0 * epsilon)


def carleman_probe(u: SpaceTimeField, apply_operator, weight: CarlemanWeight,
                   epsilon: float, tau_list, kappa: float = None,
                   support_tol: float = 1e-12) -> list:
    """Sweep the weighted a-priori inequality on a compactly supported test
    field.

    For each tau the row carries the filtered weighted H1-tau norm of u (lhs),
    the residual term tau^{-1/2} ||filtered weighted (Pu + L(Du,u))|| (term1),
    the localization remainder exp(-tau kappa^2 / 4 eps) ||weighted u||_{1,tau}
    (term2), and lhs / (term1 + term2).  All three magnitudes are reported
    after removing the common log-space shift recorded in column log_shift,
    so the sweep survives tau * phi far beyond overflow.
    """
    grid = u.grid
    if kappa is None:
        kappa = weight.kappa
    if kappa <= 0:
        raise GeometryError("probe requires a positive kappa")
    phi = weight.values_spacetime(grid)
    resid = apply_operator(u)
    support = np.any(np.abs(u.values) > support_tol, axis=0)
    support |= np.any(np.abs(resid.values) > support_tol, axis=0)
    if support.any():
        coords = _coords(grid)[support.ravel()]
        dist = np.linalg.norm(coords - weight.y0, axis=1)
        if dist.max() > weight.R + 1e-9 and weight.R > 0:
            raise GeometryError(
                f"test field support reaches {dist.max():.4f} from the anchor, "
                f"outside the verified radius R={weight.R:.4f}")
    region = np.ones(grid.shape_spacetime, dtype=bool)
    rows = []
    for tau in tau_list:
        tau = float(tau)
        shift = float(tau * phi[support].max()) if support.any() else 0.0
        wexp = np.exp(np.minimum(tau * phi - shift, 0.0))
        wu = SpaceTimeField(grid, u.values * wexp)
        wf = SpaceTimeField(grid, resid.values * wexp)
        fu = SpaceTimeField(grid, filter_time_axis(wu.values, grid.time_step,
                                                   epsilon, tau))
        ff = filter_time_axis(wf.values, grid.time_step, epsilon, tau)
        lhs = ops.norm(fu, "H1tau", region, tau=tau)
        term1 = tau ** -0.5 * ops.norm(SpaceTimeField(grid, ff), "L2", region)
        log_decay = decay_factor_log(tau, kappa, epsilon)
        term2 = math.exp(max(log_decay, -745.0)) * ops.norm(wu, "H1tau", region, tau=tau)
        denom = term1 + term2
        ratio = lhs / denom if denom > 0 else 0.0
        rows.append({"tau": tau, "lhs": lhs, "term1": term1, "term2": term2,
                     "ratio": ratio, "log_shift": shift, "log_decay": log_decay})
    return rows


def _coords(grid: Grid) -> np.ndarray:
    axes = [grid.axis_coords(a) for a in range(grid.dim)] + [grid.times()]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


# ---------------------------------------------------------------------------
# iteration bookkeeping
# ---------------------------------------------------------------------------

def plan_frequency_schedule(mu1: float, alpha: float, c3: float,
                            max_steps: int = 64) -> list:
    """Frequency ladder mu_{j+1} = mu_j^alpha / c3, stopped once mu <= 1.

    Bookkeeping only: the constants are scene configuration, not derived
    quantities."""
    if mu1 <= 1:
        raise GeometryError("schedule needs mu1 > 1")
    if not (0 < alpha < 1) or c3 <= 0:
        raise GeometryError("schedule needs alpha in (0,1) and c3 > 0")
    out = [float(mu1)]
    for _ in range(max_steps - 1):
        nxt = out[-1] ** alpha / c3
        if nxt <= 1.0:
            break
        out.append(float(nxt))
    return out
