"""Acoustic-phonon spectral functions and pure-dephasing infidelity.

Energies and frequencies are in meV (omega stands for hbar*omega), times in
ps and temperatures in K. Material constants are SI inside PhononBath and
converted once when J is evaluated.

The bath couples to the exciton (trion) occupation of each dot. A branch of
the evolution is summarised by its exciton weight f(t); two branches alpha,
beta dephase through a(t) = f_alpha(t) - f_beta(t). For a Gaussian bath the
thermal average in the fidelity matrix is exact at second order:

    T_ab = exp(-Gamma_ab + i phi_ab),
    Gamma_ab = 1/(2 hbar^2) int J(w) |a(w)|^2 (1 + 2N(w)) dw,
    a(w) = int a(t) exp(-i w t / hbar) dt,

and the phonon part of phi_ab is the double-time integral of
f_a(t) f_b(t') S(t - t') with S(tau) = int J(w) sin(w tau / hbar) dw, minus
the same self terms with t' < t. S does not depend on temperature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from qdgate.errors import (
    DimensionMismatch,
    DivergentIntegral,
    NegativeFrequency,
    NonpositiveFrequency,
    ConfigError,
    UnresolvedSpectrum,
)
from qdgate.units import E_CHARGE, EPS0, EV, HBAR, HBAR_SI, KB, MEV

COUPLINGS = ("deformation", "piezoelectric")
GEOMETRIES = ("spherical", "quasi2d")
TOPOLOGIES = ("common", "separate")

CUTOFF_MULTIPLE = 10.0  # integrals run over [0, 10 omega_l]


@dataclass(frozen=True)
class PhononBath:
    """Bulk acoustic phonons coupled to one dot.

    Defaults are standard GaAs constants. ``scale`` multiplies J(omega) and
    is the single calibration knob for comparing against tabulated
    infidelities; ``scale=0`` switches the bath off.
    """

    coupling: str = "deformation"
    geometry: str = "spherical"
    l: float = 20.0  # nm, dot size
    l_c: float | None = None  # nm, electron localisation (piezo); defaults to l
    l_v: float | None = None  # nm, hole localisation (piezo); defaults to l
    l_z: float = 2.0  # nm, well width for quasi2d
    rho: float = 5370.0  # kg/m^3
    u: float = 5110.0  # m/s
    d_c: float = -14.6  # eV
    d_v: float = -4.8  # eV
    e14: float = 0.16  # C/m^2
    eps_r: float = 12.9
    r0: float = 0.0  # nm
    temperature: float = 0.0  # K
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        for name in ("l", "l_z", "rho", "u", "eps_r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive")
        for name in ("l_c", "l_v"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive")
        for name in ("d_c", "d_v", "e14", "r0", "temperature", "scale"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.temperature < 0 or self.scale < 0 or self.r0 < 0:
            raise ConfigError("temperature, scale and r0 must be non-negative")
        if self.geometry == "quasi2d" and self.l_z >= self.l:
            raise ConfigError("quasi2d geometry assumes l_z < l")

    @property
    def omega_l(self) -> float:
        """Cutoff hbar*u/l in meV."""
        return HBAR_SI * self.u / (self.l * 1e-9) / MEV

    @property
    def piezo_m(self) -> float:
        """Piezoelectric coupling scale in J/m."""
        return 6.0 * E_CHARGE * self.e14 / (EPS0 * self.eps_r)

    def at_temperature(self, temperature: float) -> "PhononBath":
        return replace(self, temperature=temperature)


def _one_minus_sinc(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    return np.where(small, x * x / 6.0, 1.0 - np.sin(xs) / xs)


_GL_NODES = 96


def _f1_grid(x):
    """f1 by a fixed Gauss-Legendre product rule, vectorised over x."""
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    theta = 0.5 * math.pi * (nodes + 1.0)
    phi = math.pi * (nodes + 1.0)
    wt = 0.5 * math.pi * weights
    wp = math.pi * weights
    arg = np.outer(np.sin(theta), np.cos(phi))  # (theta, phi)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = np.cos(x[:, None, None] * arg[None]) * np.sin(theta)[None, :, None]
    return np.einsum("kij,i,j->k", vals, wt, wp) / (4.0 * math.pi)


def angular_average_f1(x: float) -> float:
    """(1/4pi) int sin(theta) cos(x sin(theta) cos(phi)) over the sphere."""
    if not x >= 0:
        raise ConfigError("x must be non-negative")
    value, _ = integrate.dblquad(
        lambda theta, phi: math.sin(theta) * math.cos(x * math.sin(theta) * math.cos(phi)),
        0.0,
        2.0 * math.pi,
        0.0,
        math.pi,
        epsabs=1e-12,
        epsrel=1e-10,
    )
    return value / (4.0 * math.pi)


def spectral_j(bath: PhononBath, omega):
    """J(omega) in meV for omega in meV (scalar or array)."""
    w_arr = np.asarray(omega, dtype=float)
    if np.any(w_arr < 0) or np.any(np.isnan(w_arr)):
        raise NegativeFrequency("omega must be non-negative")
    w = w_arr * MEV / HBAR_SI  # rad/s
    q = w / bath.u
    r0 = bath.r0 * 1e-9
    if bath.coupling == "deformation":
        dc, dv = bath.d_c * EV, bath.d_v * EV
        x = 2.0 * q * r0
        if bath.geometry == "quasi2d":
            one_minus = 1.0 - _f1_grid(x.ravel()).reshape(x.shape) if r0 > 0 else np.zeros_like(x)
        else:
            one_minus = _one_minus_sinc(x)
        bracket = (dc - dv) ** 2 + 2.0 * dc * dv * one_minus
        j = w**3 / (4.0 * math.pi**2 * bath.rho * bath.u**5) * np.exp(-0.5 * (q * bath.l * 1e-9) ** 2) * bracket
    else:
        lc = (bath.l_c if bath.l_c is not None else bath.l) * 1e-9
        lv = (bath.l_v if bath.l_v is not None else bath.l) * 1e-9
        xc, xv = (q * lc) ** 2 / 4.0, (q * lv) ** 2 / 4.0
        # e^{-2X} + e^{-2Y} - 2 e^{-X-Y} f, rearranged to avoid cancellation
        bracket = (np.exp(-xc) * np.expm1(xc - xv)) ** 2 + 2.0 * np.exp(-xc - xv) * _one_minus_sinc(2.0 * q * r0)
        j = bath.piezo_m**2 * w / (420.0 * math.pi**2 * bath.rho * bath.u**3) * bracket
    j = bath.scale * j / MEV
    if w_arr.ndim == 0:
        return float(j)
    return j


def piezo_small_omega(bath: PhononBath, omega):
    """Zero-field small-omega limit M^2 w^5 (l_c^2 - l_v^2)^2 / (6720 pi^2 rho u^7), in meV."""
    w = np.asarray(omega, dtype=float) * MEV / HBAR_SI
    lc = (bath.l_c if bath.l_c is not None else bath.l) * 1e-9
    lv = (bath.l_v if bath.l_v is not None else bath.l) * 1e-9
    j = bath.piezo_m**2 * w**5 * (lc**2 - lv**2) ** 2 / (6720.0 * math.pi**2 * bath.rho * bath.u**7)
    return bath.scale * j / MEV


def small_omega_slope(bath: PhononBath) -> float:
    """Log-log slope of J over [omega_l/1e4, omega_l/1e2]."""
    grid = np.geomspace(bath.omega_l * 1e-4, bath.omega_l * 1e-2, 41)
    j = spectral_j(replace(bath, scale=1.0), grid)
    if np.any(j <= 0):
        return math.inf  # J vanishes identically at small omega
    slope, _ = np.polyfit(np.log(grid), np.log(j), 1)
    return float(slope)


def bose_n(omega, temperature: float):
    """Bose occupation for omega in meV and temperature in K."""
    w = np.asarray(omega, dtype=float)
    if np.any(~(w > 0)):
        raise NonpositiveFrequency("omega must be positive")
    if temperature < 0:
        raise ConfigError("temperature must be non-negative")
    if temperature == 0:
        n = np.zeros_like(w)
    else:
        with np.errstate(over="ignore"):
            n = 1.0 / np.expm1(w / (KB * temperature))
    return float(n) if w.ndim == 0 else n


def _thermal_factor(omega, temperature):
    """1 + 2N(omega), also well defined as omega -> 0 for the integrands."""
    if temperature == 0:
        return 1.0
    x = omega / (KB * temperature)
    if x < 1e-8:
        return 2.0 / x
    return 1.0 / math.tanh(0.5 * x)


def _quad(fn, upper, rel_tol=1e-9, points=None):
    value, err = integrate.quad(fn, 0.0, upper, epsabs=0.0, epsrel=rel_tol, limit=500, points=points)
    return value


def _require_superohmic(bath: PhononBath, minimum: float) -> None:
    if bath.scale == 0:
        return
    s = small_omega_slope(bath)
    if not s > minimum:
        raise DivergentIntegral(f"J ~ omega^{s:.2f} makes the integral diverge (needs s > {minimum})")


def huang_rhys_exponent(bath: PhononBath, temperature: float | None = None, rel_tol: float = 1e-9) -> float:
    """1/2 int J(w)/w^2 (1 + 2N(w)) dw (dimensionless)."""
    temp = bath.temperature if temperature is None else temperature
    if bath.scale == 0:
        return 0.0
    _require_superohmic(bath, 2.0 if temp > 0 else 1.0)
    upper = CUTOFF_MULTIPLE * bath.omega_l

    def integrand(w):
        if w == 0:
            return 0.0
        return spectral_j(bath, w) / w**2 * _thermal_factor(w, temp)

    return 0.5 * _quad(integrand, upper, rel_tol)


def renormalized_rabi(omega: float, bath: PhononBath, temperature: float | None = None) -> float:
    """Omega exp(-1/2 int J/w^2 (1+2N) dw)."""
    return omega * math.exp(-huang_rhys_exponent(bath, temperature))


def polaron_integral(bath: PhononBath, power: int, rel_tol: float = 1e-9) -> float:
    """int J(w) / w^power dw over [0, 10 omega_l]."""
    if bath.scale == 0:
        return 0.0
    _require_superohmic(bath, power)
    return _quad(lambda w: spectral_j(bath, w) / w**power if w > 0 else 0.0, CUTOFF_MULTIPLE * bath.omega_l, rel_tol)


def renormalized_detuning(delta: float, bath: PhononBath) -> float:
    """Delta - 1/2 int J/w dw."""
    return delta - 0.5 * polaron_integral(bath, 1)


# ---------------------------------------------------------------------------
# branch couplings and the fidelity matrix


@dataclass
class BranchCouplingRecord:
    """Exciton weights f[branch, dot, time] on a uniform time grid (ps)."""

    times: np.ndarray
    weights: np.ndarray
    labels: tuple = ()
    separation: float = 0.0  # nm, two dots only

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 2:
            w = w[:, None, :]
        if w.ndim != 3 or w.shape[2] != len(self.times):
            raise DimensionMismatch("weights must be (branch, dot, time)")
        self.weights = w
        if len(self.times) < 8:
            raise ConfigError("time grid too short")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0) or steps[0] <= 0:
            raise ConfigError("time grid must be uniform and increasing")
        if np.any(np.abs(w) > 1.0 + 1e-9):
            raise ConfigError("branch weights must lie in [-1, 1]")
        if not self.labels:
            self.labels = tuple(str(i) for i in range(w.shape[0]))
        if self.separation < 0:
            raise ConfigError("separation must be non-negative")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_branches(self) -> int:
        return self.weights.shape[0]

    @property
    def n_dots(self) -> int:
        return self.weights.shape[1]

    def coarsened(self) -> "BranchCouplingRecord":
        """Every other sample, used for the resolution check."""
        return BranchCouplingRecord(self.times[::2], self.weights[:, :, ::2], self.labels, self.separation)


def dressed_record(times, omega, detuning) -> BranchCouplingRecord:
    """Single-dot record with branches (+, -): f+ = cos^2(theta/2), f- = sin^2(theta/2).

    Both weights are the exciton population of the dressed state, so that
    a = f+ - f- = cos(theta).
    """
    theta = np.arctan2(np.asarray(omega, dtype=float), -np.asarray(detuning, dtype=float))
    f_plus = np.cos(theta / 2.0) ** 2
    f_minus = np.sin(theta / 2.0) ** 2
    return BranchCouplingRecord(times, np.stack([f_plus, f_minus]), ("+", "-"))


def gate_record(records, separation: float = 0.0) -> BranchCouplingRecord:
    """Two-dot record from gate branch records (branches 00, 01, 10, 11)."""
    weights = np.stack([records.exciton_a.T, records.exciton_b.T], axis=1)
    return BranchCouplingRecord(records.times, np.clip(weights, 0.0, 1.0), ("00", "01", "10", "11"), separation)


def _edge_taper(n: int, fraction: float = 0.05) -> np.ndarray:
    """Flat window with Hann-shaped edges over ``fraction`` of the grid at each end."""
    taper = np.ones(n)
    m = max(int(fraction * n), 1)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / m))
    taper[:m] = ramp
    taper[n - m:] = ramp[::-1]
    return taper


class _Spectrum:
    """Windowed transform a(w) = int a(t) w(t) e^{-i w t/hbar} dt of a sampled signal.

    w(t) is flat with Hann-shaped edges over 5% of the record at each end,
    so the gate is observed over its record window only; no amplitude
    correction is needed for the flat interior.

    With ``extend_tails`` the signal is instead taken to keep its end values
    forever: the derivative is transformed and divided by i w/hbar, which is
    the exact infinite-line transform for w > 0 (the constant tails only
    contribute at w = 0).
    """

    def __init__(self, times, signal, extend_tails: bool = False):
        self.times = times
        self.dt = float(times[1] - times[0])
        signal = np.asarray(signal, dtype=float)
        self.extend_tails = extend_tails
        if extend_tails:
            signal = np.gradient(signal, self.dt)
        self.signal = signal * _edge_taper(len(times))
        self.zero = not np.any(self.signal)

    def __call__(self, omega: float) -> complex:
        if self.zero:
            return 0.0
        k = omega / HBAR
        ft = np.dot(self.signal, np.exp(-1j * k * self.times)) * self.dt
        return ft / (1j * k) if self.extend_tails else ft


def _gamma_integral(bath, temperature, spectra_fn, rel_tol):
    """1/(2 hbar^2) int J(w) |A(w)|^2 (1 + 2N) dw for a combined amplitude A."""
    upper = CUTOFF_MULTIPLE * bath.omega_l

    def integrand(w):
        if w == 0:
            return 0.0
        return spectral_j(bath, w) * spectra_fn(w) * _thermal_factor(w, temperature)

    return 0.5 / HBAR**2 * _quad(integrand, upper, rel_tol)


def _pair_amplitude(record, alpha, beta, topology, sound_speed, extend_tails=False):
    """Callable w -> weight W(w) with Gamma = 1/(2 hbar^2) int J W (1+2N) dw."""
    a = record.weights[alpha] - record.weights[beta]  # (dot, time)
    spectra = [_Spectrum(record.times, a[nu], extend_tails) for nu in range(record.n_dots)]
    if record.n_dots == 1:
        return lambda w: abs(spectra[0](w)) ** 2
    if topology == "separate":
        return lambda w: sum(abs(s(w)) ** 2 for s in spectra)
    d_over_u = record.separation * 1e-9 / sound_speed  # s

    def combined(w):
        x = w * MEV / HBAR_SI * d_over_u
        return 0.5 * abs(spectra[0](w) * np.exp(1j * x) + spectra[1](w) * np.exp(-1j * x)) ** 2

    return combined


def dephasing_gamma(
    record: BranchCouplingRecord,
    alpha: int,
    beta: int,
    bath: PhononBath,
    temperature: float | None = None,
    topology: str = "common",
    rel_tol: float = 1e-9,
    extend_tails: bool = False,
) -> float:
    """Gamma for the branch pair (alpha, beta).

    One dot: 1/2 int J |a(w)|^2 (1+2N) dw. Two dots sharing a bath, with the
    dots at -d/2 and +d/2: 1/4 int J |a_a e^{iwd/u} + a_b e^{-iwd/u}|^2 (1+2N) dw,
    which reduces to int J cos^2(wd/u) |a|^2 (1+2N) dw for a_a = a_b. Two
    dots with separate baths: the sum of single-dot exponents.
    """
    if topology not in TOPOLOGIES:
        raise ConfigError(f"unknown bath topology {topology!r}")
    temp = bath.temperature if temperature is None else temperature
    if temp < 0:
        raise ConfigError("temperature must be non-negative")
    if alpha == beta or bath.scale == 0:
        return 0.0
    weight = _pair_amplitude(record, alpha, beta, topology, bath.u, extend_tails)
    return _gamma_integral(bath, temp, weight, rel_tol)


def _gauss_legendre_panels(upper: float, panels: int, order: int = 16):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def phonon_phase(record: BranchCouplingRecord, alpha: int, beta: int, bath: PhononBath, panels: int | None = None) -> float:
    """Phonon contribution to phi_ab (single-dot records, rad).

    phi_b - phi_a + int dt int dt' f_a(t) f_b(t') S(t - t'), with
    phi_x = int dt int_{t' < t} dt' f_x(t) f_x(t') S(t - t') and
    S(tau) = int J(w) sin(w tau/hbar) dw / hbar^2. The frequency integral
    uses a composite 16-point Gauss-Legendre rule, vectorised over nodes,
    with about one panel per five oscillations of the kernel in frequency.
    """
    if bath.scale == 0 or alpha == beta:
        return 0.0
    t = record.times
    dt = record.dt
    fa = record.weights[alpha].sum(axis=0)
    fb = record.weights[beta].sum(axis=0)
    upper = CUTOFF_MULTIPLE * bath.omega_l
    if panels is None:
        periods = upper * (t[-1] - t[0]) / (2.0 * math.pi * HBAR)
        panels = max(20, math.ceil(periods / 5.0))
    nodes, weights = _gauss_legendre_panels(upper, panels)
    total = 0.0
    for chunk in range(0, len(nodes), 128):
        w = nodes[chunk:chunk + 128]
        e = np.exp(1j * np.outer(w / HBAR, t))  # (node, time)
        ga = e @ fa * dt
        gb = e @ fb * dt
        cross = np.imag(ga * np.conj(gb))

        def ordered(f):
            g = f[None, :] * np.conj(e)
            inner = (np.cumsum(g, axis=1) - 0.5 * g) * dt
            return np.imag(np.sum(f[None, :] * e * inner, axis=1) * dt)

        kernel = ordered(fb) - ordered(fa) + cross
        total += float(np.sum(weights[chunk:chunk + 128] * spectral_j(bath, w) * kernel))
    return total / HBAR**2


def dephasing_exponent(
    record: BranchCouplingRecord,
    alpha: int,
    beta: int,
    bath: PhononBath,
    temperature: float | None = None,
    topology: str = "common",
    with_phase: bool = True,
    check_resolution: bool = True,
    rel_tol: float = 1e-9,
    extend_tails: bool = False,
) -> tuple[float, float]:
    """(Gamma_ab, phonon phase phi_ab) for one branch pair.

    With ``check_resolution`` the exponent is recomputed on a grid with
    twice the step; a change above 1% raises UnresolvedSpectrum.
    """
    gamma = dephasing_gamma(record, alpha, beta, bath, temperature, topology, rel_tol, extend_tails)
    if check_resolution and gamma > 0:
        coarse = dephasing_gamma(record.coarsened(), alpha, beta, bath, temperature, topology, rel_tol, extend_tails)
        if abs(coarse - gamma) > 0.01 * gamma:
            raise UnresolvedSpectrum(f"Gamma changes by {abs(coarse - gamma) / gamma:.2%} when dt doubles")
    phase = phonon_phase(record, alpha, beta, bath) if with_phase and record.n_dots == 1 else 0.0
    return gamma, phase


def dephasing_linear_sweep(omega: float, sweep_rate: float, bath: PhononBath, temperature: float | None = None, rel_tol: float = 1e-10) -> float:
    """1/2 int (Omega/(hbar Ddot))^2 J(w) K1(w/w_m)^2 (1+2N) dw with w_m = hbar Ddot/Omega."""
    if not (omega > 0 and sweep_rate > 0):
        raise ConfigError("omega and sweep_rate must be positive")
    temp = bath.temperature if temperature is None else temperature
    if bath.scale == 0:
        return 0.0
    w_m = HBAR * sweep_rate / omega
    tau2 = (omega / sweep_rate) ** 2  # ps^2

    def x_k1_squared(x):
        if x < 1e-3:
            # x K1(x) = 1 + (x^2/2)(ln(x/2) + gamma - 1/2) + O(x^4 ln x)
            return (1.0 + 0.5 * x * x * (math.log(0.5 * x) + np.euler_gamma - 0.5)) ** 2
        return (x * special.k1(x)) ** 2

    def integrand(w):
        if w == 0:
            return 0.0
        x = w / w_m
        return spectral_j(bath, w) * x_k1_squared(x) / x**2 * _thermal_factor(w, temp)

    upper = CUTOFF_MULTIPLE * bath.omega_l
    points = [w_m] if w_m < upper else None
    return 0.5 * tau2 / HBAR**2 * _quad(integrand, upper, rel_tol, points)


def two_dot_dephasing(
    record: BranchCouplingRecord,
    alpha: int,
    beta: int,
    bath: PhononBath,
    temperature: float | None = None,
    separation: float | None = None,
    topology: str = "common",
    rel_tol: float = 1e-9,
) -> float:
    """Gamma for a branch pair of a two-dot record at the given separation (nm)."""
    if record.n_dots != 2:
        raise DimensionMismatch("two_dot_dephasing needs a two-dot record")
    if separation is not None:
        record = BranchCouplingRecord(record.times, record.weights, record.labels, separation)
    return dephasing_gamma(record, alpha, beta, bath, temperature, topology, rel_tol)


@dataclass
class FidelityMatrix:
    """T_ab = exp(-Gamma_ab + i phi_ab) over logical branches."""

    matrix: np.ndarray
    zero: np.ndarray
    phases: np.ndarray = field(default=None)

    @classmethod
    def from_exponents(cls, gammas, phonon_phases=None, bare_phases=None) -> "FidelityMatrix":
        gammas = np.asarray(gammas, dtype=float)
        n = gammas.shape[0]
        if gammas.shape != (n, n):
            raise DimensionMismatch("gamma matrix must be square")
        ph = np.zeros((n, n)) if phonon_phases is None else np.asarray(phonon_phases, dtype=float)
        bare = np.zeros(n) if bare_phases is None else np.asarray(bare_phases, dtype=float)
        bare_diff = bare[None, :] - bare[:, None]
        zero = np.exp(1j * bare_diff)
        return cls(matrix=zero * np.exp(-gammas + 1j * ph), zero=zero, phases=bare_diff + ph)


def branch_exponents(record, bath, temperature=None, topology="common", with_phase=False, rel_tol=1e-9, check_resolution=False):
    """Symmetric Gamma matrix and antisymmetric phonon-phase matrix over all branch pairs."""
    n = record.n_branches
    gammas = np.zeros((n, n))
    phases = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            g, p = dephasing_exponent(record, i, j, bath, temperature, topology, with_phase, check_resolution, rel_tol)
            gammas[i, j] = gammas[j, i] = g
            phases[i, j], phases[j, i] = p, -p
    return gammas, phases


def infidelity_search(difference: np.ndarray, n_random: int = 1000, seed: int = 0) -> float:
    """max |c^dagger M c| over unit c by random starts plus local refinement."""
    from scipy.optimize import minimize

    m = np.asarray(difference, dtype=complex)
    n = m.shape[0]
    rng = np.random.default_rng(seed)

    def value(c):
        return abs(np.vdot(c, m @ c)) / np.vdot(c, c).real

    starts = rng.normal(size=(n_random, n)) + 1j * rng.normal(size=(n_random, n))
    scores = [value(c) for c in starts]
    best = max(scores)
    for idx in np.argsort(scores)[-10:]:
        x0 = np.concatenate([starts[idx].real, starts[idx].imag])
        res = minimize(lambda x: -value(x[:n] + 1j * x[n:]), x0, method="BFGS")
        best = max(best, -res.fun)
    return float(best)


def infidelity(t_with, t_zero, cross_check: bool = False) -> float:
    """Largest |eigenvalue| of T(lambda) - T(0).

    Fidelity matrices are Hermitian, so the difference is normal (also after
    a global phase) and its spectral radius equals
    max |c^dagger (T(lambda) - T(0)) c| over normalised c. With
    ``cross_check`` the maximum is also found by direct search and a
    RuntimeWarning is issued if the two disagree by more than 1e-6.
    """
    a = t_with.matrix if isinstance(t_with, FidelityMatrix) else np.asarray(t_with, dtype=complex)
    b = t_zero.matrix if isinstance(t_zero, FidelityMatrix) else np.asarray(t_zero, dtype=complex)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"fidelity matrices {a.shape} and {b.shape} do not match")
    diff = a - b
    if np.allclose(diff, diff.conj().T, rtol=0.0, atol=1e-14):
        f = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    else:
        f = float(np.max(np.abs(np.linalg.eigvals(diff))))
    if cross_check:
        searched = infidelity_search(diff)
        if abs(searched - f) > 1e-6:
            warnings.warn(f"spectral infidelity {f} differs from search {searched}", RuntimeWarning, stacklevel=2)
    return f


# ---------------------------------------------------------------------------
# closed-form estimates


def lz_phonon_assisted(omega: float, sweep_rate: float, bath: PhononBath, alpha: float = 1.0) -> float:
    """Order-of-magnitude estimate (J(w_m)/Omega) exp(-alpha Omega^2/(hbar Ddot))."""
    if not omega > 0:
        raise ConfigError("omega must be positive")
    if sweep_rate <= 0:
        return 0.0
    w_m = HBAR * sweep_rate / omega
    return spectral_j(bath, w_m) / omega * math.exp(-alpha * omega**2 / (HBAR * sweep_rate))


def rabi_damping_rate(omega: float, bath: PhononBath) -> float:
    """Golden-rule damping J(Omega)/hbar in ps^-1."""
    if not omega > 0:
        raise ConfigError("omega must be positive")
    return spectral_j(bath, omega) / HBAR


def rabi_ground_population(t, omega: float, bath: PhononBath, phase: float = 0.0, temperature: float | None = None):
    """1/2 [1 + cos(Omega~ t/hbar + phase) e^{-Gamma t}] with t in ps."""
    t = np.asarray(t, dtype=float)
    omega_r = renormalized_rabi(omega, bath, temperature)
    return 0.5 * (1.0 + np.cos(omega_r * t / HBAR + phase) * np.exp(-rabi_damping_rate(omega, bath) * t))


def optical_phonon_suppression(omega_gap: float, omega_m: float, j0: float) -> float:
    """(J0/w0) exp(-w0/w_m) for a gapped bath."""
    if not omega_gap > 0:
        raise ConfigError("optical gap must be positive")
    if omega_m <= 0:
        return 0.0
    return j0 / omega_gap * math.exp(-omega_gap / omega_m)


def perturbative_energy_shift(theta: float, delta: float, omega: float, bath: PhononBath, rel_tol: float = 1e-10) -> tuple[float, float]:
    """Second-order shifts int J/4 {(1 +- cos)^2/w + sin^2/(W + w)} dw with W = sqrt(Delta^2 + Omega^2)."""
    if bath.scale == 0:
        return 0.0, 0.0
    _require_superohmic(bath, 1.0)
    c, s = math.cos(theta), math.sin(theta)
    width = math.hypot(delta, omega)
    upper = CUTOFF_MULTIPLE * bath.omega_l

    def shift(sign):
        def integrand(w):
            if w == 0:
                return 0.0
            return 0.25 * spectral_j(bath, w) * ((1.0 + sign * c) ** 2 / w + s * s / (width + w))

        return _quad(integrand, upper, rel_tol)

    return shift(+1), shift(-1)


def renormalized_energy_shift(theta: float, delta: float, omega: float, bath: PhononBath) -> tuple[float, float]:
    """Adiabatic-expansion shifts 1/2 (1 +- cos) int J/w - (sin^2/4) W int J/w^2."""
    if bath.scale == 0:
        return 0.0, 0.0
    c, s = math.cos(theta), math.sin(theta)
    width = math.hypot(delta, omega)
    i1 = polaron_integral(bath, 1)
    i2 = polaron_integral(bath, 2)
    tail = 0.25 * s * s * width * i2
    return 0.5 * (1.0 + c) * i1 - tail, 0.5 * (1.0 - c) * i1 - tail


def expansion_parameter(bath: PhononBath) -> float:
    """J(omega_l)/omega_l."""
    return spectral_j(bath, bath.omega_l) / bath.omega_l


REFERENCES = ("vacuum", "bare")


def gate_infidelity(
    record: BranchCouplingRecord,
    bath: PhononBath,
    temperature: float | None = None,
    topology: str = "common",
    reference: str = "vacuum",
    rel_tol: float = 1e-9,
) -> tuple[float, np.ndarray]:
    """Infidelity of a multi-branch record and its Gamma matrix at ``temperature``.

    ``reference="bare"`` compares against the phonon-free matrix T(0).
    ``reference="vacuum"`` compares against the same gate dressed by the
    zero-temperature bath, so only thermally excited phonons count. Phonon
    phases do not depend on temperature and cancel in the vacuum reference;
    they are left out of both.
    """
    if reference not in REFERENCES:
        raise ConfigError(f"unknown reference {reference!r}")
    temp = bath.temperature if temperature is None else temperature
    gammas, _ = branch_exponents(record, bath, temp, topology, rel_tol=rel_tol)
    t_with = FidelityMatrix.from_exponents(gammas)
    if reference == "bare":
        return infidelity(t_with, t_with.zero), gammas
    if temp == 0:
        return 0.0, gammas
    vacuum, _ = branch_exponents(record, bath, 0.0, topology, rel_tol=rel_tol)
    return infidelity(t_with, FidelityMatrix.from_exponents(vacuum).matrix), gammas
