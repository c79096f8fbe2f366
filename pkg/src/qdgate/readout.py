"""Quantum-jump spin readout with hole mixing.

A resonant laser drives |1> -> |x> (and, through hole mixing, |0> -> |x>).
Between photon emissions the 3x3 conditional density matrix follows the
no-jump evolution

    d rho/dt = -i (K rho - rho K^dagger),
    K = -(Omega/2hbar)(|x><1| + eps|x><0| + h.c.) - i (1+eps^2) kappa/2 |x><x|,

which reproduces the six component equations term by term (the sign of the
drive is the one that matches them; populations do not depend on it).
The trace of the conditional state is the probability that no photon has
been emitted yet. Emissions are indistinguishable between the two decay
channels, so after a jump the dot is reset to |0> with probability
eps^2/(1+eps^2) and to |1> otherwise.

Rates are in ns^-1 and times in ns; Omega is given in meV.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from qdgate.errors import ConfigError, NonUnimodal, StepTooLarge
from qdgate.units import HBAR, PS_PER_NS


@dataclass(frozen=True)
class ReadoutConfig:
    omega: float = 3.0  # meV
    kappa: float = 1.0  # ns^-1
    epsilon: float = 0.1
    eta: float = 1.0
    t_max: float = 100.0  # ns
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("omega", "kappa", "epsilon", "eta", "t_max"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.omega < 0 or self.t_max <= 0:
            raise ConfigError("omega must be non-negative and t_max positive")

    @property
    def drive_rate(self) -> float:
        """Omega / (2 hbar) in ns^-1."""
        return self.omega / (2.0 * HBAR) * PS_PER_NS

    @property
    def decay_rate(self) -> float:
        return (1.0 + self.epsilon**2) * self.kappa


def effective_generator(cfg: ReadoutConfig) -> np.ndarray:
    """Non-Hermitian generator K (ns^-1) of the no-jump evolution."""
    a = cfg.drive_rate
    k = np.zeros((3, 3), dtype=complex)
    k[2, 1] = k[1, 2] = -a
    k[2, 0] = k[0, 2] = -a * cfg.epsilon
    k[2, 2] = -0.5j * cfg.decay_rate
    return k


def max_step(cfg: ReadoutConfig) -> float:
    """Largest dt accepted by :func:`no_jump_evolve` (ns)."""
    scales = [1.0 / cfg.kappa]
    if cfg.omega > 0:
        scales.append(HBAR / cfg.omega / PS_PER_NS)
    return min(scales) / 50.0


def no_jump_evolve(rho: np.ndarray, cfg: ReadoutConfig, dt: float) -> np.ndarray:
    """Advance the conditional density matrix by ``dt`` ns without a photon."""
    if dt < 0:
        raise ConfigError("dt must be non-negative")
    if dt > max_step(cfg) * (1 + 1e-12):
        raise StepTooLarge(f"dt = {dt} ns exceeds {max_step(cfg)} ns")
    v = expm(-1j * effective_generator(cfg) * dt)
    return v @ np.asarray(rho, dtype=complex) @ v.conj().T


class _Propagator:
    """Closed-form no-jump amplitudes via the eigenbasis of K.

    The conditional state stays pure when it starts pure, so
    P(t) = |V(t) psi|^2 with V(t) = S exp(-i lambda t) S^-1. Eigenvalues with
    vanishing imaginary part are dark: they carry the long-time plateau, and
    the remainder is kept separately so that P(t) - P(inf) is computed
    without cancellation.
    """

    def __init__(self, cfg: ReadoutConfig):
        self.cfg = cfg
        k = effective_generator(cfg)
        lam, s = np.linalg.eig(k)
        scale = max(1.0, float(np.abs(k).max()))
        self.dark = np.abs(lam) <= 1e-12 * scale
        self.lam = np.where(self.dark, 0.0, lam)
        self.s = s
        self.s_inv = np.linalg.inv(s)
        self.well_conditioned = np.linalg.cond(s) < 1e8
        self.k = k

    def amplitudes(self, alpha: int, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w = self.s_inv[:, alpha]
        phases = np.exp(-1j * np.outer(t, self.lam))  # (nt, 3)
        return (phases * w) @ self.s.T  # (nt, 3)

    def plateau(self, alpha: int) -> float:
        w = self.s_inv[:, alpha] * self.dark
        return float(np.sum(np.abs(self.s @ w) ** 2))

    def transient(self, alpha: int, t) -> np.ndarray:
        """P_alpha(t) - P_alpha(inf)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w = self.s_inv[:, alpha]
        stat = self.s @ (w * self.dark)
        decaying = (np.exp(-1j * np.outer(t, self.lam)) * (w * ~self.dark)) @ self.s.T
        return 2.0 * np.real(decaying @ stat.conj()) + np.sum(np.abs(decaying) ** 2, axis=1)

    def survival(self, alpha: int, t) -> np.ndarray:
        if not self.well_conditioned:
            return _survival_expm(self.k, alpha, t)
        return self.plateau(alpha) + self.transient(alpha, t)

    def slowest_decay(self) -> float:
        rates = -2.0 * self.lam.imag[~self.dark]
        rates = rates[rates > 0]
        return float(rates.min()) if rates.size else math.inf


def _survival_expm(k, alpha, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(len(t))
    for i, ti in enumerate(t):
        out[i] = float(np.sum(np.abs(expm(-1j * k * ti)[:, alpha]) ** 2))
    return out


def survival_probability(alpha: int, cfg: ReadoutConfig, t):
    """Probability that no photon has been emitted by time ``t`` (ns) from |alpha>."""
    if alpha not in (0, 1, 2):
        raise ConfigError("alpha must index a basis state")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError("t must be non-negative")
    values = np.clip(_Propagator(cfg).survival(alpha, t_arr.ravel()), 0.0, 1.0)
    if t_arr.ndim == 0:
        return float(values[0])
    return values.reshape(t_arr.shape)


def collapse_probabilities(epsilon: float) -> tuple[float, float]:
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    e2 = epsilon * epsilon
    p0 = e2 / (1.0 + e2)
    return p0, 1.0 - p0


def post_first_jump_survival(cfg: ReadoutConfig, t_since_jump):
    """No-emission probability after a jump; the same for either initial state."""
    e2 = cfg.epsilon**2
    p0 = survival_probability(0, cfg, t_since_jump)
    p1 = survival_probability(1, cfg, t_since_jump)
    return (e2 * p0 + p1) / (1.0 + e2)


@dataclass
class TrajectoryRecord:
    emission_times: np.ndarray  # ns, strictly increasing
    collapsed_to: np.ndarray  # 0 or 1 after each emission
    detected: np.ndarray  # bool per emission
    initial: int = 1

    def first_bunch_size(self) -> int:
        """Photons emitted up to and including the first reset to |0>.

        If the dot never resets to |0> (it falls dark without a photon, or
        t_max is reached) every emission counts.
        """
        hits = np.flatnonzero(self.collapsed_to == 0)
        return int(hits[0] + 1) if hits.size else int(len(self.emission_times))


class _WaitingTimeTable:
    """Tabulated inverse of the monotone survival curve of one initial state.

    Survival decreases in a staircase at the Rabi period, so the grid is
    tied to that period and extends until the transient part has decayed
    below 1e-14. Thresholds falling beyond the table are located by
    bisection on the closed form.
    """

    def __init__(self, prop: _Propagator, alpha: int, horizon: float, points_per_period: int = 40):
        self.prop = prop
        self.alpha = alpha
        self.plateau = prop.plateau(alpha) if prop.well_conditioned else 0.0
        omega_eff = prop.cfg.drive_rate * 2.0 * math.sqrt(1.0 + prop.cfg.epsilon**2)
        fastest = max(omega_eff, prop.cfg.decay_rate, 1e-9)
        dt = 2.0 * math.pi / fastest / points_per_period
        slow = prop.slowest_decay()
        t_end = min(horizon, 35.0 / slow if math.isfinite(slow) else horizon)
        n = int(min(max(math.ceil(t_end / dt), 16), 5_000_000))
        self.times = np.linspace(0.0, t_end, n + 1)
        surv = prop.survival(alpha, self.times)
        # enforce exact monotonicity against rounding noise
        self.values = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
        self._ascending = -self.values
        self.t_end = t_end
        self.horizon = horizon

    def waiting_time(self, u: float) -> float:
        """Time at which survival first drops to ``u``; inf if it never does."""
        if u <= self.plateau:
            return math.inf
        vals = self.values
        if u >= vals[0]:
            return 0.0
        if u >= vals[-1]:
            # vals is non-increasing; find first index with vals <= u
            idx = int(np.searchsorted(self._ascending, -u, side="left"))
            t0, t1 = self.times[idx - 1], self.times[idx]
            v0, v1 = vals[idx - 1], vals[idx]
            return float(t0 + (t1 - t0) * (v0 - u) / (v0 - v1)) if v0 != v1 else float(t1)
        return self._bisect(u)

    def _bisect(self, u: float) -> float:
        lo, hi = self.t_end, self.t_end
        while self.prop.survival(self.alpha, hi)[0] > u:
            lo, hi = hi, 2.0 * hi
            if hi > self.horizon * 4:
                return math.inf
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.prop.survival(self.alpha, mid)[0] > u:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return 0.5 * (lo + hi)


@dataclass
class TrajectorySampler:
    """Reusable waiting-time tables for repeated trajectory sampling."""

    cfg: ReadoutConfig
    tables: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        prop = _Propagator(self.cfg)
        self.tables = {a: _WaitingTimeTable(prop, a, self.cfg.t_max) for a in (0, 1)}

    def sample(self, initial: int, rng: np.random.Generator) -> TrajectoryRecord:
        if initial not in (0, 1):
            raise ConfigError("initial state must be 0 or 1")
        p0, _ = collapse_probabilities(self.cfg.epsilon)
        times, collapsed = [], []
        state, t = initial, 0.0
        while True:
            wait = self.tables[state].waiting_time(rng.random())
            t = t + wait
            if not t <= self.cfg.t_max:
                break
            state = 0 if rng.random() < p0 else 1
            times.append(t)
            collapsed.append(state)
        detected = rng.random(len(times)) < self.cfg.eta
        return TrajectoryRecord(
            emission_times=np.array(times, dtype=float),
            collapsed_to=np.array(collapsed, dtype=int),
            detected=detected,
            initial=initial,
        )


def simulate_trajectory(cfg: ReadoutConfig, initial: int, rng: np.random.Generator) -> TrajectoryRecord:
    """One photon-emission record by the waiting-time method."""
    return TrajectorySampler(cfg).sample(initial, rng)


def simulate_ensemble(cfg: ReadoutConfig, initial: int, n: int, base_seed: int | None = None) -> list[TrajectoryRecord]:
    """``n`` trajectories, trajectory i seeded with base_seed + i."""
    base = cfg.seed if base_seed is None else base_seed
    sampler = TrajectorySampler(cfg)
    return [sampler.sample(initial, np.random.default_rng(base + i)) for i in range(n)]


def detection_error(epsilon: float, eta: float, n_terms: float = math.inf) -> float:
    """Probability that the spin flips to |0> after only undetected photons."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigError("eta must lie in [0, 1]")
    if not (n_terms == math.inf or n_terms >= 0):
        raise ConfigError("n_terms must be non-negative or inf")
    e2 = epsilon * epsilon
    if e2 == 0.0:
        return 0.0
    ratio = (1.0 - eta) / (1.0 + e2)
    tail = 0.0 if n_terms == math.inf else ratio ** (n_terms + 1)
    return e2 * (1.0 - eta) / (e2 + eta) * (1.0 - tail)


@dataclass
class MeasurementOptimum:
    t_opt: float
    error: float
    at_boundary: bool
    method: str


def measurement_error(cfg: ReadoutConfig, t):
    """err1 = P1(t) (no photon from |1>), err0 = 1 - P0(t) (a photon from |0>).

    Returns (err1, err0). Both are assembled from plateau plus transient so
    that their sum is monotone to rounding whenever the exact sum is.
    """
    prop = _Propagator(cfg)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if prop.well_conditioned:
        err1 = prop.plateau(1) + prop.transient(1, t)
        err0 = (1.0 - prop.plateau(0)) - prop.transient(0, t)
    else:
        err1 = _survival_expm(prop.k, 1, t)
        err0 = 1.0 - _survival_expm(prop.k, 0, t)
    return err1, err0


def _total_error(cfg):
    prop = _Propagator(cfg)
    floor = prop.plateau(1) + 1.0 - prop.plateau(0)

    def total(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not prop.well_conditioned:
            return _survival_expm(prop.k, 1, t) + 1.0 - _survival_expm(prop.k, 0, t)
        return floor + (prop.transient(1, t) - prop.transient(0, t))

    return total


def grid_scan_optimum(cfg: ReadoutConfig, n_points: int = 10_000) -> MeasurementOptimum:
    total = _total_error(cfg)
    grid = np.linspace(0.0, cfg.t_max, n_points + 1)[1:]
    values = total(grid)
    i = int(np.argmin(values))  # first occurrence: shortest time wins ties
    return MeasurementOptimum(float(grid[i]), float(values[i]), i == len(grid) - 1, "grid")


def optimize_measurement_time(cfg: ReadoutConfig, tol: float = 1e-6) -> MeasurementOptimum:
    """Minimise err1 + err0 over (0, t_max] by golden-section search.

    Ties go to the shorter time, so on a saturated objective the result is
    the earliest time at which the error floor is reached. A bracket is
    first located on a coarse grid; if the coarse values are not unimodal a
    :class:`NonUnimodal` warning is issued and the 10^4-point grid scan is
    returned instead.
    """
    total = _total_error(cfg)
    coarse = np.linspace(0.0, cfg.t_max, 201)[1:]
    values = total(coarse)
    i = int(np.argmin(values))
    diffs = np.diff(values)
    down = diffs[:i] <= 0
    up = diffs[i:] >= 0
    if not (down.all() and up.all()):
        warnings.warn("measurement error is not unimodal; using grid scan", NonUnimodal, stacklevel=2)
        return grid_scan_optimum(cfg)
    a = coarse[i - 1] if i > 0 else 0.0
    b = coarse[i + 1] if i + 1 < len(coarse) else cfg.t_max
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = float(total(c)[0]), float(total(d)[0])
    while b - a > tol:
        if fd < fc:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = float(total(d)[0])
        else:  # ties keep the left part
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = float(total(c)[0])
    t_opt = 0.5 * (a + b)
    at_boundary = cfg.t_max - t_opt <= 2 * tol or cfg.epsilon == 0.0
    return MeasurementOptimum(t_opt, float(total(t_opt)[0]), at_boundary, "golden")
