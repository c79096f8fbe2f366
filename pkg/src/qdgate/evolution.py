"""Schroedinger propagation and the two-qubit gate protocols.

All propagation solves i hbar dpsi/dt = H(t) psi with energies in meV and
times in ps. The gate runners propagate the four logical branches |00>,
|01>, |10>, |11> of the full 9-level two-dot model together and extract the
conditional phase, leftover trion population and worst-case fidelity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from qdgate.errors import ConfigError, NonzeroMixing, StepLimitExceeded, ToleranceFailure
from qdgate.hamiltonians import (
    TWO_DOT_LABELS,
    DotModel,
    PulseSchedule,
    build_two_dot,
    dressed_angle,
    pulse_at,
)
from qdgate.units import HBAR

LOGICAL_INDEX = (0, 1, 3, 4)  # |00>, |01>, |10>, |11> in the 9-level basis
LOGICAL_LABELS = ("00", "01", "10", "11")
_EXCITON_A = np.array([lab[0] == "x" for lab in TWO_DOT_LABELS])
_EXCITON_B = np.array([lab[1] == "x" for lab in TWO_DOT_LABELS])
_XX = TWO_DOT_LABELS.index("xx")

Hamiltonian = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class PropagatorConfig:
    """Step control for :func:`propagate`.

    ``method`` is a scipy embedded Runge-Kutta pair ("DOP853" or "RK45") or
    "fixed" for classical RK4 with step ``dt``.
    """

    method: str = "DOP853"
    rtol: float = 1e-10
    atol: float = 1e-12
    dt: float | None = None
    max_steps: int = 1_000_000

    def __post_init__(self) -> None:
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.method == "fixed" and not (self.dt and self.dt > 0):
            raise ConfigError("fixed-step propagation needs dt > 0")
        if self.method not in ("DOP853", "RK45", "fixed"):
            raise ConfigError(f"unknown integrator {self.method!r}")


@dataclass
class Propagation:
    final: np.ndarray
    times: np.ndarray
    states: np.ndarray  # shape (len(times),) + psi0.shape
    nfev: int = 0


def _rk4(hamiltonian, psi0, t0, t1, dt, max_steps):
    n_steps = max(1, int(math.ceil(abs(t1 - t0) / dt)))
    if n_steps > max_steps:
        raise StepLimitExceeded(f"{n_steps} fixed steps exceed the limit {max_steps}")
    h = (t1 - t0) / n_steps
    grid = t0 + h * np.arange(n_steps + 1)

    def f(t, y):
        return -1j / HBAR * (hamiltonian(t) @ y)

    y = psi0.copy()
    ys = [y.copy()]
    for t in grid[:-1]:
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y.copy())
    return grid, np.array(ys)


def _interpolate(grid, ys, sample_times):
    flat = ys.reshape(len(grid), -1)
    order = np.argsort(grid)
    out = np.empty((len(sample_times), flat.shape[1]), dtype=complex)
    for j in range(flat.shape[1]):
        re = np.interp(sample_times, grid[order], flat[order, j].real)
        im = np.interp(sample_times, grid[order], flat[order, j].imag)
        out[:, j] = re + 1j * im
    return out.reshape((len(sample_times),) + ys.shape[1:])


def propagate(
    hamiltonian: Hamiltonian,
    psi0: np.ndarray,
    window: tuple[float, float],
    cfg: PropagatorConfig = PropagatorConfig(),
    sample_times=None,
) -> Propagation:
    """Integrate the Schroedinger equation over ``window`` (ps).

    ``psi0`` may be a vector or a matrix whose columns are propagated
    together. ``window`` may run backwards in time.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    t0, t1 = map(float, window)
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ConfigError("propagation window must be finite")
    norms = np.linalg.norm(psi0, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ConfigError("initial state must be normalised")
    if t0 == t1:
        return Propagation(psi0.copy(), np.array([t0]), psi0[None].copy())

    if cfg.method == "fixed":
        grid, ys = _rk4(hamiltonian, psi0, t0, t1, cfg.dt, cfg.max_steps)
        if sample_times is None:
            return Propagation(ys[-1].copy(), grid, ys)
        sample_times = np.asarray(sample_times, dtype=float)
        return Propagation(ys[-1].copy(), sample_times, _interpolate(grid, ys, sample_times))

    shape = psi0.shape
    counter = [0]
    # DOP853 spends 12 evaluations per step, RK45 six
    per_step = 12 if cfg.method == "DOP853" else 6
    limit = cfg.max_steps * per_step

    def rhs(t, y):
        counter[0] += 1
        if counter[0] > limit:
            raise StepLimitExceeded(f"more than {cfg.max_steps} integrator steps")
        return (-1j / HBAR * (hamiltonian(t) @ y.reshape(shape))).ravel()

    sol = solve_ivp(
        rhs,
        (t0, t1),
        psi0.ravel(),
        method=cfg.method,
        rtol=cfg.rtol,
        atol=cfg.atol,
        t_eval=None if sample_times is None else np.asarray(sample_times, dtype=float),
        dense_output=False,
    )
    if sol.status != 0:
        raise ToleranceFailure(sol.message)
    final = sol.y[:, -1].reshape(shape)
    if sample_times is not None and (len(sol.t) == 0 or sol.t[-1] != t1):
        # t_eval need not contain the endpoint; finish with a plain run
        end = solve_ivp(rhs, (t0, t1), psi0.ravel(), method=cfg.method, rtol=cfg.rtol, atol=cfg.atol)
        final = end.y[:, -1].reshape(shape)
    states = sol.y.T.reshape((len(sol.t),) + shape)
    return Propagation(final, sol.t, states, nfev=counter[0])


def gate_phase(phases) -> float:
    """phi00 - phi01 - phi10 + phi11 reduced to (-pi, pi]."""
    p00, p01, p10, p11 = (float(p) for p in phases)
    value = p00 - p01 - p10 + p11
    reduced = math.remainder(value, 2 * math.pi)
    if reduced <= -math.pi:
        reduced += 2 * math.pi
    return reduced


def _random_unit(rng, n=4):
    z = rng.normal(size=n) + 1j * rng.normal(size=n)
    return z / np.linalg.norm(z)


def _overlap_matrix(U, target_phases):
    U = np.asarray(U, dtype=complex)
    return np.exp(-1j * np.asarray(target_phases, dtype=float))[:, None] * U


def gate_fidelity_closed_system(U, target_phases, n_starts: int = 32, seed: int = 0) -> float:
    """Worst-case fidelity min_c |<chi~|U|chi>|^2 over normalised logical inputs.

    The target is the diagonal phase gate diag(exp(i target_phases)).
    Inputs are parametrised by 7 reals (c_0 real, c_1..c_3 complex) and the
    minimum is sought by quasi-Newton descent from ``n_starts`` random points.
    """
    m = _overlap_matrix(U, target_phases)
    dim = m.shape[0]

    def vec(p):
        c = np.empty(dim, dtype=complex)
        c[0] = p[0]
        c[1:] = p[1:dim] + 1j * p[dim:]
        return c / np.linalg.norm(c)

    def objective(p):
        c = vec(p)
        return abs(np.vdot(c, m @ c)) ** 2

    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(n_starts):
        c = _random_unit(rng, dim)
        c = c * np.exp(-1j * np.angle(c[0]))
        p0 = np.concatenate([[c[0].real], c[1:].real, c[1:].imag])
        res = minimize(objective, p0, method="BFGS", options={"gtol": 1e-12})
        best = min(best, float(res.fun), objective(p0))
    return min(1.0, max(0.0, best))


def haar_average_fidelity(U, target_phases, n_samples: int = 1000, seed: int = 0) -> float:
    """Mean of |<chi~|U|chi>|^2 over Haar-random logical inputs."""
    m = _overlap_matrix(U, target_phases)
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n_samples, m.shape[0])) + 1j * rng.normal(size=(n_samples, m.shape[0]))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    amps = np.einsum("ki,ij,kj->k", z.conj(), m, z)
    return float(np.mean(np.abs(amps) ** 2))


@dataclass
class BranchRecords:
    """Sampled per-branch observables of a gate run.

    Arrays indexed [time, branch] with branches ordered 00, 01, 10, 11.
    """

    times: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    amplitudes: np.ndarray  # <n|psi_n(t)>
    exciton_a: np.ndarray
    exciton_b: np.ndarray
    trion_trion: np.ndarray

    def gate_phase_series(self) -> np.ndarray:
        ph = np.unwrap(np.angle(self.amplitudes), axis=0)
        raw = ph[:, 0] - ph[:, 1] - ph[:, 2] + ph[:, 3]
        return raw


@dataclass
class GateResult:
    phases: np.ndarray
    gate_phase: float
    residual_exciton: np.ndarray  # per branch, population outside the logical subspace
    residual_trion_trion: np.ndarray  # per branch, population left in |xx>
    fidelity_no_bath: float
    logical_map: np.ndarray
    norm_drift: float
    branch_records: BranchRecords | None = None
    extras: dict = field(default_factory=dict)


def _cz_target(phases) -> np.ndarray:
    """Phase gate with the realised single-qubit phases and a conditional phase of pi."""
    p00, p01, p10, _ = phases
    return np.array([p00, p01, p10, p01 + p10 - p00 + math.pi])


def _summarise(final, records=None, extras=None) -> GateResult:
    idx = list(LOGICAL_INDEX)
    u = final[idx, :]
    phases = np.angle(np.diag(u))
    pops = np.abs(final) ** 2
    logical_pop = pops[idx, :].sum(axis=0)
    residual = np.clip(1.0 - logical_pop, 0.0, 1.0)
    xx = pops[_XX, :]
    drift = float(np.max(np.abs(np.linalg.norm(final, axis=0) - 1.0)))
    fid = gate_fidelity_closed_system(u, _cz_target(phases))
    return GateResult(
        phases=phases,
        gate_phase=gate_phase(phases),
        residual_exciton=residual,
        residual_trion_trion=xx,
        fidelity_no_bath=fid,
        logical_map=u,
        norm_drift=drift,
        branch_records=records,
        extras=extras or {},
    )


def _records(times, states, omega, delta) -> BranchRecords:
    pops = np.abs(states) ** 2  # (nt, 9, 4)
    amps = np.stack([states[:, LOGICAL_INDEX[k], k] for k in range(4)], axis=1)
    return BranchRecords(
        times=np.asarray(times),
        omega=np.asarray(omega),
        delta=np.asarray(delta),
        theta=dressed_angle(omega, delta),
        amplitudes=amps,
        exciton_a=pops[:, _EXCITON_A, :].sum(axis=1),
        exciton_b=pops[:, _EXCITON_B, :].sum(axis=1),
        trion_trion=pops[:, _XX, :],
    )


def _logical_columns() -> np.ndarray:
    return np.eye(9, dtype=complex)[:, list(LOGICAL_INDEX)]


def sample_grid(schedule: PulseSchedule) -> np.ndarray:
    """Uniform record cadence min(tau_omega, tau_delta)/200 across the window."""
    dt = min(schedule.tau_omega, schedule.tau_delta) / 200.0
    n = int(round((schedule.t_end - schedule.t_start) / dt))
    return np.linspace(schedule.t_start, schedule.t_end, n + 1)


def run_adiabatic_gate(
    model: DotModel,
    schedule: PulseSchedule,
    cfg: PropagatorConfig = PropagatorConfig(),
    record: bool = True,
) -> GateResult:
    """Propagate all four logical branches through a chirped pulse on both dots."""
    if schedule.shape != "gaussian_chirped":
        raise ConfigError("the adiabatic gate needs a gaussian_chirped schedule")

    def hamiltonian(t):
        omega, delta = pulse_at(schedule, t)
        return build_two_dot(model, omega, delta)

    grid = sample_grid(schedule) if record else None
    prop = propagate(hamiltonian, _logical_columns(), schedule.window, cfg, sample_times=grid)
    records = None
    if record:
        omega, delta = pulse_at(schedule, prop.times)
        records = _records(prop.times, prop.states, omega, delta)
    return _summarise(prop.final, records, {"nfev": prop.nfev})


def rabi_pulse_duration(omega_pi: float) -> float:
    return math.pi * HBAR / omega_pi


def run_rabi_gate(
    model: DotModel,
    omega_pi: float,
    wait: float,
    cfg: PropagatorConfig = PropagatorConfig(),
    samples_per_segment: int = 50,
) -> GateResult:
    """pi pulse on both dots, free evolution for ``wait`` ps, second pi pulse.

    Pulses are square, resonant with the |1> -> |x> transition
    (Delta = -delta) and last pi hbar / omega_pi. The trion-trion shift is
    present throughout, so the conditional phase approaches
    delta_e_ab * wait / hbar only when omega_pi >> delta_e_ab.
    """
    if model.epsilon != 0.0:
        raise NonzeroMixing("direct Rabi excitation is only state selective at epsilon = 0")
    if not omega_pi > 0 or wait < 0:
        raise ConfigError("need omega_pi > 0 and wait >= 0")
    detuning = -model.delta
    t_pulse = rabi_pulse_duration(omega_pi)
    h_on = build_two_dot(model, omega_pi, detuning)
    h_off = build_two_dot(model, 0.0, detuning)
    segments = [(h_on, t_pulse), (h_off, wait), (h_on, t_pulse)]

    psi = _logical_columns()
    t = 0.0
    times, states, omegas = [], [], []
    nfev = 0
    for h, duration in segments:
        if duration == 0.0:
            continue
        grid = np.linspace(t, t + duration, samples_per_segment + 1)
        prop = propagate(lambda _t, h=h: h, psi, (t, t + duration), cfg, sample_times=grid)
        nfev += prop.nfev
        times.append(prop.times)
        states.append(prop.states)
        omegas.append(np.full(len(prop.times), h[1, 2] * 2.0))
        psi = prop.final
        t += duration
    times = np.concatenate(times)
    states = np.concatenate(states)
    omega = np.concatenate(omegas)
    records = _records(times, states, omega, np.full_like(omega, detuning))
    return _summarise(psi, records, {"nfev": nfev, "t_pulse": t_pulse})


def landau_zener(omega: float, sweep_rate: float) -> float:
    """Diabatic passage probability exp(-pi Omega^2 / (4 hbar sweep_rate))."""
    if not sweep_rate > 0:
        raise ConfigError("sweep rate must be positive")
    return math.exp(-math.pi * omega**2 / (4.0 * HBAR * sweep_rate))


def landau_zener_numeric(
    omega: float,
    sweep_rate: float,
    span: float | None = None,
    cfg: PropagatorConfig = PropagatorConfig(rtol=1e-9, atol=1e-11),
) -> float:
    """Upper dressed-state population after a linear sweep Delta = rate * t.

    The two-level block (|1>, |x>) of the single-dot model is propagated from
    -span to +span starting in the instantaneous lower dressed state.
    ``span`` defaults to 20 Omega / rate (at least 5 ps). The number of
    oscillations grows as span^2 * rate, so the right-hand side is written out
    by hand instead of going through :func:`propagate`.
    """
    if not sweep_rate > 0:
        raise ConfigError("sweep rate must be positive")
    if omega < 0:
        raise ConfigError("omega must be non-negative")
    if span is None:
        span = max(20.0 * omega / sweep_rate, 5.0)
    if span < 20.0 * omega / sweep_rate:
        raise ConfigError("span must cover at least 20 Omega / rate on each side")

    def dressed_pair(t):
        theta = math.atan2(omega, -sweep_rate * t)
        s, c = math.sin(theta / 2), math.cos(theta / 2)
        return np.array([s, c]), np.array([c, -s])

    coupling = -1j * omega / (2.0 * HBAR)
    chirp = 1j * sweep_rate / HBAR

    def rhs(t, y):
        return np.array([coupling * y[1], coupling * y[0] + chirp * t * y[1]])

    _, lower = dressed_pair(-span)
    method = "DOP853" if cfg.method == "fixed" else cfg.method
    sol = solve_ivp(rhs, (-span, span), lower.astype(complex), method=method, rtol=cfg.rtol, atol=cfg.atol)
    if sol.status != 0:
        raise ToleranceFailure(sol.message)
    upper, _ = dressed_pair(span)
    return float(abs(np.vdot(upper, sol.y[:, -1])) ** 2)
