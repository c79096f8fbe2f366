"""Few-level Hamiltonians for charged quantum dots driven by a laser.

Each dot carries a spin qubit {|0>, |1>} and a trion state |x> that the laser
couples to |1> (and, through hole mixing, weakly to |0>). All Hamiltonians are
written in the laser rotating frame in meV, with basis order (|0>, |1>, |x>)
per dot and lexicographic order for two dots (|00>, |01>, |0x>, |10>, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from qdgate.errors import (
    ConfigError,
    DegenerateDressing,
    InvalidDetuning,
    NegativeRadicand,
)

DOT_LABELS = ("0", "1", "x")
TWO_DOT_LABELS = tuple(a + b for a in DOT_LABELS for b in DOT_LABELS)
SHAPES = ("gaussian_chirped", "constant", "linear_sweep")


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class PulseSchedule:
    """Time-dependent drive: Rabi envelope and detuning.

    ``gaussian_chirped`` uses Omega(t) = omega0 exp(-(t/tau_omega)^2) and
    Delta(t) = delta_inf (1 - exp(-(t/tau_delta)^2)). ``constant`` holds
    (omega0, delta_inf). ``linear_sweep`` holds omega0 and sweeps
    Delta(t) = sweep_rate * t.
    """

    omega0: float
    tau_omega: float = 1.0
    delta_inf: float = 0.0
    tau_delta: float = 1.0
    t_start: float = -1.0
    t_end: float = 1.0
    shape: str = "gaussian_chirped"
    sweep_rate: float = 0.0  # meV / ps, linear_sweep only

    def __post_init__(self) -> None:
        for name in ("omega0", "tau_omega", "delta_inf", "tau_delta", "t_start", "t_end", "sweep_rate"):
            _finite(name, getattr(self, name))
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown pulse shape {self.shape!r}")
        if self.omega0 < 0:
            raise ConfigError("omega0 must be non-negative")
        if self.tau_omega <= 0 or self.tau_delta <= 0:
            raise ConfigError("pulse widths must be positive")
        if not self.t_start < self.t_end:
            raise ConfigError("t_start must precede t_end")

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_start, self.t_end)


def pulse_at(schedule: PulseSchedule, t):
    """Return (Omega(t), Delta(t)) in meV for scalar or array ``t`` in ps."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(t_arr)):
        raise ConfigError("time must not be NaN")
    if schedule.shape == "gaussian_chirped":
        omega = schedule.omega0 * np.exp(-((t_arr / schedule.tau_omega) ** 2))
        delta = schedule.delta_inf * (1.0 - np.exp(-((t_arr / schedule.tau_delta) ** 2)))
    elif schedule.shape == "constant":
        omega = np.full_like(t_arr, schedule.omega0)
        delta = np.full_like(t_arr, schedule.delta_inf)
    else:
        omega = np.full_like(t_arr, schedule.omega0)
        delta = schedule.sweep_rate * t_arr
    if t_arr.ndim == 0:
        return float(omega), float(delta)
    return omega, delta


@dataclass(frozen=True)
class DotModel:
    """Static dot parameters: hole mixing, Zeeman splitting, trion-trion shift (meV)."""

    epsilon: float = 0.0
    delta: float = 0.0
    delta_e_ab: float = 0.0

    def __post_init__(self) -> None:
        for name in ("epsilon", "delta", "delta_e_ab"):
            _finite(name, getattr(self, name))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.delta_e_ab < 0:
            raise ConfigError("delta_e_ab must be non-negative")


def build_single_dot(model: DotModel, omega: float, detuning: float) -> np.ndarray:
    """3x3 Hamiltonian diag(0, delta, -Delta) with drive Omega/2 on 1-x and eps*Omega/2 on 0-x."""
    omega = _finite("omega", omega)
    detuning = _finite("detuning", detuning)
    h = np.zeros((3, 3))
    h[1, 1] = model.delta
    h[2, 2] = -detuning
    h[2, 1] = h[1, 2] = omega / 2.0
    h[2, 0] = h[0, 2] = model.epsilon * omega / 2.0
    return h


_XX = 8  # index of |xx> in the two-dot basis


def build_two_dot(model: DotModel, omega: float, detuning: float) -> np.ndarray:
    """9x9 Hamiltonian: both dots driven identically plus the shift on |xx>."""
    h1 = build_single_dot(model, omega, detuning)
    eye = np.eye(3)
    h2 = np.kron(h1, eye) + np.kron(eye, h1)
    h2[_XX, _XX] += model.delta_e_ab
    return h2


@dataclass(frozen=True)
class DressedState:
    theta: float
    e_plus: float
    e_minus: float
    plus_vec: np.ndarray  # components on (|1>, |x>)
    minus_vec: np.ndarray


def dressed(omega: float, detuning: float) -> DressedState:
    """Instantaneous eigenstates of the resonantly driven 1-x two-level system.

    The mixing angle is theta = atan2(Omega, -Delta) in [0, pi], which stays
    continuous through resonance.
    """
    omega = _finite("omega", omega)
    detuning = _finite("detuning", detuning)
    if omega == 0.0 and detuning == 0.0:
        raise DegenerateDressing("mixing angle undefined at Omega = Delta = 0")
    theta = math.atan2(omega, -detuning)
    if theta < 0.0:  # only reachable for omega < 0
        theta += math.pi
    root = math.hypot(detuning, omega)
    s, c = math.sin(theta / 2.0), math.cos(theta / 2.0)
    return DressedState(
        theta=theta,
        e_plus=-detuning / 2.0 + root / 2.0,
        e_minus=-detuning / 2.0 - root / 2.0,
        plus_vec=np.array([s, c]),
        minus_vec=np.array([c, -s]),
    )


def dressed_angle(omega, detuning):
    """Vectorised mixing angle theta = atan2(Omega, -Delta)."""
    return np.arctan2(omega, -np.asarray(detuning, dtype=float))


def effective_single_qubit_rabi(omega1: float, omega2: float, epsilon: float, delta: float) -> float:
    """Raman Rabi frequency sqrt((Omega1*Omega2 + eps*Omega1^2)/Delta) after eliminating the trion."""
    if not delta > 0:
        raise InvalidDetuning("adiabatic elimination needs a positive detuning")
    radicand = (omega1 * omega2 + epsilon * omega1**2) / delta
    if radicand < 0:
        raise NegativeRadicand(f"radicand {radicand} is negative")
    return math.sqrt(radicand)
