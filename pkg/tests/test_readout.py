import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.stats import kstwo

from qdgate import readout as ro
from qdgate.errors import ConfigError, StepTooLarge
from qdgate.units import HBAR

READOUT_DEFAULT = ro.ReadoutConfig(omega=3.0, kappa=1.0, epsilon=0.1)
GOLDEN_TIMES = np.array([0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0])
# frozen from the eigen-decomposition route, checked against the ODE oracle below
GOLDEN_P1 = np.array(
    [
        0.9511812971534064,
        0.7790616364979264,
        0.6074373770050231,
        0.3705211892584643,
        0.08917056304914459,
        0.016247425436192228,
        0.009900990109717588,
    ]
)
GOLDEN_P0 = np.array(
    [
        0.9995118129715338,
        0.997790616364979,
        0.9960743737700499,
        0.9937052118925844,
        0.9908917056304912,
        0.9901624742543617,
        0.9900990099010969,
    ]
)


def printed_equations_survival(cfg, alpha, times):
    """Integrate the six component equations for the conditional density matrix."""
    w = cfg.omega / (2 * HBAR) * 1e3  # Omega/2 as a rate in ns^-1
    eps, g = cfg.epsilon, (1 + cfg.epsilon**2) * cfg.kappa

    def rhs(t, y):
        r00, r11, rxx = y[0], y[1], y[2]
        r01, r0x, r1x = y[3] + 1j * y[4], y[5] + 1j * y[6], y[7] + 1j * y[8]
        r10, rx0, rx1 = r01.conjugate(), r0x.conjugate(), r1x.conjugate()
        d00 = 1j * w * eps * (rx0 - r0x)
        d11 = 1j * w * (rx1 - r1x)
        dxx = 1j * w * (r1x - rx1 + eps * (r0x - rx0)) - g * rxx
        d01 = 1j * w * (eps * rx1 - r0x)
        d0x = 1j * w * (eps * (rxx - r00) - r01) - g / 2 * r0x
        d1x = 1j * w * (rxx - r11 - eps * r10) - g / 2 * r1x
        return [d00.real, d11.real, dxx.real, d01.real, d01.imag, d0x.real, d0x.imag, d1x.real, d1x.imag]

    y0 = np.zeros(9)
    y0[alpha] = 1.0
    sol = solve_ivp(rhs, (0.0, times[-1]), y0, method="DOP853", t_eval=times, rtol=1e-11, atol=1e-13)
    return sol.y[0] + sol.y[1] + sol.y[2]


def two_level_survival(cfg, t):
    """Closed-form |c1|^2 + |cx|^2 for the damped 1-x system at zero mixing."""
    a, g = cfg.drive_rate, cfg.decay_rate
    mu = math.sqrt(a * a - g * g / 16)
    decay = np.exp(-g * t / 4)
    c1 = decay * (np.cos(mu * t) + g / (4 * mu) * np.sin(mu * t))
    cx = a / mu * decay * np.sin(mu * t)
    return c1**2 + cx**2


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [{"kappa": 0.0}, {"eta": 1.5}, {"epsilon": -0.1}, {"t_max": 0.0}, {"omega": math.nan}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ro.ReadoutConfig(**kwargs)


class TestNoJumpEvolution:
    def test_decoupled_ground(self):
        cfg = ro.ReadoutConfig(epsilon=0.0)
        rho = np.diag([1.0, 0.0, 0.0]).astype(complex)
        dt = ro.max_step(cfg)
        for _ in range(100):
            rho = ro.no_jump_evolve(rho, cfg, dt)
        np.testing.assert_allclose(rho, np.diag([1.0, 0.0, 0.0]), atol=1e-14)

    def test_pure_decay(self):
        cfg = ro.ReadoutConfig(omega=0.0, kappa=1.0, epsilon=0.2)
        rho = np.diag([0.0, 0.0, 1.0]).astype(complex)
        dt = ro.max_step(cfg)
        for _ in range(50):
            rho = ro.no_jump_evolve(rho, cfg, dt)
        assert np.trace(rho).real == pytest.approx(math.exp(-1.04 * 50 * dt), rel=1e-12)

    def test_trace_monotone_and_positive(self):
        rho = np.diag([0.5, 0.5, 0.0]).astype(complex)
        dt = ro.max_step(READOUT_DEFAULT)
        traces = []
        for _ in range(500):
            rho = ro.no_jump_evolve(rho, READOUT_DEFAULT, dt)
            traces.append(np.trace(rho).real)
            assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= -1e-9
        assert np.all(np.diff(traces) <= 1e-15)

    def test_step_too_large(self):
        with pytest.raises(StepTooLarge):
            ro.no_jump_evolve(np.eye(3) / 3, READOUT_DEFAULT, 10 * ro.max_step(READOUT_DEFAULT))

    def test_matches_printed_equations(self):
        rho = np.diag([0.0, 1.0, 0.0]).astype(complex)
        dt = ro.max_step(READOUT_DEFAULT)
        reference = printed_equations_survival(READOUT_DEFAULT, 1, np.arange(0, 201) * dt)
        for k in range(1, 201):
            rho = ro.no_jump_evolve(rho, READOUT_DEFAULT, dt)
            assert np.trace(rho).real == pytest.approx(reference[k], abs=1e-9)


class TestSurvival:
    def test_initial(self):
        assert ro.survival_probability(1, READOUT_DEFAULT, 0.0) == pytest.approx(1.0, abs=1e-14)

    def test_ground_without_mixing(self):
        cfg = ro.ReadoutConfig(epsilon=0.0)
        np.testing.assert_allclose(ro.survival_probability(0, cfg, np.linspace(0, 100, 11)), 1.0, atol=1e-14)

    def test_two_level_closed_form(self):
        cfg = ro.ReadoutConfig(epsilon=0.0)
        t = np.linspace(0, 10, 201)
        np.testing.assert_allclose(ro.survival_probability(1, cfg, t), two_level_survival(cfg, t), atol=1e-6)

    def test_golden_curves(self):
        np.testing.assert_allclose(ro.survival_probability(1, READOUT_DEFAULT, GOLDEN_TIMES), GOLDEN_P1, rtol=1e-9)
        np.testing.assert_allclose(ro.survival_probability(0, READOUT_DEFAULT, GOLDEN_TIMES), GOLDEN_P0, rtol=1e-9)

    @pytest.mark.parametrize("alpha", [0, 1])
    def test_printed_equations_oracle(self, alpha):
        # the drive is ~2300 rad/ns, so the ODE oracle only covers the first 2 ns
        times = GOLDEN_TIMES[:4]
        oracle = printed_equations_survival(READOUT_DEFAULT, alpha, times)
        np.testing.assert_allclose(ro.survival_probability(alpha, READOUT_DEFAULT, times), oracle, atol=1e-8)

    def test_fast_initial_decay(self):
        # most of the |1> population emits within a few ns
        assert ro.survival_probability(1, READOUT_DEFAULT, 5.0) < 0.1

    def test_monotone(self):
        t = np.linspace(0, 30, 3001)
        for alpha in (0, 1):
            assert np.all(np.diff(ro.survival_probability(alpha, READOUT_DEFAULT, t)) <= 1e-14)

    def test_negative_time(self):
        with pytest.raises(ConfigError):
            ro.survival_probability(1, READOUT_DEFAULT, -1.0)


class TestCollapse:
    def test_values(self):
        assert ro.collapse_probabilities(0.0) == (0.0, 1.0)
        assert ro.collapse_probabilities(1.0) == pytest.approx((0.5, 0.5))
        p0, p1 = ro.collapse_probabilities(0.1)
        assert p0 == pytest.approx(0.01 / 1.01, rel=1e-15)
        assert p1 == pytest.approx(1 / 1.01, rel=1e-15)

    def test_post_jump(self):
        assert ro.post_first_jump_survival(READOUT_DEFAULT, 0.0) == pytest.approx(1.0)
        clean = ro.ReadoutConfig(epsilon=0.0)
        assert ro.post_first_jump_survival(clean, 1.3) == pytest.approx(ro.survival_probability(1, clean, 1.3))
        mixture = (0.01 * ro.survival_probability(0, READOUT_DEFAULT, 2.0) + ro.survival_probability(1, READOUT_DEFAULT, 2.0)) / 1.01
        assert ro.post_first_jump_survival(READOUT_DEFAULT, 2.0) == pytest.approx(mixture, rel=1e-14)


class TestTrajectories:
    def test_deterministic(self):
        a = ro.simulate_trajectory(READOUT_DEFAULT, 1, np.random.default_rng(5))
        b = ro.simulate_trajectory(READOUT_DEFAULT, 1, np.random.default_rng(5))
        np.testing.assert_array_equal(a.emission_times, b.emission_times)
        np.testing.assert_array_equal(a.collapsed_to, b.collapsed_to)

    def test_structure(self):
        for rec in ro.simulate_ensemble(READOUT_DEFAULT, 1, 50, base_seed=11):
            assert np.all(np.diff(rec.emission_times) > 0)
            assert np.all(rec.emission_times <= READOUT_DEFAULT.t_max)
            assert set(np.unique(rec.collapsed_to)) <= {0, 1}
            assert len(rec.detected) == len(rec.emission_times)

    def test_dark_ground_state(self):
        cfg = ro.ReadoutConfig(epsilon=0.0)
        rec = ro.simulate_trajectory(cfg, 0, np.random.default_rng(0))
        assert len(rec.emission_times) == 0

    def test_first_bunch_size(self):
        rec = ro.TrajectoryRecord(np.array([1.0, 2.0, 3.0, 9.0]), np.array([1, 1, 0, 1]), np.ones(4, bool))
        assert rec.first_bunch_size() == 3
        rec = ro.TrajectoryRecord(np.array([1.0, 2.0]), np.array([1, 1]), np.ones(2, bool))
        assert rec.first_bunch_size() == 2

    def test_bunch_mean_matches_model(self):
        # each emission continues the bunch if it resets to |1> and |1> emits again
        # a long window so that no bunch is cut short
        cfg = ro.ReadoutConfig(epsilon=0.1, t_max=5000.0)
        p0, p1 = ro.collapse_probabilities(cfg.epsilon)
        bright = 1 - ro.survival_probability(1, cfg, 1e6)
        expected = bright / (1 - p1 * bright)
        sizes = np.array([r.first_bunch_size() for r in ro.simulate_ensemble(cfg, 1, 2000, base_seed=100)])
        sigma = sizes.std(ddof=1) / math.sqrt(len(sizes))
        assert abs(sizes.mean() - expected) <= 3 * sigma

    def test_first_emission_distribution(self):
        n = 2000
        records = ro.simulate_ensemble(READOUT_DEFAULT, 1, n, base_seed=7)
        first = np.sort([r.emission_times[0] if len(r.emission_times) else math.inf for r in records])
        model = 1 - ro.survival_probability(1, READOUT_DEFAULT, first[np.isfinite(first)])
        k = np.arange(1, len(model) + 1)
        d = max(np.max(k / n - model), np.max(model - (k - 1) / n))
        assert kstwo.sf(d, n) > 0.01

    def test_detection_flags_follow_efficiency(self):
        cfg = ro.ReadoutConfig(epsilon=0.1, eta=0.5)
        flags = np.concatenate([r.detected for r in ro.simulate_ensemble(cfg, 1, 200, base_seed=3)])
        assert flags.mean() == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / len(flags)))


class TestDetectionError:
    def test_closed_form(self):
        assert ro.detection_error(0.1, 0.9) == pytest.approx(1.0989e-3, rel=1e-4)

    def test_series_oracle(self):
        eps, eta = 0.2, 0.7
        p0, p1 = ro.collapse_probabilities(eps)
        total = sum(((1 - eta) * p1) ** k * (1 - eta) * p0 for k in range(200))
        assert ro.detection_error(eps, eta) == pytest.approx(total, rel=1e-12)
        partial = sum(((1 - eta) * p1) ** k * (1 - eta) * p0 for k in range(4))
        assert ro.detection_error(eps, eta, n_terms=3) == pytest.approx(partial, rel=1e-12)

    def test_limits(self):
        assert ro.detection_error(0.0, 0.5) == 0.0
        assert ro.detection_error(0.3, 1.0) == 0.0
        assert ro.detection_error(0.3, 0.0) == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            ro.detection_error(0.1, 1.2)


class TestMeasurementTime:
    def test_golden_matches_grid(self):
        golden = ro.optimize_measurement_time(READOUT_DEFAULT)
        grid = ro.grid_scan_optimum(READOUT_DEFAULT)
        assert golden.error <= grid.error + 1e-12
        assert golden.t_opt == pytest.approx(grid.t_opt, abs=2 * READOUT_DEFAULT.t_max / 10_000)

    def test_error_floor(self):
        opt = ro.optimize_measurement_time(READOUT_DEFAULT)
        err1, err0 = ro.measurement_error(READOUT_DEFAULT, opt.t_opt)
        assert opt.error == pytest.approx(err1[0] + err0[0], abs=1e-15)
        # the floor: dark fraction of |1> plus bright fraction of |0>
        assert opt.error == pytest.approx(2 * 0.01 / 1.01, rel=1e-6)

    def test_zero_mixing_runs_to_boundary(self):
        opt = ro.optimize_measurement_time(ro.ReadoutConfig(epsilon=0.0, t_max=20.0))
        assert opt.at_boundary
