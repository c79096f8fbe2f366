import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from qdgate import phonons as ph
from qdgate import readout as ro
from qdgate.evolution import gate_phase, propagate
from qdgate.hamiltonians import DotModel, build_single_dot, build_two_dot, dressed

SLOW = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FAST = settings(max_examples=60, deadline=None)

finite = st.floats(-5.0, 5.0, allow_nan=False)
positive = st.floats(0.01, 5.0)


def smooth_record(seed, n_branches=3):
    rng = np.random.default_rng(seed)
    times = np.linspace(-10, 10, 801)
    weights = []
    for _ in range(n_branches):
        centre, width, height = rng.uniform(-3, 3), rng.uniform(1, 4), rng.uniform(0, 1)
        weights.append(height * np.exp(-(((times - centre) / width) ** 2)))
    return ph.BranchCouplingRecord(times, np.array(weights))


@FAST
@given(omega=positive, detuning=finite)
def test_dressed_splitting(omega, detuning):
    d = dressed(omega, detuning)
    assert 0.0 <= d.theta <= math.pi
    assert math.isclose(d.e_plus - d.e_minus, math.hypot(omega, detuning), rel_tol=1e-12)


@FAST
@given(eps=st.floats(0, 1), delta=finite, de=st.floats(0, 3), omega=st.floats(0, 5), detuning=finite)
def test_two_dot_hermitian_and_trace(eps, delta, de, omega, detuning):
    model = DotModel(epsilon=eps, delta=delta, delta_e_ab=de)
    h = build_two_dot(model, omega, detuning)
    assert np.array_equal(h, h.T)
    h1 = build_single_dot(model, omega, detuning)
    assert math.isclose(np.trace(h), 6 * np.trace(h1) + de, rel_tol=1e-12, abs_tol=1e-12)


@FAST
@given(phases=st.lists(finite, min_size=4, max_size=4), shift=finite)
def test_gate_phase_ignores_common_phase(phases, shift):
    a = gate_phase(phases)
    b = gate_phase([p + shift for p in phases])
    assert -math.pi < a <= math.pi
    assert abs(math.remainder(a - b, 2 * math.pi)) < 1e-9


@SLOW
@given(seed=st.integers(0, 2**31))
def test_propagation_preserves_norm(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    ha, hb = a + a.conj().T, b + b.conj().T
    psi0 = np.array([1, 0, 0], dtype=complex)
    out = propagate(lambda t: ha + math.sin(t) * hb, psi0, (0.0, 2.0))
    assert abs(np.linalg.norm(out.final) - 1.0) <= 1e-9


@SLOW
@given(seed=st.integers(0, 2**31), temps=st.lists(st.floats(0, 30), min_size=2, max_size=2))
def test_gamma_nonnegative_and_monotone_in_temperature(seed, temps):
    rec = smooth_record(seed)
    low, high = sorted(temps)
    bath = ph.PhononBath()
    for a, b in ((0, 1), (0, 2), (1, 2)):
        g_low = ph.dephasing_gamma(rec, a, b, bath, low)
        g_high = ph.dephasing_gamma(rec, a, b, bath, high)
        assert g_low >= 0
        assert g_high >= g_low * (1 - 1e-9)


@SLOW
@given(seed=st.integers(0, 2**31))
def test_quadrature_tolerance_halving(seed):
    rec = smooth_record(seed, 2)
    bath = ph.PhononBath()
    loose = ph.dephasing_gamma(rec, 0, 1, bath, 4.0, rel_tol=1e-8)
    tight = ph.dephasing_gamma(rec, 0, 1, bath, 4.0, rel_tol=5e-9)
    assert abs(loose - tight) <= 1e-3 * tight


@FAST
@given(
    gammas=st.lists(st.floats(0, 3), min_size=6, max_size=6),
    bare=st.lists(finite, min_size=4, max_size=4),
    shift=finite,
)
def test_fidelity_matrix_properties(gammas, bare, shift):
    g = np.zeros((4, 4))
    g[np.triu_indices(4, 1)] = gammas
    g = g + g.T
    t = ph.FidelityMatrix.from_exponents(g, bare_phases=bare)
    np.testing.assert_allclose(np.abs(np.diag(t.matrix)), 1.0, atol=1e-10)
    assert ph.infidelity(t, t) == 0.0
    shifted = ph.FidelityMatrix.from_exponents(g, bare_phases=[b + shift for b in bare])
    assert math.isclose(ph.infidelity(t, t.zero), ph.infidelity(shifted, shifted.zero), rel_tol=1e-9, abs_tol=1e-12)
    rotation = np.exp(1j * shift)
    assert math.isclose(
        ph.infidelity(t.matrix * rotation, t.zero * rotation), ph.infidelity(t, t.zero), rel_tol=1e-9, abs_tol=1e-12
    )


@FAST
@given(eps=st.floats(0, 1))
def test_collapse_probabilities_sum(eps):
    p0, p1 = ro.collapse_probabilities(eps)
    assert math.isclose(p0 + p1, 1.0)
    assert 0 <= p0 <= 0.5


@SLOW
@given(omega=st.floats(0.0, 5.0), kappa=st.floats(0.1, 5.0), eps=st.floats(0, 1), alpha=st.sampled_from([0, 1]))
def test_survival_monotone(omega, kappa, eps, alpha):
    cfg = ro.ReadoutConfig(omega=omega, kappa=kappa, epsilon=eps)
    values = ro.survival_probability(alpha, cfg, np.linspace(0, 20, 401))
    assert values[0] == 1.0 or math.isclose(values[0], 1.0, abs_tol=1e-12)
    assert np.all(np.diff(values) <= 1e-9)
    assert np.all((values >= 0) & (values <= 1))


@FAST
@given(eps=st.floats(0, 1), eta=st.floats(0, 1), n=st.integers(0, 50))
def test_detection_error_bounds(eps, eta, n):
    full = ro.detection_error(eps, eta)
    partial = ro.detection_error(eps, eta, n)
    assert 0 <= partial <= full + 1e-15 <= 1 + 1e-15
