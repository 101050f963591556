import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh, expm

from nnmrom.dynamics import (
    ChainParams, ForcingSpec, State, build_chain, element_force_histories, generate_forcing,
    hamiltonian, rhs, rk4_step, simulate,
)
from nnmrom.errors import DimensionMismatch, IndexOutOfRange, InvalidParams, NonFiniteState
from nnmrom.series import MultiChannelSeries
from nnmrom.spectral import welch_spectra

DEFAULT = ChainParams()
SDOF = ChainParams(n_dof=1, grounded=(True, False))


def zero_force(n):
    return lambda t: np.zeros(n)


def integrate(system, x0, v0, dt, n_steps):
    state = State(x0, v0)
    for _ in range(n_steps):
        state = rk4_step(system, state, zero_force(system.n_dof), dt)
    return state


# ---------------------------------------------------------------- assembly

def test_full_chain_has_21_elements():
    system = build_chain(DEFAULT)
    assert system.n_dof == 20
    assert system.n_elements == 21


def test_sdof_grounded_left_only():
    system = build_chain(SDOF)
    assert system.n_elements == 1
    assert system.element_nodes() == [(-1, 0)]


def test_linear_two_dof_stiffness_matches_hand_assembly():
    k = 100.0
    system = build_chain(ChainParams(n_dof=2, k_nl=0.0))
    np.testing.assert_array_equal(system.stiffness_matrix, [[2 * k, -k], [-k, 2 * k]])


def test_stiffness_tridiagonal_and_damping_proportional():
    system = build_chain(DEFAULT)
    K, C = system.stiffness_matrix, system.damping_matrix
    assert np.all(np.diag(K)[1:-1] == 200.0)
    assert np.count_nonzero(np.triu(K, 2)) == 0
    np.testing.assert_allclose(C, 0.001 * K, rtol=1e-12)


def test_ungrounded_right_end_drops_element():
    system = build_chain(ChainParams(n_dof=3, grounded=(True, False)))
    assert system.n_elements == 3
    assert system.stiffness_matrix[-1, -1] == 100.0


@pytest.mark.parametrize("change", [
    dict(n_dof=0), dict(mass=0.0), dict(k_lin=-1.0), dict(c_lin=-0.1), dict(k_nl=np.nan),
    dict(n_dof=1, grounded=(False, False)),
])
def test_invalid_params(change):
    with pytest.raises(InvalidParams):
        build_chain(ChainParams(**{**DEFAULT.__dict__, **change}))


# ---------------------------------------------------------------- rhs

def test_rhs_equilibrium():
    system = build_chain(DEFAULT)
    v, a = rhs(system, State.zeros(20), np.zeros(20))
    assert not v.any() and not a.any()


def test_rhs_sdof_hand_value():
    system = build_chain(SDOF)
    _, a = rhs(system, State([0.1], [0.0]), [0.0])
    assert a[0] == pytest.approx(-(100 * 0.1 + 2500 * 0.1 ** 3) / 0.1, rel=1e-14)
    assert a[0] == pytest.approx(-125.0)


def test_rhs_antisymmetry():
    system = build_chain(ChainParams(n_dof=2))
    _, a = rhs(system, State([0.2, -0.2], [0.0, 0.0]), np.zeros(2))
    assert a[0] == pytest.approx(-a[1], rel=1e-14)


def test_rhs_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        rhs(build_chain(DEFAULT), State.zeros(20), np.zeros(3))


# ---------------------------------------------------------------- rk4

def test_rk4_harmonic_oscillator_one_period():
    system = build_chain(ChainParams(n_dof=1, mass=1.0, k_lin=1.0, c_lin=0.0, k_nl=0.0, grounded=(True, False)))
    n = 6283
    state = integrate(system, [1.0], [0.0], 2 * np.pi / n, n)
    assert abs(state.displacement[0] - 1.0) < 1e-8
    assert state.time == pytest.approx(2 * np.pi)


@given(st.floats(1e-5, 0.05))
@settings(max_examples=20, deadline=None)
def test_zero_state_is_fixed_point(dt):
    state = rk4_step(build_chain(DEFAULT), State.zeros(20), zero_force(20), dt)
    assert not state.displacement.any() and not state.velocity.any()


def _sdof_endpoint(dt, x0=0.1, t_end=1.0):
    system = build_chain(SDOF)
    return integrate(system, [x0], [0.0], dt, int(round(t_end / dt))).displacement[0]


def test_rk4_convergence_order():
    # x0 = 0.1 m: cubic spring force is 25% of the linear one
    dts = np.array([4e-3, 2e-3, 1e-3, 5e-4])
    reference = _sdof_endpoint(dts[-1] / 16)
    errors = np.abs([_sdof_endpoint(dt) - reference for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    pairwise = np.log2(errors[:-1] / errors[1:])
    assert 3.8 <= slope <= 4.2
    assert np.all((pairwise > 3.8) & (pairwise < 4.2)), pairwise


def test_rk4_blow_up_detected():
    with pytest.raises(NonFiniteState):
        state = State([1e3], [0.0])
        for _ in range(50):
            state = rk4_step(build_chain(SDOF), state, zero_force(1), 1.0)


# ---------------------------------------------------------------- forcing

def test_zero_std_forcing():
    f = generate_forcing(ForcingSpec(noise_std=0.0, duration=10))
    assert not f.values.any()


def test_full_forcing_shape_and_scale():
    f = generate_forcing(ForcingSpec(noise_std=2.0), 20)
    assert f.values.shape == (100_000, 2)
    assert f.labels == ("f1", "f20")
    np.testing.assert_allclose(f.values.std(axis=0), 2.0, rtol=1e-12)


def test_forcing_is_band_limited():
    f = generate_forcing(ForcingSpec(duration=1000), 20)
    sxx, _, _ = welch_spectra(f.values[:, 0], f.values[:, 0], 100.0)
    fr, p = sxx.frequencies, sxx.values
    stop = p[(fr >= 10) & (fr <= 50)].sum()
    passband = p[fr <= 8].sum()
    assert stop < 0.01 * passband


def test_forcing_deterministic_and_channels_independent():
    spec = ForcingSpec(duration=50, seed=7)
    a, b = generate_forcing(spec), generate_forcing(spec)
    assert a.values.tobytes() == b.values.tobytes()
    assert abs(np.corrcoef(a.values.T)[0, 1]) < 0.2
    c = generate_forcing(ForcingSpec(duration=50, seed=8))
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("change", [dict(cutoff_hz=60.0), dict(duration=0.0), dict(drive_dofs=(0, 25))])
def test_forcing_invalid(change):
    with pytest.raises(InvalidParams):
        generate_forcing(ForcingSpec(**{**ForcingSpec().__dict__, **change}), 20)


# ---------------------------------------------------------------- simulate

def test_simulate_zero():
    system = build_chain(DEFAULT)
    forcing = MultiChannelSeries(0.01, np.zeros((50, 2)), ("f1", "f20"))
    out = simulate(system, forcing)
    assert out.values.shape == (50, 20) and not out.values.any()


def test_simulate_matches_rk4_step_path():
    system = build_chain(ChainParams(n_dof=4))
    forcing = generate_forcing(ForcingSpec(drive_dofs=(0, 3), noise_std=5.0, duration=1.0), 4)
    x, v = simulate(system, forcing, return_velocity=True)
    full = np.zeros((forcing.n_steps, 4))
    full[:, [0, 3]] = forcing.values
    t = forcing.time

    def interp(tq):
        return np.array([np.interp(tq, t, full[:, j]) for j in range(4)])

    state = State.zeros(4)
    for k in range(forcing.n_steps - 1):
        state = rk4_step(system, state, interp, forcing.dt)
    np.testing.assert_allclose(state.displacement, x.values[-1], rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(state.velocity, v.values[-1], rtol=1e-10, atol=1e-13)


def test_odd_symmetry():
    system = build_chain(ChainParams(n_dof=5))
    forcing = generate_forcing(ForcingSpec(drive_dofs=(0, 4), noise_std=8.0, duration=5.0), 5)
    neg = forcing.with_values(-forcing.values, forcing.labels)
    rng = np.random.default_rng(3)
    x0 = State(rng.normal(0, 0.05, 5), rng.normal(0, 0.1, 5))
    a = simulate(system, forcing, x0)
    b = simulate(system, neg, -x0)
    np.testing.assert_array_equal(a.values, -b.values)


def test_simulate_reports_divergence_step():
    system = build_chain(ChainParams(n_dof=2))
    forcing = MultiChannelSeries(0.05, np.full((400, 1), 1e4), ("f1",))
    with pytest.raises(NonFiniteState) as info:
        simulate(system, forcing)
    assert info.value.step > 0


def _modal_reference(system, force_full, dt):
    """Exact response of each decoupled linear mode to piecewise-linear forcing."""
    w2, phi = eigh(system.stiffness_matrix, system.mass_matrix)  # mass-normalised modes
    modal_c = np.diag(phi.T @ system.damping_matrix @ phi)
    q_force = force_full @ phi
    out = np.zeros((force_full.shape[0], system.n_dof))
    for k in range(system.n_dof):
        # augmented state [q, qdot, f, fdot] with f linear over each step
        A = np.zeros((4, 4))
        A[0, 1] = 1.0
        A[1] = [-w2[k], -modal_c[k], 1.0, 0.0]
        A[2, 3] = 1.0
        E = expm(A * dt)
        z = np.zeros(2)
        q = np.zeros(force_full.shape[0])
        for n in range(force_full.shape[0] - 1):
            slope = (q_force[n + 1, k] - q_force[n, k]) / dt
            z = (E @ np.array([z[0], z[1], q_force[n, k], slope]))[:2]
            q[n + 1] = z[0]
        out += np.outer(q, phi[:, k])
    return out


def test_linear_limit_matches_modal_superposition():
    system = build_chain(ChainParams(n_dof=2, k_nl=0.0))
    forcing = generate_forcing(ForcingSpec(drive_dofs=(0, 1), noise_std=3.0, fs=1000.0, duration=5.0), 2)
    sim = simulate(system, forcing).values
    ref = _modal_reference(system, forcing.values, forcing.dt)
    rel = np.sqrt(np.mean((sim - ref) ** 2, axis=0)) / np.sqrt(np.mean(ref ** 2, axis=0))
    assert np.all(rel < 1e-3), rel


def test_sinusoidal_resonance_amplitude():
    system = build_chain(ChainParams(n_dof=2, k_nl=0.0))
    w2, phi = eigh(system.stiffness_matrix, system.mass_matrix)
    w = np.sqrt(w2[0])
    dt = 1e-3
    t = np.arange(0, 40.0, dt)
    f = np.column_stack([np.sin(w * t), np.zeros_like(t)])
    x = simulate(system, MultiChannelSeries(dt, f, ("f1", "f2"))).values
    # closed-form steady state via modal superposition (complex amplitudes)
    zeta_terms = np.diag(phi.T @ system.damping_matrix @ phi)
    amp = sum(np.outer(phi[:, k], phi[:, k]) @ np.array([1.0, 0.0]) / (w2[k] - w ** 2 + 1j * w * zeta_terms[k])
              for k in range(2))
    tail = t > 30.0
    basis = np.column_stack([np.sin(w * t[tail]), np.cos(w * t[tail])])
    for dof in range(2):
        coef, *_ = np.linalg.lstsq(basis, x[tail, dof], rcond=None)
        assert np.hypot(*coef) == pytest.approx(abs(amp[dof]), rel=0.01)


# ---------------------------------------------------------------- element forces and energy

def test_element_forces_zero_and_constant():
    system = build_chain(SDOF)
    zero = MultiChannelSeries(0.01, np.zeros((10, 1)))
    assert not element_force_histories(system, zero, 0).values.any()
    const = MultiChannelSeries(0.01, np.full((10, 1), 0.1))
    forces = element_force_histories(system, const, 0)
    assert forces.labels == ("linear", "cubic")
    np.testing.assert_allclose(forces.values[:, 0], 10.0, rtol=1e-14)
    np.testing.assert_allclose(forces.values[:, 1], 2.5, rtol=1e-14)


def test_element_forces_match_rhs_split():
    system = build_chain(ChainParams(n_dof=4, c_lin=0.0))
    x = np.random.default_rng(0).normal(0, 0.1, (3, 4))
    for dof in range(4):
        forces = element_force_histories(system, MultiChannelSeries(0.01, x), dof).values
        for k in range(3):
            _, a = rhs(system, State(x[k], np.zeros(4)), np.zeros(4))
            assert forces[k].sum() == pytest.approx(-a[dof] * system.mass[dof], rel=1e-12)


def test_element_forces_damping_option():
    system = build_chain(SDOF)
    t = np.arange(0, 1, 0.001)
    x = MultiChannelSeries(0.001, 0.1 * np.sin(t)[:, None])
    v = MultiChannelSeries(0.001, 0.1 * np.cos(t)[:, None])
    exact = element_force_histories(system, x, 0, velocity=v, include_damping=True).values[:, 0]
    fd = element_force_histories(system, x, 0, include_damping=True).values[:, 0]
    np.testing.assert_allclose(exact, 100 * 0.1 * np.sin(t) + 0.1 * 0.1 * np.cos(t), rtol=1e-12)
    np.testing.assert_allclose(fd, exact, atol=1e-8)


def test_element_forces_bad_dof():
    with pytest.raises(IndexOutOfRange):
        element_force_histories(build_chain(SDOF), MultiChannelSeries(0.01, np.zeros((3, 1))), 1)


def test_energy_conservation_undamped_chain():
    system = build_chain(ChainParams(c_lin=0.0))
    i = np.arange(1, 21)
    x0 = 0.1 * np.sin(np.pi * i / 21)
    state = State(x0, np.zeros(20))
    h0 = hamiltonian(system, state.displacement, state.velocity)[0]
    state = integrate(system, x0, np.zeros(20), 1e-3, 10_000)
    drift = abs(hamiltonian(system, state.displacement, state.velocity)[0] - h0) / h0
    assert drift < 1e-6
