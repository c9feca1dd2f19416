import dataclasses

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm, null_space

from sharedbath.dynamics import (
    N_CUMULANTS, P_A, P_B, PBQA, PP_A, PP_AB, PQ_A, Q_A, Q_B, QQ_A, QQ_AB,
    ControlPulse, NonFiniteStateError, SystemConfig, build_generator,
    costate_step_maps, drive_matrix, generator_derivative,
    propagate_costate_backward, propagate_forward, step_maps, thermal_state,
    vacuum_state,
)
from sharedbath.harness import rk4_error_ratio

# Second-cumulant block as printed, rows/cols in cumulant order 4..13.
M2_PRINTED = """
0  0   2   0  0   0   0  0   0  0
0 -2g  2a  0  0   0   0 -2g  0  0
a  1  -g   0  0   0   0  0   0 -g
0  0   0   0  0   2   0  0   0  0
0  0   0   0 -2g  2a  0 -2g  0  0
0  0   0   a  1  -g   0  0  -g  0
0  0   0   0  0   0   0  0   1  1
0 -g   0   0 -g   0   0 -2g  a  a
0  0   0   0  0  -g   a  1  -g  0
0  0  -g   0  0   0   a  1   0 -g
"""


def printed_m2(u, g):
    a = -1.0 - u
    rows = []
    for line in M2_PRINTED.strip().splitlines():
        row = []
        for tok in line.split():
            tok = tok.replace("a", f"*{a!r}").replace("g", f"*{g!r}")
            if tok.startswith("*"):
                tok = "1" + tok
            elif tok.startswith("-*"):
                tok = "-1" + tok[1:]
            row.append(eval(tok))
        rows.append(row)
    return np.array(rows)


def printed_m1(u, g):
    a = -1.0 - u
    return np.array([[0, 1, 0, 0], [a, -g, 0, 0], [0, 0, 0, 1], [0, 0, a, -g]])


@pytest.fixture
def shared():
    return SystemConfig(gamma=0.1, temperature=1.0, t_final=10.0, dt=1e-3)


@pytest.mark.parametrize("u", [0.0, 0.5, -0.3, 2.0])
@pytest.mark.parametrize("g", [0.0, 0.1, 0.37])
def test_generator_matches_printed_blocks(u, g):
    m = build_generator(u, SystemConfig(gamma=g))
    np.testing.assert_array_equal(m[:4, :4], printed_m1(u, g))
    np.testing.assert_allclose(m[4:, 4:], printed_m2(u, g), rtol=0, atol=1e-15)
    assert not m[:4, 4:].any() and not m[4:, :4].any()


def test_generator_examples():
    m = build_generator(0.0, SystemConfig(gamma=0.1))
    assert m[PP_A, PP_AB] == pytest.approx(-0.2, abs=1e-15)
    m = build_generator(0.0, SystemConfig(gamma=0.0, topology="independent"))
    np.testing.assert_array_equal(
        m[:4, :4], [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]])
    # a = -1.5 at every a-position
    cfg = SystemConfig(gamma=0.1)
    mu = generator_derivative(cfg)
    m5 = build_generator(0.5, cfg)
    a_pos = mu != 0
    np.testing.assert_allclose(m5[a_pos] / (-mu[a_pos]), -1.5, rtol=1e-15)


def test_generator_vectorized_over_drive(shared):
    u = np.array([0.0, 0.3, -0.7])
    stacked = build_generator(u, shared)
    assert stacked.shape == (3, 14, 14)
    for k in range(3):
        np.testing.assert_array_equal(stacked[k], build_generator(u[k], shared))


def test_independent_topology_recovers_single_mode_equations():
    g, u = 0.2, 0.4
    m = build_generator(u, SystemConfig(gamma=g, topology="independent"))
    w2 = 1.0 + u
    # d<q^2> = 2<pq>, d<p^2> = -2g<p^2> - 2 w2 <pq>, d<pq> = -w2<q^2> + <p^2> - g<pq>
    single = np.array([[0, 0, 2], [0, -2 * g, -2 * w2], [-w2, 1, -g]])
    np.testing.assert_allclose(m[4:7, 4:7], single, atol=1e-15)
    np.testing.assert_allclose(m[7:10, 7:10], single, atol=1e-15)
    # no coupling between the single-mode blocks and the cross block
    assert not m[4:7, 7:].any()
    assert not m[7:10, 4:7].any() and not m[7:10, 10:].any()
    assert not m[10:, 4:10].any()


def test_m1_cross_damping_flag():
    cfg = SystemConfig(gamma=0.1, m1_cross_damping=True)
    m = build_generator(0.0, cfg)
    assert m[P_A, P_B] == m[P_B, P_A] == -0.1
    # the flag has no effect for independent baths
    ind = build_generator(0.0, dataclasses.replace(cfg, topology="independent"))
    assert ind[P_A, P_B] == 0.0


def test_generator_derivative_entries_and_affinity():
    cfg = SystemConfig(gamma=0.1)
    mu = generator_derivative(cfg)
    assert mu[P_A, Q_A] == -1.0
    assert mu[PP_A, PQ_A] == -2.0
    assert np.count_nonzero(mu) == 2 + 8
    h = 0.125
    np.testing.assert_array_equal(build_generator(h, cfg) - build_generator(0.0, cfg), h * mu)
    fd = (build_generator(0.1, cfg) - build_generator(0.0, cfg)) / 0.1
    assert np.max(np.abs(fd - mu)) < 1e-14


def test_drive_matrix():
    c = drive_matrix(SystemConfig())
    assert c.shape == (14, 1)
    assert np.flatnonzero(c[:, 0]).tolist() == [P_A, P_B]
    c = drive_matrix(SystemConfig(topology="independent"))
    assert c.shape == (14, 2)
    assert c[P_A, 0] == 1 and c[P_B, 1] == 1 and c.sum() == 2


def test_thermal_state_variance():
    x = thermal_state(1.0)
    assert x[QQ_A] == pytest.approx(1.0820, abs=1e-4)
    assert x[QQ_A] == pytest.approx(0.5 / np.tanh(0.5), rel=1e-15)
    assert vacuum_state()[QQ_A] == 0.5


@pytest.mark.parametrize("kw", [
    dict(gamma=-0.1), dict(temperature=0.0), dict(t_final=0.0), dict(dt=0.0),
    dict(t_final=1.0, dt=2.0), dict(t_final=1.0, dt=0.3),
])
def test_system_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        SystemConfig(**kw)


def test_pulse_grid_must_match(shared):
    with pytest.raises(ValueError, match="grid"):
        step_maps(ControlPulse(np.zeros(11), shared.dt), shared)


def test_harmonic_oscillator_free_evolution():
    cfg = SystemConfig(gamma=0.0, t_final=10.0, dt=1e-3)
    x0 = np.zeros(N_CUMULANTS)
    x0[Q_A] = 1.0
    traj = propagate_forward(x0, ControlPulse.zeros(cfg), None, cfg)
    t = cfg.times()
    assert np.max(np.abs(traj[:, Q_A] - np.cos(t))) < 1e-8
    assert np.max(np.abs(traj[:, P_A] + np.sin(t))) < 1e-8


def test_constant_drive_matches_matrix_exponential(shared):
    # oracle: expm of the constant generator; first cumulants unforced
    u = 0.3
    x0 = thermal_state(1.0)
    x0[[0, 1, 2, 3]] = 0.4, -0.2, 0.1, 0.7
    pulse = ControlPulse(np.full(shared.n_steps + 1, u), shared.dt)
    traj = propagate_forward(x0, pulse, None, shared)
    m = build_generator(u, shared)
    for k in (1000, 5000, 10000):
        ref = expm(m * shared.dt * k) @ x0
        np.testing.assert_allclose(traj[k], ref, rtol=1e-10, atol=1e-12)


def test_second_cumulants_stationary_only_on_null_space(shared):
    m2 = build_generator(0.0, shared)[4:, 4:]
    ns = null_space(m2)
    assert ns.shape[1] >= 1
    x0 = np.zeros(N_CUMULANTS)
    x0[4:] = ns[:, 0]
    traj = propagate_forward(x0, ControlPulse.zeros(shared), None, shared)
    assert np.max(np.abs(traj - x0)) < 1e-10
    # a thermal start is not stationary and relaxes towards expm(M2 t) x0
    x0 = thermal_state(1.0)
    traj = propagate_forward(x0, ControlPulse.zeros(shared), None, shared)
    assert np.max(np.abs(traj[-1, 4:] - x0[4:])) > 0.1
    np.testing.assert_allclose(traj[-1, 4:], expm(m2 * shared.t_final) @ x0[4:],
                               atol=1e-10)


def test_means_decay_with_damped_envelope():
    cfg = SystemConfig(gamma=0.1, t_final=50.0, dt=1e-3)
    x0 = np.zeros(N_CUMULANTS)
    x0[[Q_A, Q_B]] = 1.0
    traj = propagate_forward(x0, ControlPulse.zeros(cfg), None, cfg)
    # slowest decay rate from the eigenvalues of the first-cumulant block
    rate = -np.max(np.linalg.eigvals(build_generator(0.0, cfg)[:4, :4]).real)
    assert rate == pytest.approx(cfg.gamma / 2, rel=1e-12)
    amp = np.max(np.abs(traj[:, :4]), axis=1)
    envelope = 1.06 * np.exp(-rate * cfg.times())
    assert np.all(amp <= envelope)
    assert amp[-1] < 0.1
    # with cross damping the symmetric mean decays at twice the rate
    cross = dataclasses.replace(cfg, m1_cross_damping=True)
    traj = propagate_forward(x0, ControlPulse.zeros(cross), None, cross)
    assert np.max(np.abs(traj[-1, :4])) < 1e-2


def test_costate_backward_rotation():
    cfg = SystemConfig(gamma=0.0, t_final=10.0, dt=1e-3)
    lam_f = np.zeros(N_CUMULANTS)
    lam_f[Q_A] = 1.0
    lam = propagate_costate_backward(lam_f, ControlPulse.zeros(cfg), cfg)
    tau = cfg.t_final - cfg.times()
    assert np.max(np.abs(lam[:, Q_A] - np.cos(tau))) < 1e-8
    assert np.max(np.abs(lam[:, P_A] - np.sin(tau))) < 1e-8


def test_costate_zero_stays_zero(shared):
    lam = propagate_costate_backward(np.zeros(14), ControlPulse.zeros(shared), shared)
    assert not lam.any()


def test_adjoint_pairing_conserved_without_noise(shared):
    rng = np.random.default_rng(1)
    pulse = ControlPulse(0.4 * np.sin(2 * shared.times()), shared.dt)
    x0 = rng.normal(size=(5, 14))
    lam_f = rng.normal(size=(5, 14))
    x = propagate_forward(x0, pulse, None, shared)
    lam = propagate_costate_backward(lam_f, pulse, shared)
    start = np.sum(lam[0] * x[0], axis=1)
    end = np.sum(lam[-1] * x[-1], axis=1)
    np.testing.assert_allclose(start, end, rtol=1e-6)
    # pairing is constant at every node, not just the ends
    mid = np.sum(lam[3333] * x[3333], axis=1)
    np.testing.assert_allclose(mid, end, rtol=1e-6)


def test_adjoint_pairing_with_force(shared):
    pulse = ControlPulse(0.2 * np.sin(shared.times()), shared.dt)
    xi = np.cos(1.7 * shared.times())
    x0 = thermal_state(1.0)
    x0[Q_A] = 0.5
    lam_f = np.arange(14.0) / 14
    x = propagate_forward(x0, pulse, xi, shared)
    lam = propagate_costate_backward(lam_f, pulse, shared)
    c = drive_matrix(shared)[:, 0]
    integrand = xi * (lam @ c)
    rhs = trapezoid(integrand, dx=shared.dt)
    lhs = lam[-1] @ x[-1] - lam[0] @ x[0]
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_costate_maps_are_transposed_forward_maps(shared):
    pulse = ControlPulse(np.sin(3 * shared.times()), shared.dt)
    a, _, _ = step_maps(pulse, shared)
    b = costate_step_maps(pulse, shared)
    np.testing.assert_allclose(b, np.swapaxes(a, 1, 2), rtol=0, atol=1e-15)


def test_rk4_order():
    assert rk4_error_ratio(dt=0.1) == pytest.approx(16.0, rel=0.2)
    assert rk4_error_ratio(dt=0.05) == pytest.approx(16.0, rel=0.2)


def test_exchange_symmetry(shared):
    rng = np.random.default_rng(5)
    swap = [2, 3, 0, 1, 7, 8, 9, 4, 5, 6, 10, 11, 13, 12]
    pulse = ControlPulse(0.5 * np.sin(2 * shared.times()), shared.dt)
    xi = rng.normal(size=shared.n_steps + 1)
    x0 = thermal_state(1.0)
    x0[:4] = 0.3, -0.1, 0.8, 0.2
    x0[QQ_AB], x0[PBQA] = 0.2, -0.1
    a = propagate_forward(x0, pulse, xi, shared)
    b = propagate_forward(x0[swap], pulse, xi, shared)
    np.testing.assert_allclose(b[:, swap], a, rtol=1e-12, atol=1e-12)


def test_independent_cross_cumulants_stay_zero():
    cfg = SystemConfig(gamma=0.1, topology="independent", t_final=10.0, dt=1e-3)
    rng = np.random.default_rng(2)
    xi = rng.normal(size=(cfg.n_steps + 1, 2))
    pulse = ControlPulse(np.sin(2 * cfg.times()), cfg.dt)
    traj = propagate_forward(thermal_state(1.0), pulse, xi, cfg)
    assert np.max(np.abs(traj[:, QQ_AB:])) < 1e-12


def test_affine_control_dependence(shared):
    rng = np.random.default_rng(3)
    u = 0.3 * np.sin(2 * shared.times())
    du = rng.normal(size=u.size)
    x0 = thermal_state(1.0)
    base = propagate_forward(x0, ControlPulse(u, shared.dt), None, shared)[-1]
    diffs = []
    for d in (1e-3, 5e-4):
        plus = propagate_forward(x0, ControlPulse(u + d * du, shared.dt), None, shared)[-1]
        diffs.append((plus - base) / d)
    # difference quotient converges linearly in delta
    first_order = 2 * diffs[1] - diffs[0]
    assert np.max(np.abs(diffs[1] - first_order)) < 1e-3 * np.max(np.abs(first_order))


def test_ensemble_batch_matches_single_runs(shared):
    rng = np.random.default_rng(4)
    xi = rng.normal(size=(shared.n_steps + 1, 3, 1))
    pulse = ControlPulse(0.2 * np.cos(shared.times()), shared.dt)
    x0 = thermal_state(1.0)
    batch = propagate_forward(np.tile(x0, (3, 1)), pulse, xi, shared)
    for k in range(3):
        single = propagate_forward(x0, pulse, xi[:, k, 0], shared)
        np.testing.assert_allclose(batch[:, k], single, rtol=1e-13, atol=1e-13)


def test_non_finite_state_reports_step():
    cfg = SystemConfig(gamma=0.1, t_final=50.0, dt=0.5)
    pulse = ControlPulse(np.full(cfg.n_steps + 1, -200.0), cfg.dt)
    with pytest.raises(NonFiniteStateError) as info:
        propagate_forward(thermal_state(1.0), pulse, None, cfg)
    assert 1 <= info.value.step <= cfg.n_steps
