import dataclasses

import numpy as np
import pytest

from sharedbath import control
from sharedbath.control import (
    DegenerateObjective, KrotovConfig, adjoint_gradient, costate_boundary,
    gradient_check, krotov_update, objective, optimize,
)
from sharedbath.dynamics import (PP_B, QQ_AB, QQ_B, ControlPulse, SystemConfig,
                                 costate_propagators, propagate_forward,
                                 thermal_state, vacuum_state)
from sharedbath.ensemble import frozen_noise
from sharedbath.noise import NoiseSpectrumConfig

SYS = SystemConfig(gamma=0.1, temperature=1.0, t_final=3.0, dt=0.01)
NCFG = NoiseSpectrumConfig(gamma=0.1, temperature=1.0)


def sin2(sys_cfg, amp=0.3):
    return ControlPulse(amp * np.sin(2 * sys_cfg.times()), sys_cfg.dt)


def asymmetric_state():
    x = vacuum_state()
    x[QQ_B], x[PP_B] = 0.7, 0.8
    x[QQ_AB] = 0.1
    return x


def finals_ensemble(rng, n=12):
    x = np.tile(thermal_state(1.0), (n, 1))
    x[:, :4] = 0.3 * rng.normal(size=(n, 4))
    x[:, QQ_B] += 0.2
    x[:, QQ_AB] = 0.4
    return x


def test_costate_boundary_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = finals_ensemble(rng)
    lam = costate_boundary(x)
    h = 1e-6
    for k, i in [(0, 0), (3, 1), (5, 2), (7, 4), (2, 10), (11, 13), (4, 6)]:
        xp, xm = x.copy(), x.copy()
        xp[k, i] += h
        xm[k, i] -= h
        fd = (objective(xp) - objective(xm)) / (2 * h)
        assert lam[k, i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_costate_boundary_degenerate():
    with pytest.raises(DegenerateObjective):
        costate_boundary(np.tile(thermal_state(1.0), (3, 1)))
    with pytest.raises(ValueError):
        costate_boundary(np.zeros((0, 14)))


def test_objective_relabeling_invariance():
    rng = np.random.default_rng(1)
    x = finals_ensemble(rng, 20)
    perm = rng.permutation(20)
    assert objective(x[perm]) == pytest.approx(objective(x), rel=1e-13)
    np.testing.assert_allclose(costate_boundary(x[perm]), costate_boundary(x)[perm],
                               rtol=1e-12, atol=1e-15)


def test_gradient_relabeling_invariance():
    noise = frozen_noise(SYS, NCFG, 6, master_seed=2)
    perm = [3, 0, 5, 1, 4, 2]
    nodes = [0, 50, 299]
    g1, j1 = adjoint_gradient(sin2(SYS), SYS, noise, nodes=nodes)
    g2, j2 = adjoint_gradient(sin2(SYS), SYS, noise[:, perm], nodes=nodes)
    assert j1 == pytest.approx(j2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-9)


def test_gradient_check_zero_pulse():
    sys_cfg = dataclasses.replace(SYS, t_final=5.0)
    kcfg = KrotovConfig(n_realizations=16, master_seed=4)
    err = gradient_check(ControlPulse.zeros(sys_cfg), sys_cfg, NCFG, kcfg,
                         [10, 120, 250, 400, 490])
    assert err < 1e-3


FINE = dataclasses.replace(SYS, dt=1e-3)


def test_gradient_check_deterministic():
    # noiseless single trajectory on a damped system
    quiet = NoiseSpectrumConfig(gamma=0.0)
    kcfg = KrotovConfig(n_realizations=1)
    err = gradient_check(sin2(FINE), FINE, quiet, kcfg, [1, 770, 1500, 2999],
                         x0=asymmetric_state())
    assert err < 1e-5
    # end nodes carry a one-sided quadrature weight and converge as O(dt)
    err = gradient_check(sin2(FINE), FINE, quiet, kcfg, [0, 1500, 3000],
                         x0=asymmetric_state())
    assert err < 1e-4


def test_gradient_check_single_realization():
    kcfg = KrotovConfig(n_realizations=1, master_seed=8)
    err = gradient_check(sin2(FINE), FINE, NCFG, kcfg, [5, 1000, 2000, 2995],
                         x0=asymmetric_state())
    assert err < 1e-4


def test_gradient_check_converges_with_step():
    # node-wise comparison differs from the discrete derivative by O(dt^2)
    quiet = NoiseSpectrumConfig(gamma=0.0)
    kcfg = KrotovConfig(n_realizations=1)
    errs = []
    for dt in (0.02, 0.01):
        cfg = dataclasses.replace(SYS, dt=dt)
        nodes = [int(round(t / dt)) for t in (0.5, 1.5, 2.5)]
        errs.append(gradient_check(sin2(cfg), cfg, quiet, kcfg, nodes,
                                   x0=asymmetric_state()))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.3)


def test_gradient_check_detects_wrong_sign(monkeypatch):
    kcfg = KrotovConfig(n_realizations=4, master_seed=8)
    nodes = [5, 100, 200, 295]
    real = control.generator_derivative
    monkeypatch.setattr(control, "generator_derivative", lambda cfg: -real(cfg))
    err = gradient_check(sin2(SYS), SYS, NCFG, kcfg, nodes)
    assert err > 1.0


def test_gradient_check_details():
    kcfg = KrotovConfig(n_realizations=4, master_seed=8)
    err, adj, fd = gradient_check(sin2(SYS), SYS, NCFG, kcfg, [100, 10, 100],
                                  return_details=True)
    assert adj.shape == fd.shape == (2,)
    assert err == pytest.approx(np.max(np.abs(adj - fd)) / np.max(np.abs(fd)))


def _krotov_inputs(n=4, seed=5):
    noise = frozen_noise(SYS, NCFG, n, master_seed=seed)
    pulse = sin2(SYS)
    x0 = np.tile(thermal_state(1.0), (n, 1))
    finals = propagate_forward(x0, pulse, noise, SYS)[-1]
    return noise, pulse, x0, costate_propagators(pulse, SYS), costate_boundary(finals)


def test_krotov_zero_costate_leaves_pulse():
    noise, pulse, x0, psi, lam = _krotov_inputs()
    new, g = krotov_update(x0, noise, psi, np.zeros_like(lam), pulse, SYS, 1.0)
    np.testing.assert_array_equal(new.values, pulse.values)
    assert not g.any()


def test_krotov_penalty_and_pinning():
    noise, pulse, x0, psi, lam = _krotov_inputs()
    new, _ = krotov_update(x0, noise, psi, np.zeros_like(lam), pulse, SYS, 4.0,
                           penalty_weight=2.0)
    np.testing.assert_allclose(new.values, 0.5 * pulse.values, rtol=1e-15)
    new, _ = krotov_update(x0, noise, psi, lam, pulse, SYS, 1.0, pin_boundaries=True)
    assert new.values[0] == pulse.values[0] and new.values[-1] == pulse.values[-1]
    assert not np.array_equal(new.values[1:-1], pulse.values[1:-1])


def test_krotov_small_step_approaches_gradient():
    noise, pulse, x0, psi, lam = _krotov_inputs()
    g_adj, _ = adjoint_gradient(pulse, SYS, noise)
    for alpha in (1e4, 1e6):
        new, g = krotov_update(x0, noise, psi, lam, pulse, SYS, alpha)
        # cancellation in u_new - u_old costs eps * |u| * alpha
        tol = 4 * np.finfo(float).eps * np.max(np.abs(pulse.values)) * alpha
        np.testing.assert_allclose((new.values - pulse.values) * alpha, g, rtol=0,
                                   atol=tol)
        # first node sees no feedback yet
        assert g[0] == pytest.approx(g_adj[0], rel=1e-10)
    # immediate feedback vanishes as 1/alpha
    assert np.max(np.abs(g - g_adj)) < 1e-4 * np.max(np.abs(g_adj))


def test_krotov_rejects_bad_step():
    noise, pulse, x0, psi, lam = _krotov_inputs()
    with pytest.raises(ValueError):
        krotov_update(x0, noise, psi, lam, pulse, SYS, 0.0)


def test_optimize_zero_iterations():
    kcfg = KrotovConfig(max_iterations=0, n_realizations=4)
    state = optimize(sin2(SYS), SYS, NCFG, kcfg)
    assert state.iterations == 0 and state.stop_reason == "max_iterations"
    np.testing.assert_array_equal(state.pulse.values, sin2(SYS).values)


def test_optimize_without_damping_keeps_guess():
    sys_cfg = dataclasses.replace(SYS, gamma=0.0)
    state = optimize(sin2(sys_cfg), sys_cfg, NoiseSpectrumConfig(gamma=0.0),
                     KrotovConfig(max_iterations=5, n_realizations=2))
    assert state.stop_reason.startswith("degenerate objective")
    np.testing.assert_array_equal(state.pulse.values, sin2(sys_cfg).values)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_optimize_improves_monotonically(seed):
    kcfg = KrotovConfig(max_iterations=4, n_realizations=16, master_seed=seed)
    seen = []
    state = optimize(sin2(SYS), SYS, NCFG, kcfg, callback=lambda s: seen.append(s.iterations))
    hist = np.array(state.objective_history)
    assert state.iterations == 4 and seen == [1, 2, 3, 4]
    assert np.all(np.diff(hist) >= -1e-10)
    assert hist[-1] > hist[0]
    assert len(state.gradient_norm_history) == len(state.step_scale_history) == 4
    # the reported objective is the clean forward value of the final pulse
    noise = frozen_noise(SYS, NCFG, 16, seed)
    finals = propagate_forward(np.tile(thermal_state(1.0), (16, 1)), state.pulse,
                               noise, SYS)[-1]
    assert objective(finals) == pytest.approx(hist[-1], rel=1e-10)


def test_optimize_fixed_step_and_fresh_noise():
    g, _ = adjoint_gradient(sin2(SYS), SYS, frozen_noise(SYS, NCFG, 8, 0))
    kcfg = KrotovConfig(max_iterations=2, n_realizations=8, frozen_noise=False,
                        step_scale=float(np.max(np.abs(g))) / 0.01)
    state = optimize(sin2(SYS), SYS, NCFG, kcfg)
    assert state.iterations == 2 and state.rejected_steps == 0
    assert state.step_scale_history == [kcfg.step_scale] * 2


def test_optimize_tolerance_stop():
    kcfg = KrotovConfig(max_iterations=20, n_realizations=8, objective_tolerance=10.0)
    state = optimize(sin2(SYS), SYS, NCFG, kcfg)
    assert state.iterations == 1
    assert "tolerance" in state.stop_reason


@pytest.mark.parametrize("kw", [dict(step_scale=0.0), dict(n_realizations=0),
                                dict(max_iterations=-1)])
def test_krotov_config_validation(kw):
    with pytest.raises(ValueError):
        KrotovConfig(**kw)
