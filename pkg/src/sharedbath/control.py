"""Ensemble optimal control of the parametric drive.

The objective is ``J = -ln nu_minus`` of the realization-averaged final
state (left unclamped so it has a gradient before entanglement appears).
Co-states obey ``dlam/dt = -M(u)^T lam`` backwards from
``lam_k(t_f) = dJ/dx_k(t_f)``, one per noise realization; the functional
derivative of J with respect to the drive is

    g(t) = sum_k lam_k(t)^T M_u x_k(t).

Since the co-state equation has no source term, ``lam_k(t) = Psi(t)
lam_k(t_f)`` with one 14x14 propagator ``Psi`` shared by all realizations,
which is what is stored instead of N co-state trajectories.

The pulse update is first-order Krotov: a forward sweep in which the drive
at each node is corrected using the co-states of the previous iteration and
the state already propagated under the corrected drive.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (N_CUMULANTS, ControlPulse, SystemConfig,
                       NonFiniteStateError, build_generator, costate_propagators,
                       drive_matrix, generator_derivative, march, march_blocks,
                       step_maps,
                       thermal_state)
from .ensemble import frozen_noise
from .noise import NoiseSpectrumConfig
from .observables import (MEANS, SIGMA_INDEX, UnphysicalCovariance,
                          assemble_covariance, neg_log_nu, neg_log_nu_gradient)

__all__ = [
    "KrotovConfig", "OptimizationState", "DegenerateObjective",
    "objective", "costate_boundary", "adjoint_gradient", "krotov_update",
    "optimize", "gradient_check",
]

log = logging.getLogger(__name__)


class DegenerateObjective(UnphysicalCovariance):
    """Objective is not differentiable at the current final state."""


@dataclass(frozen=True)
class KrotovConfig:
    """Optimizer settings.

    ``step_scale`` is the inverse step weight alpha of the update
    ``u += g / alpha``; ``None`` picks it automatically and doubles it
    whenever an iteration would lower the objective.
    """

    step_scale: float | None = None
    max_iterations: int = 50
    objective_tolerance: float = 0.0
    n_realizations: int = 1024
    master_seed: int = 0
    frozen_noise: bool = True
    penalty_weight: float = 0.0
    pin_boundaries: bool = False
    initial_step: float = 0.05
    max_rejections: int = 30

    def __post_init__(self):
        if self.step_scale is not None and not self.step_scale > 0:
            raise ValueError("step_scale must be > 0")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class OptimizationState:
    pulse: ControlPulse
    objective_history: list = field(default_factory=list)
    gradient_norm_history: list = field(default_factory=list)
    step_scale_history: list = field(default_factory=list)
    rejected_steps: int = 0
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.objective_history) - 1


def objective(ensemble_finals) -> float:
    """-ln nu_minus of the realization-averaged state."""
    return float(neg_log_nu(assemble_covariance(ensemble_finals)))


def costate_boundary(ensemble_finals) -> np.ndarray:
    """Per-realization ``dJ/dx_k`` at the final time, shape (N, 14)."""
    x = np.asarray(ensemble_finals, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("empty ensemble")
    n = x.shape[0]
    sigma = assemble_covariance(x)
    try:
        grad = neg_log_nu_gradient(sigma)
    except UnphysicalCovariance as exc:
        raise DegenerateObjective(str(exc)) from exc
    lam = np.zeros((n, N_CUMULANTS))
    per_slot = np.zeros(N_CUMULANTS)
    np.add.at(per_slot, SIGMA_INDEX.ravel(), grad.ravel())
    lam[:] = per_slot / n
    m = x[:, MEANS]
    dm = m - m.mean(axis=0)
    lam[:, MEANS] = dm @ (grad + grad.T) / n
    return lam


def _node_weights(n_nodes: int, dt: float) -> np.ndarray:
    w = np.full(n_nodes, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def adjoint_gradient(pulse: ControlPulse, sys_cfg: SystemConfig, noise,
                     x0=None, nodes=None):
    """Functional derivative ``g(t_j)`` of J w.r.t. the drive at ``nodes``.

    ``noise`` is a frozen ensemble ``(n_nodes, N, ch)`` or ``None`` for a
    single noiseless realization. Returns ``(g, J)``. Multiply ``g`` by the
    quadrature weight (dt, dt/2 at the ends) to get ``dJ/du_j``.
    """
    n_nodes = sys_cfg.n_steps + 1
    nodes = np.arange(n_nodes) if nodes is None else np.asarray(nodes)
    n_real = 1 if noise is None else noise.shape[1]
    if x0 is None:
        x0 = thermal_state(sys_cfg.temperature)
    x0 = np.broadcast_to(np.asarray(x0, float), (n_real, N_CUMULANTS)).copy()
    maps = step_maps(pulse, sys_cfg)
    want = set(int(j) for j in nodes)
    saved = {}
    x = x0
    for k, x in enumerate(march(x0, maps, noise)):
        if k in want:
            saved[k] = x.copy()
    lam_f = costate_boundary(x)
    psi = costate_propagators(pulse, sys_cfg)
    mu = generator_derivative(sys_cfg)
    g = np.array([np.sum((lam_f @ psi[j].T) * (saved[int(j)] @ mu.T)) for j in nodes])
    return g, objective(x)


def _rk4_rows(x, m1, m2, m3, f1, f2, f3, h):
    # one RK4 step for row states x (..., 14) with row forcings f
    k1 = x @ m1.T + f1
    k2 = (x + 0.5 * h * k1) @ m2.T + f2
    k3 = (x + 0.5 * h * k2) @ m2.T + f2
    k4 = (x + h * k3) @ m3.T + f3
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def krotov_update(x0, noise, psi, lambda_f, pulse_old: ControlPulse,
                  sys_cfg: SystemConfig, step_scale: float,
                  penalty_weight: float = 0.0, pin_boundaries: bool = False):
    """One first-order Krotov sweep.

    ``psi`` and ``lambda_f`` describe the co-states of the previous
    iteration (``lam_k(t_j) = psi[j] @ lambda_f[k]``). At node j the drive
    becomes ``u_old + (g_j - w u_old) / step_scale`` where ``g_j`` uses the
    state re-propagated under the already updated drive; within a step the
    correction found at its left node is held fixed.

    Returns ``(new_pulse, g)`` with ``g`` the update direction per node.
    """
    if not step_scale > 0:
        raise ValueError("step_scale must be > 0")
    u_old = pulse_old.values
    n_nodes = u_old.size
    c = drive_matrix(sys_cfg)
    m0 = build_generator(0.0, sys_cfg)
    mu = generator_derivative(sys_cfg)
    force = None if noise is None else noise @ c.T
    lambda_f = np.asarray(lambda_f, float)
    x = np.array(np.broadcast_to(x0, lambda_f.shape), dtype=float)
    u_new = u_old.copy()
    g = np.empty(n_nodes)
    pinned = {0, n_nodes - 1} if pin_boundaries else set()
    lam_t = lambda_f.T
    for j in range(n_nodes):
        # sum_k lam_k^T M_u x_k = <Psi_j^T M_u, lam_f^T X>
        gj = np.sum((psi[j].T @ mu) * (lam_t @ x))
        g[j] = gj - penalty_weight * u_old[j]
        if j not in pinned:
            u_new[j] = u_old[j] + g[j] / step_scale
        if not np.isfinite(u_new[j]):
            raise NonFiniteStateError(j, "pulse update (step_scale too small)")
        if j == n_nodes - 1:
            break
        shift = u_new[j] - u_old[j]
        u_mid = 0.5 * (u_old[j] + u_old[j + 1]) + shift
        if force is None:
            f1 = f2 = f3 = 0.0
        else:
            f1, f3 = force[j], force[j + 1]
            f2 = 0.5 * (f1 + f3)
        with np.errstate(over="ignore", invalid="ignore"):
            x = _rk4_rows(x, m0 + u_new[j] * mu, m0 + u_mid * mu,
                          m0 + (u_old[j + 1] + shift) * mu, f1, f2, f3, sys_cfg.dt)
        if not np.isfinite(x).all():
            raise NonFiniteStateError(j + 1)
    return ControlPulse(u_new, pulse_old.dt), g


def _iteration_noise(sys_cfg, noise_cfg, cfg, iteration):
    if noise_cfg.gamma == 0:
        return None
    seed = cfg.master_seed
    if not cfg.frozen_noise:
        seed = int(np.random.SeedSequence([cfg.master_seed, iteration])
                   .generate_state(1, np.uint64)[0])
    return frozen_noise(sys_cfg, noise_cfg, cfg.n_realizations, seed)


def _evaluate(pulse, sys_cfg, x0, noise):
    block = None
    for _, block in march_blocks(x0, step_maps(pulse, sys_cfg), noise):
        pass
    return block[-1].copy()


def optimize(initial_pulse: ControlPulse, sys_cfg: SystemConfig,
             noise_cfg: NoiseSpectrumConfig, cfg: KrotovConfig,
             x0=None, callback=None) -> OptimizationState:
    """Iterate forward propagation, co-state sweep and Krotov update.

    Stops after ``cfg.max_iterations`` accepted iterations, when the
    relative improvement drops below ``cfg.objective_tolerance``, or when
    the objective is not differentiable at the final state. With automatic
    step scaling a trial update that lowers the objective is discarded and
    retried with twice the step weight, so the recorded history never
    decreases.
    """
    initial_pulse.check_grid(sys_cfg)
    if x0 is None:
        x0 = thermal_state(sys_cfg.temperature)
    n = cfg.n_realizations
    x0 = np.broadcast_to(np.asarray(x0, float), (n, N_CUMULANTS)).copy()
    mu = generator_derivative(sys_cfg)
    weights = _node_weights(sys_cfg.n_steps + 1, sys_cfg.dt)

    noise = _iteration_noise(sys_cfg, noise_cfg, cfg, 0)
    pulse = initial_pulse.copy()
    finals = _evaluate(pulse, sys_cfg, x0, noise)
    state = OptimizationState(pulse, [objective(finals)])
    alpha = cfg.step_scale

    while state.iterations < cfg.max_iterations:
        it = state.iterations
        try:
            lam_f = costate_boundary(finals)
        except DegenerateObjective as exc:
            state.stop_reason = f"degenerate objective: {exc}"
            log.warning("stopping: %s", state.stop_reason)
            break
        psi = costate_propagators(pulse, sys_cfg)
        if alpha is None:
            g0 = _gradient_along(pulse, sys_cfg, x0, noise, psi, lam_f, mu)
            g0 = g0 - cfg.penalty_weight * pulse.values
            gmax = np.max(np.abs(g0))
            if gmax == 0:
                state.stop_reason = "zero gradient"
                break
            alpha = gmax / cfg.initial_step
        j_old = state.objective_history[-1]
        for _ in range(cfg.max_rejections + 1):
            next_noise = noise if cfg.frozen_noise else _iteration_noise(
                sys_cfg, noise_cfg, cfg, it + 1)
            try:
                trial, g = krotov_update(x0, noise, psi, lam_f, pulse, sys_cfg, alpha,
                                         cfg.penalty_weight, cfg.pin_boundaries)
                trial_finals = _evaluate(trial, sys_cfg, x0, next_noise)
                j_new = objective(trial_finals)
            except (NonFiniteStateError, UnphysicalCovariance):
                j_new = -np.inf
            if j_new >= j_old or not cfg.frozen_noise or cfg.step_scale is not None:
                break
            state.rejected_steps += 1
            log.info("iteration %d: J %.6g -> %.6g, doubling step weight", it + 1,
                     j_old, j_new)
            alpha *= 2.0
        else:
            state.stop_reason = "no improving step found"
            break
        if cfg.frozen_noise and j_new < j_old:
            log.warning("non-monotone iteration %d: %.12g -> %.12g", it + 1, j_old, j_new)
        pulse, finals, noise = trial, trial_finals, next_noise
        state.pulse = pulse
        state.objective_history.append(j_new)
        state.gradient_norm_history.append(float(np.sqrt(np.sum(weights * g * g))))
        state.step_scale_history.append(alpha)
        if callback is not None:
            callback(state)
        if cfg.objective_tolerance > 0 and \
                j_new - j_old < cfg.objective_tolerance * max(abs(j_old), 1e-300):
            state.stop_reason = "relative improvement below tolerance"
            break
    else:
        state.stop_reason = "max_iterations"
    return state


def _gradient_along(pulse, sys_cfg, x0, noise, psi, lam_f, mu):
    # g_j = sum_n lam_f[n]^T (Psi_j^T M_u) x_n[j] = <Psi_j^T M_u, lam_f^T X_j>
    g = np.empty(sys_cfg.n_steps + 1)
    lam_t = lam_f.T
    for k0, block in march_blocks(x0, step_maps(pulse, sys_cfg), noise):
        sl = slice(k0, k0 + block.shape[0])
        corr = lam_t @ block
        g[sl] = np.sum((np.swapaxes(psi[sl], 1, 2) @ mu) * corr, axis=(1, 2))
    return g


def gradient_check(pulse: ControlPulse, sys_cfg: SystemConfig,
                   noise_cfg: NoiseSpectrumConfig, cfg: KrotovConfig,
                   node_indices, h: float = 1e-5, x0=None, noise=None,
                   return_details: bool = False):
    """Adjoint gradient versus central finite differences of J.

    The finite difference perturbs the drive at a single node; the adjoint
    value is ``w_j g(t_j)`` with the trapezoid weight ``w_j`` (the integral
    of the linear-interpolation hat function). The error is
    ``max_j |adj_j - fd_j| / max_j |fd_j|``.
    """
    if noise is None:
        noise = _iteration_noise(sys_cfg, noise_cfg, cfg, 0)
    n = 1 if noise is None else noise.shape[1]
    if x0 is None:
        x0 = thermal_state(sys_cfg.temperature)
    x0 = np.broadcast_to(np.asarray(x0, float), (n, N_CUMULANTS)).copy()
    nodes = np.asarray(sorted(set(int(j) for j in node_indices)))
    g, _ = adjoint_gradient(pulse, sys_cfg, noise, x0, nodes)
    adj = g * _node_weights(sys_cfg.n_steps + 1, sys_cfg.dt)[nodes]
    fd = np.empty(nodes.size)
    for i, j in enumerate(nodes):
        vals = []
        for sgn in (1.0, -1.0):
            u = pulse.values.copy()
            u[j] += sgn * h
            vals.append(objective(_evaluate(ControlPulse(u, pulse.dt), sys_cfg, x0, noise)))
        fd[i] = (vals[0] - vals[1]) / (2 * h)
    err = float(np.max(np.abs(adj - fd)) / np.max(np.abs(fd)))
    if return_details:
        return err, adj, fd
    return err
