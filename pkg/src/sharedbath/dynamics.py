"""Cumulant equations of motion for two parametrically driven modes.

The state of one noise realization is the 14-vector of first and second
(Weyl-ordered, central) cumulants::

    0  <q_A>      1  <p_A>      2  <q_B>      3  <p_B>
    4  <q_A^2>    5  <p_A^2>    6  <p_A q_A>
    7  <q_B^2>    8  <p_B^2>    9  <p_B q_B>
    10 <q_A q_B>  11 <p_A p_B>  12 <p_A q_B>  13 <p_B q_A>

It obeys ``dx/dt = M(u(t)) x + c xi(t)`` in natural units m = omega = hbar
= k_B = 1. ``M`` is affine in the drive, ``M(u) = M(0) + u * M_u``.

Time stepping is classical RK4 on a fixed grid. Because the equations are
linear, one RK4 step is itself an exact linear map
``x_{n+1} = A_n x_n + P_n xi_n + Q_n xi_{n+1}`` (drive and noise are
linearly interpolated at the midpoint stage). The maps for all steps are
built in one batched pass and the ensemble is then marched with a single
matrix product per step.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "N_CUMULANTS", "Q_A", "P_A", "Q_B", "P_B", "QQ_A", "PP_A", "PQ_A",
    "QQ_B", "PP_B", "PQ_B", "QQ_AB", "PP_AB", "PAQB", "PBQA",
    "Topology", "SystemConfig", "ControlPulse", "NonFiniteStateError",
    "build_generator", "generator_derivative", "drive_matrix",
    "thermal_state", "vacuum_state", "step_maps", "costate_step_maps",
    "march", "propagate_forward", "costate_propagators",
    "propagate_costate_backward",
]

N_CUMULANTS = 14

Q_A, P_A, Q_B, P_B = 0, 1, 2, 3
QQ_A, PP_A, PQ_A = 4, 5, 6
QQ_B, PP_B, PQ_B = 7, 8, 9
QQ_AB, PP_AB, PAQB, PBQA = 10, 11, 12, 13


class Topology(str, enum.Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


class NonFiniteStateError(FloatingPointError):
    """Propagation produced inf/nan; ``step`` is the first bad grid step."""

    def __init__(self, step: int, what: str = "state"):
        super().__init__(
            f"non-finite {what} at step {step}: drive unstable or dt too large"
        )
        self.step = step


@dataclass(frozen=True)
class SystemConfig:
    """Physical and grid parameters, all in natural units.

    ``gamma`` is the damping rate in units of omega, ``temperature`` is
    in units of hbar*omega/k_B, ``t_final`` and ``dt`` in units of 1/omega.
    """

    gamma: float = 0.1
    temperature: float = 1.0
    topology: Topology = Topology.SHARED
    m1_cross_damping: bool = False
    t_final: float = 20.0
    dt: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not self.t_final > 0:
            raise ValueError(f"t_final must be > 0, got {self.t_final}")
        if not 0 < self.dt <= self.t_final:
            raise ValueError(f"need 0 < dt <= t_final, got dt={self.dt}")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise ValueError("t_final must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def n_noise_channels(self) -> int:
        return 1 if self.topology is Topology.SHARED else 2

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class ControlPulse:
    """Drive u(t) sampled at the grid nodes, in units of m*omega^2."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("pulse values must be a 1-d array of >= 2 nodes")

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)

    def check_grid(self, config: SystemConfig):
        if self.n_steps != config.n_steps or self.dt != config.dt:
            raise ValueError(
                f"pulse grid ({self.n_steps} steps, dt={self.dt}) does not "
                f"match system grid ({config.n_steps} steps, dt={config.dt})"
            )

    def copy(self) -> "ControlPulse":
        return ControlPulse(self.values.copy(), self.dt)

    @classmethod
    def zeros(cls, config: SystemConfig) -> "ControlPulse":
        return cls(np.zeros(config.n_steps + 1), config.dt)


def _generator_parts(config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return (M(0), M_u) with M(u) = M(0) + u * M_u (read-only, cached)."""
    return _cached_parts(config.gamma, config.topology, config.m1_cross_damping)


@functools.lru_cache(maxsize=64)
def _cached_parts(g: float, topology: Topology, m1_cross_damping: bool):
    shared = topology is Topology.SHARED
    m0 = np.zeros((N_CUMULANTS, N_CUMULANTS))
    mu = np.zeros((N_CUMULANTS, N_CUMULANTS))

    def a(row, col, coef=1.0):
        # entry coef * a with a = -1 - u
        m0[row, col] += -coef
        mu[row, col] += -coef

    # first cumulants
    m0[Q_A, P_A] = 1.0
    a(P_A, Q_A)
    m0[P_A, P_A] = -g
    m0[Q_B, P_B] = 1.0
    a(P_B, Q_B)
    m0[P_B, P_B] = -g
    if shared and m1_cross_damping:
        m0[P_A, P_B] = -g
        m0[P_B, P_A] = -g

    # single-mode second cumulants
    for qq, pp, pq in ((QQ_A, PP_A, PQ_A), (QQ_B, PP_B, PQ_B)):
        m0[qq, pq] = 2.0
        m0[pp, pp] = -2 * g
        a(pp, pq, 2.0)
        a(pq, qq)
        m0[pq, pp] = 1.0
        m0[pq, pq] = -g

    # cross cumulants
    m0[QQ_AB, PAQB] = 1.0
    m0[QQ_AB, PBQA] = 1.0
    m0[PP_AB, PP_AB] = -2 * g
    a(PP_AB, PAQB)
    a(PP_AB, PBQA)
    a(PAQB, QQ_AB)
    m0[PAQB, PP_AB] = 1.0
    m0[PAQB, PAQB] = -g
    a(PBQA, QQ_AB)
    m0[PBQA, PP_AB] = 1.0
    m0[PBQA, PBQA] = -g

    if shared:
        # friction acts on p_A + p_B: A-B mixing terms of the shared bath
        m0[PP_A, PP_AB] = -2 * g
        m0[PQ_A, PBQA] = -g
        m0[PP_B, PP_AB] = -2 * g
        m0[PQ_B, PAQB] = -g
        m0[PP_AB, PP_A] = -g
        m0[PP_AB, PP_B] = -g
        m0[PAQB, PQ_B] = -g
        m0[PBQA, PQ_A] = -g
    m0.flags.writeable = False
    mu.flags.writeable = False
    return m0, mu


def build_generator(u, config: SystemConfig) -> np.ndarray:
    """Generator ``M(u)``; ``u`` may be a scalar or an array of drive values.

    Returns shape ``(14, 14)`` for scalar ``u`` and ``u.shape + (14, 14)``
    otherwise.
    """
    m0, mu = _generator_parts(config)
    u = np.asarray(u, dtype=float)
    return m0 + u[..., None, None] * mu


def generator_derivative(config: SystemConfig) -> np.ndarray:
    """Constant matrix ``dM/du``."""
    return _generator_parts(config)[1]


def drive_matrix(config: SystemConfig) -> np.ndarray:
    """Map from noise channels to cumulant rates, shape ``(14, channels)``.

    A shared bath has one force acting on both momenta; independent baths
    have one force per mode. Only first cumulants are driven.
    """
    c = np.zeros((N_CUMULANTS, config.n_noise_channels))
    if config.topology is Topology.SHARED:
        c[P_A, 0] = c[P_B, 0] = 1.0
    else:
        c[P_A, 0] = 1.0
        c[P_B, 1] = 1.0
    return c


def thermal_state(temperature: float) -> np.ndarray:
    """Product of single-mode thermal states with zero means."""
    v = 0.5 / np.tanh(0.5 / temperature)
    x = np.zeros(N_CUMULANTS)
    x[[QQ_A, PP_A, QQ_B, PP_B]] = v
    return x


def vacuum_state() -> np.ndarray:
    x = np.zeros(N_CUMULANTS)
    x[[QQ_A, PP_A, QQ_B, PP_B]] = 0.5
    return x


def _rk4_linear(m1, m2, m3, f1, f2, f3, y, h):
    k1 = m1 @ y + f1
    k2 = m2 @ (y + 0.5 * h * k1) + f2
    k3 = m2 @ (y + 0.5 * h * k2) + f2
    k4 = m3 @ (y + h * k3) + f3
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _pulse_stage_values(u: np.ndarray):
    return u[:-1], 0.5 * (u[:-1] + u[1:]), u[1:]


# bounds temporary memory of the batched map construction
_MAP_BLOCK = 8192


def step_maps(pulse: ControlPulse, config: SystemConfig):
    """Exact RK4 step maps for the whole grid.

    Returns ``(A, P, Q)`` with shapes ``(n, 14, 14)``, ``(n, 14, ch)``,
    ``(n, 14, ch)`` so that ``x[k+1] = A[k] x[k] + P[k] xi[k] + Q[k] xi[k+1]``.
    """
    pulse.check_grid(config)
    c = drive_matrix(config)
    ch = c.shape[1]
    n = pulse.n_steps
    d = N_CUMULANTS
    eye_block = np.concatenate([np.eye(d), np.zeros((d, 2 * ch))], axis=1)
    f_start = np.concatenate([np.zeros((d, d)), c, np.zeros((d, ch))], axis=1)
    f_end = np.concatenate([np.zeros((d, d + ch)), c], axis=1)
    f_mid = 0.5 * (f_start + f_end)
    out = np.empty((n, d, d + 2 * ch))
    u_s, u_m, u_e = _pulse_stage_values(pulse.values)
    for lo in range(0, n, _MAP_BLOCK):
        sl = slice(lo, min(lo + _MAP_BLOCK, n))
        out[sl] = _rk4_linear(
            build_generator(u_s[sl], config),
            build_generator(u_m[sl], config),
            build_generator(u_e[sl], config),
            f_start, f_mid, f_end, eye_block, config.dt,
        )
    return out[:, :, :d], out[:, :, d:d + ch], out[:, :, d + ch:]


def costate_step_maps(pulse: ControlPulse, config: SystemConfig) -> np.ndarray:
    """RK4 maps ``B[k]`` with ``lam[k] = B[k] lam[k+1]`` for the co-state
    equation ``dlam/dt = -M(u)^T lam`` integrated from t_f back to 0."""
    pulse.check_grid(config)
    n = pulse.n_steps
    d = N_CUMULANTS
    out = np.empty((n, d, d))
    u_s, u_m, u_e = _pulse_stage_values(pulse.values)
    eye = np.eye(d)
    for lo in range(0, n, _MAP_BLOCK):
        sl = slice(lo, min(lo + _MAP_BLOCK, n))
        # stepping backwards in time: stages start at t_{k+1}
        m_first = np.swapaxes(build_generator(u_e[sl], config), -1, -2)
        m_mid = np.swapaxes(build_generator(u_m[sl], config), -1, -2)
        m_last = np.swapaxes(build_generator(u_s[sl], config), -1, -2)
        out[sl] = _rk4_linear(m_first, m_mid, m_last, 0.0, 0.0, 0.0, eye,
                              config.dt)
    return out


MARCH_BLOCK = 256


def march_blocks(x0: np.ndarray, maps, noise: np.ndarray | None = None,
                 block: int = MARCH_BLOCK) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k0, X)`` with ``X[j]`` the state at node ``k0 + j``.

    Blocks tile the nodes ``0..n_steps`` in order without overlap. Each
    step is a single product of the augmented row ``[x_k, xi_k, xi_{k+1}]``
    with the stacked matrix ``[A_k; P_k; Q_k]^T``.
    """
    a, p, q = maps
    n_nodes = a.shape[0] + 1
    prev = np.array(x0, dtype=float)
    d = prev.shape[-1]
    ch = 0 if noise is None else noise.shape[-1]
    for k0 in range(0, n_nodes, block):
        k1 = min(k0 + block, n_nodes)
        lo = max(k0 - 1, 0)
        # rows hold nodes lo .. k1-1; all but the last feed a step
        aug = np.empty((k1 - lo,) + prev.shape[:-1] + (d + 2 * ch,))
        aug[0, ..., :d] = prev
        stages = [np.swapaxes(a[lo:k1 - 1], 1, 2)]
        if ch:
            aug[:-1, ..., d:d + ch] = noise[lo:k1 - 1]
            aug[:-1, ..., d + ch:] = noise[lo + 1:k1]
            stages += [np.swapaxes(p[lo:k1 - 1], 1, 2), np.swapaxes(q[lo:k1 - 1], 1, 2)]
        g = np.concatenate(stages, axis=1)
        # overflow surfaces as NonFiniteStateError below
        with np.errstate(over="ignore", invalid="ignore"):
            for r in range(1, k1 - lo):
                np.matmul(aug[r - 1], g[r - 1], out=aug[r, ..., :d])
        out = aug[k0 - lo:, ..., :d]
        finite = np.isfinite(out).reshape(out.shape[0], -1).all(axis=1)
        if not finite.all():
            raise NonFiniteStateError(k0 + int(np.argmin(finite)))
        yield k0, out
        prev = out[-1].copy()


def march(x0: np.ndarray, maps, noise: np.ndarray | None = None) -> Iterator[np.ndarray]:
    """Yield the state at every grid node, starting with ``x0``.

    ``x0`` has shape ``(..., 14)``; ``noise`` (if given) has shape
    ``(n_nodes, ..., ch)`` matching the batch shape of ``x0``.
    """
    for _, block in march_blocks(x0, maps, noise):
        yield from block


def _as_noise(noise, n_nodes: int, channels: int, batch_shape):
    if noise is None:
        return None
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 1:
        noise = noise[:, None]
    if noise.shape[0] != n_nodes:
        raise ValueError(f"noise has {noise.shape[0]} nodes, grid has {n_nodes}")
    if noise.shape[-1] != channels:
        raise ValueError(
            f"noise has {noise.shape[-1]} channels, topology needs {channels}"
        )
    want = (n_nodes,) + tuple(batch_shape) + (channels,)
    if noise.shape != want:
        if noise.ndim == 2:
            noise = noise.reshape((n_nodes,) + (1,) * len(batch_shape) + (channels,))
        noise = np.broadcast_to(noise, want)
    return noise


def propagate_forward(x0, pulse: ControlPulse, noise, config: SystemConfig,
                      maps=None) -> np.ndarray:
    """Trajectory of cumulant state(s) on the grid.

    Parameters
    ----------
    x0 : array, shape (14,) or (N, 14)
    pulse : ControlPulse on the config grid
    noise : None, array (n_nodes,) or (n_nodes, ch) for a single force
        history, or (n_nodes, N, ch) for one history per realization.
    maps : optional precomputed ``step_maps(pulse, config)``

    Returns
    -------
    array, shape (n_nodes,) + x0.shape
    """
    x0 = np.asarray(x0, dtype=float)
    if maps is None:
        maps = step_maps(pulse, config)
    n_nodes = config.n_steps + 1
    noise = _as_noise(noise, n_nodes, config.n_noise_channels, x0.shape[:-1])
    traj = np.empty((n_nodes,) + x0.shape)
    for k0, block in march_blocks(x0, maps, noise):
        traj[k0:k0 + block.shape[0]] = block
    return traj


def costate_propagators(pulse: ControlPulse, config: SystemConfig,
                        maps: np.ndarray | None = None) -> np.ndarray:
    """Matrices ``Psi[k]`` with ``lam(t_k) = Psi[k] lam(t_f)``."""
    if maps is None:
        maps = costate_step_maps(pulse, config)
    n = maps.shape[0]
    psi = np.empty((n + 1, N_CUMULANTS, N_CUMULANTS))
    psi[n] = np.eye(N_CUMULANTS)
    for k in range(n - 1, -1, -1):
        psi[k] = maps[k] @ psi[k + 1]
    if not np.isfinite(psi).all():
        bad = np.nonzero(~np.isfinite(psi).all(axis=(1, 2)))[0].max()
        raise NonFiniteStateError(int(bad), "co-state")
    return psi


def propagate_costate_backward(lambda_f, pulse: ControlPulse,
                               config: SystemConfig) -> np.ndarray:
    """Co-state trajectory for ``dlam/dt = -M(u)^T lam`` from ``lam(t_f)``.

    ``lambda_f`` has shape (14,) or (N, 14); the result has shape
    ``(n_nodes,) + lambda_f.shape`` indexed forward in time.
    """
    lam = np.asarray(lambda_f, dtype=float)
    maps = costate_step_maps(pulse, config)
    n = maps.shape[0]
    traj = np.empty((n + 1,) + lam.shape)
    traj[n] = lam
    for k in range(n - 1, -1, -1):
        lam = lam @ maps[k].T
        if not np.isfinite(lam).all():
            raise NonFiniteStateError(k, "co-state")
        traj[k] = lam
    return traj
