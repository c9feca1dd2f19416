"""Stationary Gaussian force with an Ohmic fluctuation-dissipation spectrum.

Spectra are two-sided, ``<xi(t) xi(0)> = (1/2pi) int S(w) exp(iwt) dw``, in
natural units (hbar = k_B = m = omega = 1).

Realizations are synthesized in the frequency domain on a periodic grid at
least twice as long as the requested horizon and then truncated, which keeps
the circular wrap-around of the FFT out of the returned window. Each
realization draws from its own ``numpy`` generator seeded by
``SeedSequence(master_seed, spawn_key=(index, channel))``, so ensembles are
reproducible no matter how they are split up.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

__all__ = [
    "NoiseMode", "NoiseSpectrumConfig", "NoiseRealization", "CutoffAboveNyquist",
    "target_spectrum", "synthesis_length", "generate_realization",
    "generate_ensemble", "estimate_autocorrelation", "realization_seed",
]


class NoiseMode(str, enum.Enum):
    QUANTUM_FDT = "quantum_fdt"
    CLASSICAL_WHITE = "classical_white"


class CutoffAboveNyquist(ValueError):
    """The spectral cutoff is not resolved by the time grid."""


@dataclass(frozen=True)
class NoiseSpectrumConfig:
    gamma: float = 0.1
    temperature: float = 1.0
    omega_cutoff: float = 50.0
    mode: NoiseMode = NoiseMode.QUANTUM_FDT

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode(self.mode))
        if not self.omega_cutoff > 0:
            raise ValueError("omega_cutoff must be > 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


@dataclass
class NoiseRealization:
    values: np.ndarray
    seed: int


def target_spectrum(omega, cfg: NoiseSpectrumConfig) -> np.ndarray:
    """Two-sided power spectrum S(omega) of the bath force.

    ``QUANTUM_FDT``: ``gamma * w * coth(w / 2T) * exp(-|w|/w_c)`` with the
    removable singularity ``S(0) = 2 gamma T``. ``CLASSICAL_WHITE``:
    ``2 gamma T exp(-|w|/w_c)``.
    """
    w = np.abs(np.asarray(omega, dtype=float))
    damp = np.exp(-w / cfg.omega_cutoff)
    two_t = 2.0 * cfg.temperature
    if cfg.mode is NoiseMode.CLASSICAL_WHITE:
        return cfg.gamma * two_t * damp
    x = w / two_t
    small = x < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        # x coth x, series below 1e-4
        xcoth = np.where(small, 1.0 + x * x / 3.0, x / np.tanh(np.where(small, 1.0, x)))
    return cfg.gamma * two_t * xcoth * damp


def synthesis_length(n_nodes: int) -> int:
    """Periodic synthesis length: a fast FFT size >= 2 * n_nodes."""
    return sfft.next_fast_len(2 * n_nodes, real=True)


def _check_grid(cfg: NoiseSpectrumConfig, dt: float):
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if dt * cfg.omega_cutoff > np.pi:
        raise CutoffAboveNyquist(
            f"omega_cutoff={cfg.omega_cutoff} exceeds the Nyquist frequency "
            f"pi/dt={np.pi / dt:.4g}"
        )


def _amplitudes(cfg: NoiseSpectrumConfig, length: int, dt: float) -> np.ndarray:
    omega = 2.0 * np.pi * sfft.rfftfreq(length, dt)
    # E|Z_k|^2 = L S(w_k) / dt gives var(xi) = (1/2pi) sum S dw
    return np.sqrt(target_spectrum(omega, cfg) * length / dt)


def realization_seed(master_seed: int, index: int, channel: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index), int(channel)))


def _synthesize(amp: np.ndarray, length: int, n_nodes: int,
                seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seq)
    z = rng.standard_normal((2, amp.size))
    spec = amp * (z[0] + 1j * z[1]) / np.sqrt(2.0)
    # DC and Nyquist bins must be real with the full variance
    spec[0] = amp[0] * z[0, 0]
    if length % 2 == 0:
        spec[-1] = amp[-1] * z[0, -1]
    return sfft.irfft(spec, n=length)[:n_nodes]


def generate_realization(cfg: NoiseSpectrumConfig, n_steps: int, dt: float,
                         seed: int) -> NoiseRealization:
    """One force history on ``n_steps + 1`` grid nodes.

    Same as realization 0, channel 0 of ``generate_ensemble`` with
    ``master_seed=seed``.
    """
    _check_grid(cfg, dt)
    n_nodes = int(n_steps) + 1
    length = synthesis_length(n_nodes)
    values = _synthesize(_amplitudes(cfg, length, dt), length, n_nodes,
                         realization_seed(seed, 0, 0))
    return NoiseRealization(values, int(seed))


def generate_ensemble(cfg: NoiseSpectrumConfig, n_steps: int, dt: float,
                      master_seed: int, indices, channels: int = 1) -> np.ndarray:
    """Force histories for realizations ``indices`` as ``(n_nodes, N, ch)``.

    The history for (index, channel) only depends on the master seed and on
    that pair, so any partition of the index range reproduces the same
    numbers.
    """
    _check_grid(cfg, dt)
    indices = list(indices)
    n_nodes = int(n_steps) + 1
    length = synthesis_length(n_nodes)
    amp = _amplitudes(cfg, length, dt)
    out = np.empty((n_nodes, len(indices), channels))
    if cfg.gamma == 0:
        out[:] = 0.0
        return out
    for j, idx in enumerate(indices):
        for c in range(channels):
            out[:, j, c] = _synthesize(amp, length, n_nodes,
                                       realization_seed(master_seed, idx, c))
    return out


def estimate_autocorrelation(realizations, max_lag: int) -> np.ndarray:
    """Ensemble- and time-averaged autocorrelation for lags 0..max_lag.

    Each lag ``k`` is averaged over the ``n - k`` available pairs of every
    trajectory (unbiased in the pair count). No mean is subtracted, the
    force being zero-mean by construction.
    """
    rows = [np.asarray(getattr(r, "values", r), dtype=float) for r in realizations]
    if len(rows) < 2:
        raise ValueError(f"need at least two realizations, got {len(rows)}")
    n = min(r.size for r in rows)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must be in [0, {n - 1}]")
    data = np.stack([r[:n] for r in rows])
    length = sfft.next_fast_len(2 * n)
    f = sfft.rfft(data, n=length, axis=1)
    acf = sfft.irfft((f * f.conj()).real, n=length, axis=1)[:, :max_lag + 1]
    counts = n - np.arange(max_lag + 1)
    return acf.mean(axis=0) / counts
