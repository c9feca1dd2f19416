"""Noise-ensemble propagation with per-node moment accumulation.

Realizations are processed in fixed-size chunks. The chunk partition
depends only on ``chunk_size`` and chunk sums are reduced in index order,
so results are bit-identical for any number of worker threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import (ControlPulse, SystemConfig, march_blocks, step_maps,
                       thermal_state)
from .noise import NoiseSpectrumConfig, generate_ensemble
from .observables import covariance_from_moments

__all__ = ["EnsembleResult", "propagate_ensemble", "propagate_pulses", "frozen_noise",
           "DEFAULT_CHUNK"]

DEFAULT_CHUNK = 512


@dataclass
class EnsembleResult:
    """Per-node ensemble moments plus the final states."""

    times: np.ndarray
    mean_x: np.ndarray   # (n_nodes, 14)
    mean_mm: np.ndarray  # (n_nodes, 4, 4), average of m m^T
    finals: np.ndarray   # (N, 14)

    @property
    def n_realizations(self) -> int:
        return self.finals.shape[0]

    def covariances(self) -> np.ndarray:
        return covariance_from_moments(self.mean_x, self.mean_mm)

    def second_moments(self) -> dict:
        """Full ``<q^2>``, ``<p^2>`` per mode at every node."""
        mx, mm = self.mean_x, self.mean_mm
        return {
            "q2_A": mx[:, 4] + mm[:, 0, 0],
            "p2_A": mx[:, 5] + mm[:, 1, 1],
            "q2_B": mx[:, 7] + mm[:, 2, 2],
            "p2_B": mx[:, 8] + mm[:, 3, 3],
        }


def frozen_noise(sys_cfg: SystemConfig, noise_cfg: NoiseSpectrumConfig,
                 n_realizations: int, master_seed: int) -> np.ndarray:
    """Whole noise ensemble ``(n_nodes, N, ch)`` held in memory."""
    return generate_ensemble(noise_cfg, sys_cfg.n_steps, sys_cfg.dt, master_seed,
                             range(n_realizations), sys_cfg.n_noise_channels)


def _run_chunk(x0, maps, noise, n_nodes):
    sum_x = np.empty((n_nodes, x0.shape[-1]))
    sum_mm = np.empty((n_nodes, 4, 4))
    block = x0[None]
    for k0, block in march_blocks(x0, maps, noise):
        sl = slice(k0, k0 + block.shape[0])
        m = block[..., :4]  # first cumulants lead the vector
        sum_x[sl] = block.sum(axis=1)
        np.matmul(np.swapaxes(m, 1, 2), m, out=sum_mm[sl])
    return sum_x, sum_mm, block[-1].copy()


def propagate_ensemble(pulse: ControlPulse, sys_cfg: SystemConfig,
                       noise_cfg: NoiseSpectrumConfig, n_realizations: int,
                       master_seed: int, x0=None, noise=None,
                       chunk_size: int = DEFAULT_CHUNK, workers: int = 1,
                       maps=None) -> EnsembleResult:
    """Propagate ``n_realizations`` noise realizations from a common ``x0``.

    ``x0`` defaults to the thermal product state at the bath temperature and
    may also be an ``(N, 14)`` array. ``noise`` optionally supplies a
    pre-generated ensemble (see :func:`frozen_noise`); otherwise each chunk
    synthesizes its own slice from ``master_seed``.
    """
    return propagate_pulses([pulse], sys_cfg, noise_cfg, n_realizations,
                            master_seed, x0, noise, chunk_size, workers,
                            None if maps is None else [maps])[0]


def propagate_pulses(pulses, sys_cfg: SystemConfig, noise_cfg: NoiseSpectrumConfig,
                     n_realizations: int, master_seed: int, x0=None, noise=None,
                     chunk_size: int = DEFAULT_CHUNK, workers: int = 1,
                     maps=None) -> list[EnsembleResult]:
    """Like :func:`propagate_ensemble` for several pulses on the same noise.

    Each chunk of force histories is synthesized once and reused for every
    pulse, so the comparison is free of sampling differences between pulses.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    pulses = list(pulses)
    if maps is None:
        maps = [step_maps(p, sys_cfg) for p in pulses]
    n_nodes = sys_cfg.n_steps + 1
    ch = sys_cfg.n_noise_channels
    if x0 is None:
        x0 = thermal_state(sys_cfg.temperature)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_realizations, 14))
    if noise is not None and noise.shape != (n_nodes, n_realizations, ch):
        raise ValueError(f"noise shape {noise.shape} does not match "
                         f"{(n_nodes, n_realizations, ch)}")

    bounds = [(lo, min(lo + chunk_size, n_realizations))
              for lo in range(0, n_realizations, chunk_size)]

    def job(bound):
        lo, hi = bound
        if noise is not None:
            chunk_noise = noise[:, lo:hi]
        elif noise_cfg.gamma == 0:
            chunk_noise = None
        else:
            chunk_noise = generate_ensemble(noise_cfg, sys_cfg.n_steps, sys_cfg.dt,
                                            master_seed, range(lo, hi), ch)
        return [_run_chunk(np.array(x0[lo:hi]), m, chunk_noise, n_nodes) for m in maps]

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]

    results = []
    for i in range(len(pulses)):
        # reduce in chunk order for bit-identical sums
        sum_x, sum_mm, _ = parts[0][i]
        for chunk in parts[1:]:
            sum_x = sum_x + chunk[i][0]
            sum_mm = sum_mm + chunk[i][1]
        finals = np.concatenate([chunk[i][2] for chunk in parts], axis=0)
        results.append(EnsembleResult(sys_cfg.times(), sum_x / n_realizations,
                                      sum_mm / n_realizations, finals))
    return results
