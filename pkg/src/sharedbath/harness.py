"""Experiment runs, optimization runs and the quick validation battery."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, PulseSpec
from .control import KrotovConfig, OptimizationState, gradient_check, optimize
from .dynamics import (ControlPulse, NonFiniteStateError, SystemConfig, march,
                       step_maps, vacuum_state)
from .ensemble import EnsembleResult, propagate_ensemble
from .noise import NoiseSpectrumConfig, generate_ensemble, target_spectrum
from .observables import (first_nonfinite, log_negativity, neg_log_nu,
                          normal_mode_variances)
from .pulses import (PulseKind, load_pulse, named_pulse, resample,
                     save_pulse)

__all__ = ["TIMESERIES_COLUMNS", "CONVERGENCE_COLUMNS", "build_pulse",
           "timeseries", "run_experiment", "run_optimization",
           "CheckResult", "validate_suite", "rk4_error_ratio",
           "averaged_periodogram"]

log = logging.getLogger(__name__)

TIMESERIES_COLUMNS = [
    "t", "u", "neg_log_nu", "E_N", "q2_A", "p2_A", "q2_B", "p2_B",
    "var_q_plus", "var_p_plus", "var_q_minus", "var_p_minus",
]
CONVERGENCE_COLUMNS = ["iteration", "objective", "gradient_norm", "step_scale"]


def build_pulse(spec: PulseSpec, system: SystemConfig) -> ControlPulse:
    if spec.kind is PulseKind.FILE:
        pulse = load_pulse(spec.path)
        try:
            pulse.check_grid(system)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return pulse
    if spec.kind is PulseKind.OPTIMIZED:
        raise ConfigError("optimized pulses are produced by run_optimization")
    return named_pulse(spec.kind, system, spec.amplitude)


def timeseries(result: EnsembleResult, pulse: ControlPulse) -> dict:
    """Per-node diagnostics of an ensemble run, keyed by column name."""
    sigma = result.covariances()
    bad = first_nonfinite(sigma)
    if bad is not None:
        raise NonFiniteStateError(bad, "covariance")
    nl = neg_log_nu(sigma)
    mom = result.second_moments()
    nm = normal_mode_variances(sigma)
    return {
        "t": result.times, "u": pulse.values, "neg_log_nu": nl,
        "E_N": np.maximum(nl, 0.0),
        "q2_A": mom["q2_A"], "p2_A": mom["p2_A"],
        "q2_B": mom["q2_B"], "p2_B": mom["p2_B"],
        "var_q_plus": nm["q_plus"], "var_p_plus": nm["p_plus"],
        "var_q_minus": nm["q_minus"], "var_p_minus": nm["p_minus"],
    }


def _write_table(path: Path, columns, rows_by_col: dict, fmt: str) -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        data = {c: [float(v) for v in np.asarray(rows_by_col[c])] for c in columns}
        path.write_text(json.dumps({"columns": list(columns), "data": data}))
    else:
        path = path.with_suffix(".csv")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            cols = [np.asarray(rows_by_col[c], dtype=float) for c in columns]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])
    return path


def run_experiment(config: ExperimentConfig, pulse: ControlPulse | None = None,
                   extra_summary: dict | None = None) -> dict:
    """Propagate the ensemble under one pulse and write the outputs.

    Writes ``timeseries.{csv,json}`` and ``summary.json`` into
    ``config.output_path`` and returns the summary dict.
    """
    out = Path(config.output_path)
    out.mkdir(parents=True, exist_ok=True)
    if pulse is None:
        pulse = build_pulse(config.pulse, config.system)
    result = propagate_ensemble(pulse, config.system, config.noise_spectrum(),
                                config.n_realizations, config.master_seed,
                                workers=config.workers)
    series = timeseries(result, pulse)
    ts_path = _write_table(out / "timeseries", TIMESERIES_COLUMNS, series,
                           config.output_format)
    initial_energy = series["q2_A"][0] + series["p2_A"][0] + series["q2_B"][0] + series["p2_B"][0]
    final_energy = series["q2_A"][-1] + series["p2_A"][-1] + series["q2_B"][-1] + series["p2_B"][-1]
    summary = {
        "toolkit_version": __version__,
        "final_neg_log_nu": float(series["neg_log_nu"][-1]),
        "final_E_N": float(series["E_N"][-1]),
        "max_E_N": float(np.max(series["E_N"])),
        "initial_second_moment_sum": float(initial_energy),
        "final_second_moment_sum": float(final_energy),
        "final_q2_A": float(series["q2_A"][-1]),
        "final_p2_A": float(series["p2_A"][-1]),
        "master_seed": config.master_seed,
        "n_realizations": config.n_realizations,
        "timeseries": ts_path.name,
        "config": config.to_dict(),
    }
    if extra_summary:
        summary.update(extra_summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def run_optimization(config: ExperimentConfig) -> tuple[dict, OptimizationState]:
    """Optimize the drive, write pulse and convergence report, then evaluate.

    The optimizer's frozen ensemble uses ``config.master_seed``. The
    evaluation run propagates ``config.n_realizations`` realizations from
    the same seed.
    """
    if config.pulse.kind is not PulseKind.OPTIMIZED:
        raise ConfigError("run_optimization needs pulse.kind = optimized")
    out = Path(config.output_path)
    out.mkdir(parents=True, exist_ok=True)
    kcfg = dataclasses.replace(config.krotov(), master_seed=config.master_seed)
    guess = build_pulse(config.pulse.initial_guess, config.system)

    def report(state):
        log.info("iteration %d: objective %.8g", state.iterations,
                 state.objective_history[-1])

    state = optimize(guess, config.system, config.noise_spectrum(), kcfg,
                     callback=report)
    pulse_path = save_pulse(state.pulse, out / "pulse.txt")
    hist = state.objective_history
    conv = {
        "iteration": np.arange(len(hist)),
        "objective": hist,
        "gradient_norm": [np.nan] + list(state.gradient_norm_history),
        "step_scale": [np.nan] + list(state.step_scale_history),
    }
    conv_path = _write_table(out / "convergence", CONVERGENCE_COLUMNS, conv,
                             config.output_format)
    extra = {
        "optimization": {
            "iterations": state.iterations,
            "initial_objective": hist[0],
            "final_objective": hist[-1],
            "rejected_steps": state.rejected_steps,
            "stop_reason": state.stop_reason,
            "n_realizations": kcfg.n_realizations,
            "pulse_file": pulse_path.name,
            "convergence": conv_path.name,
        }
    }
    summary = run_experiment(config, state.pulse, extra)
    return summary, state


# -- validation battery -----------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def rk4_error_ratio(dt: float = 0.1, t_final: float = 20.0,
                    gamma: float = 0.1, amplitude: float = 0.5) -> float:
    """Ratio of global errors at ``dt`` and ``dt/2`` (reference ``dt/8``).

    Damped shared-bath system driven by ``amplitude * sin 2t`` plus a
    deterministic force, both defined as piecewise-linear functions on the
    coarse grid so that refinement does not change the problem.
    """
    coarse = SystemConfig(gamma=gamma, t_final=t_final, dt=dt)
    pulse = named_pulse(PulseKind.SIN_TWO_OMEGA, coarse, amplitude)
    force = ControlPulse(0.3 * np.cos(1.3 * coarse.times()), dt)
    x0 = vacuum_state()
    x0[[0, 2]] = 1.0, -0.5

    def final(factor):
        cfg = dataclasses.replace(coarse, dt=dt / factor)
        p = resample(pulse, cfg.dt)
        xi = resample(force, cfg.dt).values
        x = x0
        for x in march(x0, step_maps(p, cfg), xi[:, None]):
            pass
        return x

    ref = final(8)
    e1 = np.max(np.abs(final(1) - ref))
    e2 = np.max(np.abs(final(2) - ref))
    return float(e1 / e2)


def averaged_periodogram(cfg: NoiseSpectrumConfig, n_steps: int, dt: float,
                         n_realizations: int, master_seed: int,
                         nperseg: int = 4096):
    """Welch estimate of the two-sided spectrum, averaged over realizations.

    Returns ``(omega, S_hat)`` on the non-negative angular-frequency grid.
    """
    from scipy.signal import welch

    acc = None
    block = 50
    for lo in range(0, n_realizations, block):
        idx = range(lo, min(lo + block, n_realizations))
        xi = generate_ensemble(cfg, n_steps, dt, master_seed, idx)[:, :, 0]
        f, p = welch(xi, fs=1.0 / dt, nperseg=nperseg, axis=0, detrend=False,
                     scaling="density", return_onesided=True)
        s = p.sum(axis=1)
        acc = s if acc is None else acc + s
    # one-sided density per Hz -> two-sided S(omega)
    return 2.0 * np.pi * f, 0.5 * acc / n_realizations


def validate_suite() -> list[CheckResult]:
    """Fast invariant battery; each check takes seconds."""
    results = []

    ratio = rk4_error_ratio()
    results.append(CheckResult("rk4_order", abs(ratio - 16.0) <= 0.2 * 16.0,
                               f"error ratio {ratio:.3f} (want 16 +- 20%)"))

    rep = log_negativity(np.diag([0.5] * 4))
    ok = abs(rep.nu_minus - 1.0) <= 1e-12 and rep.E_N == 0.0
    results.append(CheckResult("vacuum_negativity", ok, f"nu_minus = {rep.nu_minus!r}"))

    ncfg = NoiseSpectrumConfig(gamma=0.1, temperature=1.0)
    omega, s_hat = averaged_periodogram(ncfg, 2 ** 15, 0.01, 40, master_seed=1,
                                        nperseg=1024)
    band = (omega >= 0.5) & (omega <= 10.0)
    dev = np.max(np.abs(s_hat[band] / target_spectrum(omega[band], ncfg) - 1.0))
    results.append(CheckResult("noise_spectrum", dev < 0.15,
                               f"max relative deviation {dev:.3f} in [0.5, 10] (want < 0.15)"))

    sys_cfg = SystemConfig(gamma=0.1, temperature=1.0, t_final=5.0, dt=1e-3)
    kcfg = KrotovConfig(n_realizations=16, master_seed=3)
    pulse = named_pulse(PulseKind.SIN_TWO_OMEGA, sys_cfg, 0.3)
    nodes = np.linspace(200, sys_cfg.n_steps - 200, 4).astype(int)
    err = gradient_check(pulse, sys_cfg, ncfg, kcfg, nodes)
    results.append(CheckResult("adjoint_gradient", err < 1e-3,
                               f"max relative error {err:.2e} (want < 1e-3)"))
    return results
