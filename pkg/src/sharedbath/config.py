"""Experiment configuration: a nested YAML mapping onto dataclasses."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .control import KrotovConfig
from .dynamics import SystemConfig, Topology
from .noise import NoiseMode, NoiseSpectrumConfig
from .pulses import PulseKind

__all__ = ["ConfigError", "PulseSpec", "NoiseSettings", "ExperimentConfig",
           "load_config", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSettings:
    """Bath-force settings; damping and temperature come from the system."""

    omega_cutoff: float = 50.0
    mode: NoiseMode = NoiseMode.QUANTUM_FDT

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode(self.mode))


@dataclass(frozen=True)
class PulseSpec:
    kind: PulseKind = PulseKind.SIN_TWO_OMEGA
    amplitude: float = 1.0
    path: str | None = None
    # only for kind == optimized
    optimizer: KrotovConfig | None = None
    initial_guess: "PulseSpec | None" = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PulseKind(self.kind))


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    pulse: PulseSpec = field(default_factory=PulseSpec)
    n_realizations: int = 4096
    master_seed: int = 0
    output_path: str = "out"
    output_format: str = "csv"
    workers: int = 1

    def __post_init__(self):
        if self.output_format not in ("csv", "json"):
            raise ConfigError(f"output_format must be csv or json, got {self.output_format!r}")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.pulse.kind is PulseKind.FILE:
            if not self.pulse.path or not Path(self.pulse.path).is_file():
                raise ConfigError(f"pulse file not found: {self.pulse.path!r}")
        if self.pulse.kind is PulseKind.OPTIMIZED:
            guess = self.pulse.initial_guess
            if guess is None or guess.kind is PulseKind.OPTIMIZED:
                raise ConfigError("optimized pulse needs a non-optimized initial_guess")

    def noise_spectrum(self) -> NoiseSpectrumConfig:
        return NoiseSpectrumConfig(self.system.gamma, self.system.temperature,
                                   self.noise.omega_cutoff, self.noise.mode)

    def krotov(self) -> KrotovConfig:
        return self.pulse.optimizer or KrotovConfig(master_seed=self.master_seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def conv(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, (Topology, NoiseMode, PulseKind)):
                return obj.value
            return obj
        return conv(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        try:
            system = _build(SystemConfig, data.pop("system", {}))
            noise = _build(NoiseSettings, data.pop("noise", {}))
            pulse = _pulse_from_dict(data.pop("pulse", {}))
            return _build(cls, data, system=system, noise=noise, pulse=pulse)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _build(klass, data, **extra):
    if not isinstance(data, dict):
        raise ConfigError(f"{klass.__name__}: expected a mapping, got {data!r}")
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{klass.__name__}: unknown keys {sorted(unknown)}")
    return klass(**data, **extra)


def _pulse_from_dict(data) -> PulseSpec:
    data = dict(data or {})
    opt = data.pop("optimizer", None)
    guess = data.pop("initial_guess", None)
    return _build(
        PulseSpec, data,
        optimizer=None if opt is None else _build(KrotovConfig, opt),
        initial_guess=None if guess is None else _pulse_from_dict(guess),
    )


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


DEFAULT_CONFIG = """\
# Shared Ohmic bath at T = hbar*omega/k_B, gamma/omega = 0.1
system:
  gamma: 0.1
  temperature: 1.0
  topology: shared          # shared | independent
  m1_cross_damping: false
  t_final: 20.0
  dt: 0.001
noise:
  omega_cutoff: 50.0
  mode: quantum_fdt         # quantum_fdt | classical_white
pulse:
  kind: sin_two_omega       # sin_omega | sin_squared_omega | sin_two_omega | file | optimized
  amplitude: 1.0
n_realizations: 4096
master_seed: 0
output_path: out
output_format: csv
workers: 1
"""
