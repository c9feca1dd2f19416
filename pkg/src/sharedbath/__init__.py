"""Dissipation-assisted entanglement of two locally driven oscillators.

Gaussian cumulant dynamics of two harmonic modes coupled to a shared (or
independent) Ohmic bath, ensemble noise synthesis, logarithmic negativity,
and Krotov optimization of a parametric drive.
"""
__version__ = "0.1.0"

from .dynamics import (ControlPulse, NonFiniteStateError, SystemConfig,
                       Topology, build_generator, costate_propagators,
                       drive_matrix, generator_derivative, propagate_costate_backward,
                       propagate_forward, step_maps, thermal_state, vacuum_state)
from .noise import (CutoffAboveNyquist, NoiseMode, NoiseRealization,
                    NoiseSpectrumConfig, estimate_autocorrelation,
                    generate_ensemble, generate_realization, target_spectrum)
from .observables import (EntanglementReport, UnphysicalCovariance,
                          assemble_covariance, log_negativity, mode_energies,
                          neg_log_nu, normal_mode_variances)
from .ensemble import EnsembleResult, propagate_ensemble, propagate_pulses
from .control import (KrotovConfig, OptimizationState, costate_boundary,
                      gradient_check, krotov_update, objective, optimize)
from .pulses import PulseKind, load_pulse, named_pulse, save_pulse
