"""
Which drives entangle through the bath
======================================

Three periodic drives on the same frozen noise ensemble. Only the
parametric drive at twice the mode frequency pushes -ln nu_- above zero,
and it does so by heating the modes strongly. The ensemble here is
smaller than a production run so the demo finishes in under a minute.
"""

# %%

from sharedbath import NoiseSpectrumConfig, SystemConfig, named_pulse, propagate_pulses
from sharedbath.observables import neg_log_nu

sys_cfg = SystemConfig(gamma=0.1, temperature=1.0, t_final=20.0, dt=0.005)
noise = NoiseSpectrumConfig(gamma=0.1, temperature=1.0)
kinds = ("sin_omega", "sin_squared_omega", "sin_two_omega")
pulses = [named_pulse(k, sys_cfg, 1.0) for k in kinds]

results = propagate_pulses(pulses, sys_cfg, noise, 512, master_seed=0)
for kind, res in zip(kinds, results):
    nl = neg_log_nu(res.covariances())
    mom = res.second_moments()
    energy = sum(mom[k] for k in ("q2_A", "p2_A", "q2_B", "p2_B"))
    print(f"{kind:18s}  -ln nu_-(t_f) = {nl[-1]:+.3f}   max = {nl.max():+.3f}"
          f"   energy {energy[0]:.2f} -> {energy[-1]:.3g}")
