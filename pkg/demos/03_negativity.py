"""
Logarithmic negativity of a Gaussian state
==========================================

For two modes the negativity depends on the covariance matrix only,
through the smaller symplectic eigenvalue of its partial transpose.
Vacuum has nu_- = 1/2 in these units; the package reports it relative
to vacuum, so E_N = max(0, -ln nu_-) with nu_- = 1 at the boundary.
"""

# %%
# Two-mode squeezed vacuum
# ------------------------

import numpy as np

from sharedbath import log_negativity

z = np.diag([1.0, -1.0])
for r in (0.0, 0.25, 0.5, 1.0):
    c, s = np.cosh(2 * r), np.sinh(2 * r)
    sigma = 0.5 * np.block([[c * np.eye(2), s * z], [s * z, c * np.eye(2)]])
    rep = log_negativity(sigma)
    print(f"r={r:.2f}  E_N={rep.E_N:.4f}  (2r={2 * r:.2f})  nu_-={rep.nu_minus:.4f}")

# %%
# Thermal noise destroys it
# -------------------------
#
# Adding an equal thermal occupation to both modes pushes nu_- back up.

c, s = np.cosh(1.0), np.sinh(1.0)
tmsv = 0.5 * np.block([[c * np.eye(2), s * z], [s * z, c * np.eye(2)]])
for n in (0.0, 0.1, 0.3, 0.6):
    print(f"added occupation {n:.1f}:  E_N = {log_negativity(tmsv + n * np.eye(4)).E_N:.4f}")
