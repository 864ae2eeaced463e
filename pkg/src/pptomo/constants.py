"""Unit conventions shared across the package.

Energies and frequencies are carried in cm^-1 and times in fs. Internally
hbar = 1 in angular-frequency units, so an energy E [cm^-1] evolves with
angular frequency ``E * CM_TO_RAD_FS`` [rad/fs].
"""

import os

# 2*pi*c with c in cm/fs
CM_TO_RAD_FS = 1.8836516e-4

# Boltzmann constant in cm^-1 / K
K_B_CM = 0.69503476

# smallest regularization weight any selector may return
LAMBDA_FLOOR = 5e-11


def numba_enabled():
    """Whether the compiled kernels should be used.

    Set ``PPTOMO_DISABLE_NUMBA=1`` to force the pure-numpy path.
    """
    flag = os.environ.get("PPTOMO_DISABLE_NUMBA", "0").strip().lower()
    return flag not in ("1", "true", "yes", "on")


def default_threads():
    """Worker threads for independent per-frequency solves (``PPTOMO_THREADS``, default 1)."""
    try:
        return max(1, int(os.environ.get("PPTOMO_THREADS", "1")))
    except ValueError:
        return 1
