"""Map between unconstrained parameters and admissible coefficients in (0, 1/2)."""
from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .errors import InverseOutOfRange


def logit_c(theta):
    """Return ``(C, dC/dtheta)`` with ``C = expit(theta) / 2``."""
    s = expit(np.asarray(theta, dtype=float))
    return 0.5 * s, 0.5 * s * (1.0 - s)


def logit_c_inverse(c):
    c = np.asarray(c, dtype=float)
    if not (np.all(c > 0.0) and np.all(c < 0.5)):
        raise InverseOutOfRange("coefficients must lie strictly inside (0, 1/2)")
    return logit(2.0 * c)
