"""Time schedule of the noising interpolant x_t = alpha(t) x + sigma(t) eps.

Only the linear interpolant is implemented: alpha = 1 - t, sigma = t on
t in [0, 1], so data sits at t = 0 and pure noise at t = 1. Derivatives
are supplied in closed form; tests cross-check them against finite
differences.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError


class TimeSchedule:
    """Interpolant coefficients alpha, sigma and their time derivatives."""

    kind = "linear-interpolant"

    def alpha(self, t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    def sigma(self, t):
        return np.asarray(t, dtype=np.float64) + 0.0

    def dalpha(self, t):
        return np.full_like(np.asarray(t, dtype=np.float64), -1.0)

    def dsigma(self, t):
        return np.full_like(np.asarray(t, dtype=np.float64), 1.0)


def linear_schedule() -> TimeSchedule:
    return TimeSchedule()


def check_time_in_unit_interval(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise PreconditionError(
            f"timesteps must lie in [0, 1], got range [{t.min()}, {t.max()}]"
        )
    return t
