import numpy as np


def two_sum(u, v):
    """Error-free transformation: u + v == s + t exactly (elementwise)."""
    s = u + v
    up = s - v
    vpp = s - up
    up = up - u
    vpp = vpp - v
    return s, -(up + vpp)


class CompensatedAccumulator:
    """Running elementwise sum of equally shaped arrays with a carried error term.

    Same role as math.fsum but incremental and vectorized, so the ensemble
    can fold in one weighted trajectory at a time in a fixed order.
    """

    def __init__(self, shape):
        self._s = np.zeros(shape, dtype=float)
        self._t = np.zeros(shape, dtype=float)

    def add(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != self._s.shape:
            raise ValueError(f"Expected shape {self._s.shape}, got {values.shape}")
        y, u = two_sum(values, self._t)
        self._s, self._t = two_sum(y, self._s)
        self._t = self._t + u

    def total(self):
        return self._s + self._t
