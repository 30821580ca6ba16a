"""Compensated (Neumaier) summation used for long-horizon accumulators.

The scalar ``neumaier_add`` is written as plain Python so the exact same
arithmetic can be compiled by numba for the simulation kernel.
"""

import numba
import numpy as np


def neumaier_add(s, c, x):
    """Add ``x`` to the running pair ``(s, c)`` and return the new pair.

    ``s + c`` is the compensated total; ``c`` collects the low-order bits
    lost when forming ``s``.
    """
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


_neumaier_add_jit = numba.njit(inline="always")(neumaier_add)


class CompensatedSum:
    """Running sum with Neumaier compensation."""

    __slots__ = ("_s", "_c")

    def __init__(self, start=0.0):
        self._s = float(start)
        self._c = 0.0

    def add(self, x):
        self._s, self._c = neumaier_add(self._s, self._c, float(x))
        return self

    @property
    def value(self):
        return self._s + self._c

    def __float__(self):
        return self.value

    def __repr__(self):
        return f"CompensatedSum({self.value!r})"


@numba.njit(cache=True)
def _cumsum_kernel(terms, s, c, out):
    for i in range(terms.shape[0]):
        s, c = _neumaier_add_jit(s, c, terms[i])
        out[i] = s + c
    return s, c


def compensated_cumsum(terms, s=0.0, c=0.0):
    """Compensated cumulative sum of ``terms`` continuing from ``(s, c)``.

    Returns ``(partial_sums, (s, c))`` so callers can chain chunks.
    """
    terms = np.ascontiguousarray(terms, dtype=np.float64)
    out = np.empty_like(terms)
    s, c = _cumsum_kernel(terms, float(s), float(c), out)
    return out, (s, c)
