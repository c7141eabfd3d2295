"""Sobol low-discrepancy sequence in Gray-code order.

Direction numbers are the Joe and Kuo set (primitive polynomial degree,
coefficient word, initial odd integers) for dimensions 2..16; dimension 1
is the van der Corput sequence in base 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BITS = 32

# (degree s, polynomial coefficients a, initial m_1..m_s) for dimensions 2..16
_JOE_KUO = [
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
    (5, 11, (1, 1, 5, 1, 1)),
    (5, 13, (1, 1, 1, 3, 11)),
    (5, 14, (1, 3, 5, 5, 31)),
    (6, 1, (1, 3, 3, 9, 7, 49)),
    (6, 13, (1, 1, 1, 15, 21, 21)),
    (6, 16, (1, 3, 1, 13, 27, 49)),
]
MAX_DIM = len(_JOE_KUO) + 1


class DimensionUnsupported(ValueError):
    pass


def direction_numbers(dim: int) -> np.ndarray:
    """Integer direction numbers ``v[j, k]`` scaled by ``2**BITS``, shape (dim, BITS)."""
    if not 1 <= dim <= MAX_DIM:
        raise DimensionUnsupported(f"Sobol dimension {dim} not in 1..{MAX_DIM}")
    v = np.zeros((dim, BITS), dtype=np.uint64)
    for k in range(BITS):
        v[0, k] = 1 << (BITS - 1 - k)
    for j in range(1, dim):
        s, a, m_init = _JOE_KUO[j - 1]
        m = list(m_init)
        for k in range(s, BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(BITS):
            v[j, k] = m[k] << (BITS - 1 - k)
    return v


@dataclass
class SobolState:
    """Generator position. ``index`` is the ordinal of the next point emitted.

    An optional ``shift`` (one integer per dimension) applies a digital XOR
    shift, which keeps the net structure of the sequence.
    """

    dim: int
    index: int = 1
    directions: np.ndarray = field(default=None, repr=False)
    current: np.ndarray = field(default=None, repr=False)
    shift: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.directions is None:
            self.directions = direction_numbers(self.dim)
        if self.current is None:
            self.current = np.zeros(self.dim, dtype=np.uint64)
            target, self.index = self.index, 1
            while self.index < target:
                _advance(self)

    @classmethod
    def shifted(cls, dim: int, seed: int) -> "SobolState":
        rng = np.random.default_rng(seed)
        shift = rng.integers(0, 1 << BITS, size=dim, dtype=np.uint64)
        return cls(dim, shift=shift)


def _advance(state: SobolState) -> None:
    n = state.index - 1
    c = 0
    while n & 1:
        n >>= 1
        c += 1
    if c >= BITS:
        raise OverflowError("Sobol sequence exhausted")
    state.current = state.current ^ state.directions[:, c]
    state.index += 1


def sobol_next(state: SobolState) -> np.ndarray:
    """Next point in ``[0, 1)**dim``; the all-zero first point is never emitted."""
    _advance(state)
    x = state.current if state.shift is None else state.current ^ state.shift
    return x.astype(np.float64) / float(1 << BITS)


def sobol_points(dim: int, n: int) -> np.ndarray:
    state = SobolState(dim)
    return np.array([sobol_next(state) for _ in range(n)])
