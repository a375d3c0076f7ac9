"""Exact law of the distance to the origin for simple random walk on a free group.

Under the uniform measure on the ``2r`` generators and inverses, with
holding probability ``h``, the word length is a birth-death chain on the
nonnegative integers: from 0 it moves up with probability ``1 - h``; above
0 it moves up with probability ``(1 - h)(2r - 1)/(2r)`` and down with
``(1 - h)/(2r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np
from scipy.special import ndtr

from .errors import UsageError


@dataclass(frozen=True)
class DistanceChain:
    rank: int = 2
    laziness: float | Fraction = 0

    def __post_init__(self):
        if self.rank < 1:
            raise UsageError("rank must be positive")
        if not 0 <= self.laziness < 1:
            raise UsageError("laziness must lie in [0, 1)")

    def _steps(self, exact: bool):
        h = Fraction(self.laziness) if exact else float(self.laziness)
        move = 1 - h
        up = move * Fraction(2 * self.rank - 1, 2 * self.rank) if exact else move * (2 * self.rank - 1) / (2 * self.rank)
        return h, move, up, move - up

    @property
    def drift(self) -> float:
        """Escape rate ``(1 - h)(r - 1)/r``."""
        _, _, up, down = self._steps(False)
        return up - down

    @property
    def variance(self) -> float:
        """Asymptotic variance per step of the length away from the origin."""
        _, move, up, down = self._steps(False)
        return move - (up - down) ** 2

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    def laws(self, n_max: int) -> Iterator[np.ndarray]:
        """Distributions ``p_0, p_1, ..., p_{n_max}`` of the length as float arrays."""
        h, move, up, down = self._steps(False)
        p = np.zeros(n_max + 2)
        p[0] = 1.0
        yield p[:1].copy()
        for n in range(1, n_max + 1):
            q = h * p
            q[1] += move * p[0]
            q[2:n + 1] += up * p[1:n]
            q[0:n - 1] += down * p[1:n]
            p = q
            yield p[:n + 1].copy()

    def law(self, n: int) -> np.ndarray:
        for p in self.laws(n):
            pass
        return p

    def exact_law(self, n: int) -> list[Fraction]:
        """Rational distribution at step ``n``."""
        h, move, up, down = self._steps(True)
        p = [Fraction(1)]
        for m in range(1, n + 1):
            q = [Fraction(0)] * (m + 1)
            for k, x in enumerate(p):
                if not x:
                    continue
                q[k] += h * x
                if k == 0:
                    q[1] += move * x
                else:
                    q[k + 1] += up * x
                    q[k - 1] += down * x
            p = q
        return p

    def lower_tail(self, n: int, L: float, law: np.ndarray | None = None) -> float:
        """``P(d(o, w_n o) <= L n)``."""
        p = self.law(n) if law is None else law
        return float(p[:math.floor(L * n + 1e-12) + 1].sum())

    def lower_tails(self, n_list, L: float) -> dict[int, float]:
        want = set(n_list)
        out = {}
        for n, p in enumerate(self.laws(max(want))):
            if n in want:
                out[n] = self.lower_tail(n, L, p)
        return out

    def mean(self, n: int) -> float:
        p = self.law(n)
        return float(np.arange(len(p)) @ p)

    def kolmogorov_distance(self, n: int, law: np.ndarray | None = None, sigma: float | None = None,
                            drift: float | None = None) -> float:
        """``sup_x |F_n(x) - N(x)|`` for ``(d - n drift)/(sigma sqrt n)`` against the standard normal."""
        p = self.law(n) if law is None else law
        return lattice_kolmogorov(p, n * (self.drift if drift is None else drift),
                                  (self.sigma if sigma is None else sigma) * math.sqrt(n))

    def kolmogorov_curve(self, n_list) -> dict[int, float]:
        want = set(n_list)
        out = {}
        for n, p in enumerate(self.laws(max(want))):
            if n in want:
                out[n] = self.kolmogorov_distance(n, p)
        return out


def lattice_kolmogorov(p: np.ndarray, center: float, scale: float) -> float:
    """Sup-distance between a law on ``0..len(p)-1`` (shifted and scaled) and the standard normal."""
    if scale <= 0:
        raise UsageError("scale must be positive")
    support = np.flatnonzero(p > 0)
    x = (support - center) / scale
    cdf = np.cumsum(p)[support]
    below = cdf - p[support]
    phi = ndtr(x)
    # between atoms the gap is largest at the atoms themselves, from either side
    return float(max(np.max(np.abs(cdf - phi)), np.max(np.abs(below - phi))))
