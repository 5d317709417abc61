"""Wigner 6-j symbols by the Racah single-sum formula in exact integer arithmetic."""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt


def _twice(j) -> int:
    two_j = Fraction(j) * 2
    if two_j.denominator != 1 or two_j < 0:
        raise ValueError(f"{j!r} is not a non-negative integer or half-integer")
    return int(two_j)


def _triad(a: int, b: int, c: int) -> bool:
    # doubled arguments
    return abs(a - b) <= c <= a + b and (a + b + c) % 2 == 0


def _delta_sq(a: int, b: int, c: int) -> Fraction:
    return Fraction(
        factorial((a + b - c) // 2) * factorial((a - b + c) // 2) * factorial((-a + b + c) // 2),
        factorial((a + b + c) // 2 + 1),
    )


@lru_cache(maxsize=65536)
def _six_j_doubled(j1: int, j2: int, j3: int, j4: int, j5: int, j6: int) -> float:
    if not (_triad(j1, j2, j3) and _triad(j1, j5, j6) and _triad(j4, j2, j6) and _triad(j4, j5, j3)):
        return 0.0
    alphas = ((j1 + j2 + j3) // 2, (j1 + j5 + j6) // 2, (j4 + j2 + j6) // 2, (j4 + j5 + j3) // 2)
    betas = ((j1 + j2 + j4 + j5) // 2, (j2 + j3 + j5 + j6) // 2, (j3 + j1 + j6 + j4) // 2)
    total = Fraction(0)
    for t in range(max(alphas), min(betas) + 1):
        denom = 1
        for a in alphas:
            denom *= factorial(t - a)
        for b in betas:
            denom *= factorial(b - t)
        term = Fraction(factorial(t + 1), denom)
        total += -term if t % 2 else term
    if total == 0:
        return 0.0
    prefactor_sq = _delta_sq(j1, j2, j3) * _delta_sq(j1, j5, j6) * _delta_sq(j4, j2, j6) * _delta_sq(j4, j5, j3)
    # total * sqrt(prefactor_sq), rounded once
    magnitude = sqrt(float(total * total * prefactor_sq))
    return magnitude if total > 0 else -magnitude


def wigner_6j(j1, j2, j3, j4, j5, j6) -> float:
    """``{j1 j2 j3; j4 j5 j6}``; zero when a triad violates the triangle rule."""
    return _six_j_doubled(*(_twice(j) for j in (j1, j2, j3, j4, j5, j6)))
