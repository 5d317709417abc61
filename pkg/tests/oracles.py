"""Reference implementations used to derive expected values.

These are deliberately built along different routes from the package code:
6-j symbols from the Racah sum on plain (non-doubled) fractions, Stevens
operators as fully symmetrized harmonic polynomials in Jx, Jy, Jz, and the
T_d group as the signed permutations preserving a tetrahedron.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import factorial, isqrt

import numpy as np

# --------------------------------------------------------------------------- #
# 6-j symbols
# --------------------------------------------------------------------------- #


def _tri(a: Fraction, b: Fraction, c: Fraction) -> bool:
    s = a + b + c
    return abs(a - b) <= c <= a + b and s.denominator == 1


def _delta(a, b, c) -> Fraction:
    return Fraction(
        factorial(int(a + b - c)) * factorial(int(a - b + c)) * factorial(int(-a + b + c)),
        factorial(int(a + b + c + 1)),
    )


def racah_6j(j1, j2, j3, j4, j5, j6) -> float:
    j1, j2, j3, j4, j5, j6 = (Fraction(x) for x in (j1, j2, j3, j4, j5, j6))
    if not (_tri(j1, j2, j3) and _tri(j1, j5, j6) and _tri(j4, j2, j6) and _tri(j4, j5, j3)):
        return 0.0
    a = [j1 + j2 + j3, j1 + j5 + j6, j4 + j2 + j6, j4 + j5 + j3]
    b = [j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4]
    s = Fraction(0)
    for z in range(int(max(a)), int(min(b)) + 1):
        d = 1
        for x in a:
            d *= factorial(z - int(x))
        for x in b:
            d *= factorial(int(x) - z)
        s += Fraction((-1) ** z * factorial(z + 1), d)
    if s == 0:
        return 0.0
    pref = _delta(j1, j2, j3) * _delta(j1, j5, j6) * _delta(j4, j2, j6) * _delta(j4, j5, j3)
    sq = s * s * pref
    # exact square root where possible, float otherwise
    num, den = sq.numerator, sq.denominator
    rn, rd = isqrt(num), isqrt(den)
    value = float(Fraction(rn, rd)) if rn * rn == num and rd * rd == den else float(sq) ** 0.5
    return value if s > 0 else -value


# --------------------------------------------------------------------------- #
# Angular momentum and Stevens operators
# --------------------------------------------------------------------------- #


def spin_matrices(J: float):
    dim = int(round(2 * J)) + 1
    m = J - np.arange(dim)
    jp = np.diag(np.sqrt(J * (J + 1) - m[1:] * (m[1:] + 1)), 1)
    jx = (jp + jp.T) / 2
    jy = (jp - jp.T) / 2j
    jz = np.diag(m)
    return jx.astype(complex), jy, jz.astype(complex)


def _poly_mul(p, q):
    out = {}
    for (a1, b1, c1), u in p.items():
        for (a2, b2, c2), v in q.items():
            key = (a1 + a2, b1 + b2, c1 + c2)
            out[key] = out.get(key, 0) + u * v
    return {k: v for k, v in out.items() if v}


def _poly_add(*terms):
    out = {}
    for coef, p in terms:
        for k, v in p.items():
            out[k] = out.get(k, 0) + coef * v
    return {k: v for k, v in out.items() if v}


X, Y, Z = {(1, 0, 0): 1}, {(0, 1, 0): 1}, {(0, 0, 1): 1}
ONE = {(0, 0, 0): 1}


def _pow(p, n):
    out = ONE
    for _ in range(n):
        out = _poly_mul(out, p)
    return out


R2 = _poly_add((1, _pow(X, 2)), (1, _pow(Y, 2)), (1, _pow(Z, 2)))
X2mY2 = _poly_add((1, _pow(X, 2)), (-1, _pow(Y, 2)))
X4 = _poly_add((1, _pow(X, 4)), (-6, _poly_mul(_pow(X, 2), _pow(Y, 2))), (1, _pow(Y, 4)))

HARMONIC = {
    (2, 0): _poly_add((3, _pow(Z, 2)), (-1, R2)),
    (2, 2): X2mY2,
    (4, 0): _poly_add((35, _pow(Z, 4)), (-30, _poly_mul(R2, _pow(Z, 2))), (3, _pow(R2, 2))),
    (4, 2): _poly_mul(_poly_add((7, _pow(Z, 2)), (-1, R2)), X2mY2),
    (4, 4): X4,
    (6, 0): _poly_add((231, _pow(Z, 6)), (-315, _poly_mul(_pow(Z, 4), R2)),
                      (105, _poly_mul(_pow(Z, 2), _pow(R2, 2))), (-5, _pow(R2, 3))),
    (6, 2): _poly_mul(_poly_add((33, _pow(Z, 4)), (-18, _poly_mul(_pow(Z, 2), R2)), (1, _pow(R2, 2))), X2mY2),
    (6, 4): _poly_mul(_poly_add((11, _pow(Z, 2)), (-1, R2)), X4),
    (6, 6): _poly_add((1, _pow(X, 6)), (-15, _poly_mul(_pow(X, 4), _pow(Y, 2))),
                      (15, _poly_mul(_pow(X, 2), _pow(Y, 4))), (-1, _pow(Y, 6))),
}


def stevens_symmetrized(l: int, m: int, J: float) -> np.ndarray:
    """Operator equivalent of the harmonic polynomial by full symmetrization."""
    mats = spin_matrices(J)
    dim = mats[0].shape[0]
    total = np.zeros((dim, dim), complex)
    for (a, b, c), coef in HARMONIC[(l, m)].items():
        word = [0] * a + [1] * b + [2] * c
        perms = set(itertools.permutations(word))
        acc = np.zeros((dim, dim), complex)
        for p in perms:
            prod = np.eye(dim, dtype=complex)
            for k in p:
                prod = prod @ mats[k]
            acc += prod
        total += coef * acc / len(perms)
    assert np.allclose(total.imag, 0, atol=1e-8)
    return total.real


def cf_levels_oracle(coeffs: dict, J: float) -> np.ndarray:
    h = sum(v * stevens_symmetrized(l, m, J) for (l, m), v in coeffs.items())
    w = np.linalg.eigvalsh(h)
    return w[::2] - w[0]


# --------------------------------------------------------------------------- #
# Point groups
# --------------------------------------------------------------------------- #

_TETRAHEDRON = {(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)}


def td_group() -> list[np.ndarray]:
    """The 24 signed permutation matrices mapping a tetrahedron onto itself."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for i, (j, s) in enumerate(zip(perm, signs)):
                m[i, j] = s
            if {tuple(int(v) for v in m @ np.array(t)) for t in _TETRAHEDRON} == _TETRAHEDRON:
                out.append(m)
    return out


def distinct_tensors(g: np.ndarray, ops, rtol: float = 1e-9) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    scale = np.abs(g).max()
    for p in ops:
        t = p.T @ g @ p
        if not any(np.abs(t - u).max() <= rtol * scale for u in out):
            out.append(t)
    return out
