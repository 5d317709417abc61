"""Crystal-field Hamiltonians of a single J-multiplet in Stevens operator equivalents.

Conventions
-----------
* Basis ``|J, m>`` ordered ``m = J, J-1, ..., -J``.
* Stevens operators ``O_l^m`` (cosine type, ``m >= 0``) in the usual
  normalization where ``O_2^0 = 3 Jz^2 - J(J+1)`` and ``O_l^l = (J+^l + J-^l)/2``.
  Operator-equivalent factors are absorbed into the coefficients ``B_l^m``.
* ``z'`` is the two-fold axis [001] of a C2v site, ``x'`` and ``y'`` lie along
  the face diagonals.
* Energies in GHz, fields in tesla.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, NamedTuple

import numpy as np

from .spin_model import MU_B_OVER_H
from .wigner import wigner_6j

C2V_KEYS: tuple[tuple[int, int], ...] = (
    (2, 0), (2, 2), (4, 0), (4, 2), (4, 4), (6, 0), (6, 2), (6, 4), (6, 6),
)


class DegeneracyError(RuntimeError):
    """Eigenvalues expected in Kramers pairs are not pairwise degenerate."""


class VanishingOperatorWarning(UserWarning):
    """A Stevens operator of rank ``l > 2J`` is identically zero."""


def _half_integer(x) -> Fraction:
    f = Fraction(x).limit_denominator(2)
    if f * 2 != int(f * 2) or abs(float(f) - float(x)) > 1e-12:
        raise ValueError(f"{x!r} is not an integer or half-integer")
    return f


@dataclass(frozen=True)
class Multiplet:
    L: int
    S: Fraction
    J: Fraction
    lande_g: Fraction = None

    def __post_init__(self):
        S, J = _half_integer(self.S), _half_integer(self.J)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "J", J)
        if not abs(self.L - S) <= J <= self.L + S:
            raise ValueError(f"J={J} is not reachable from L={self.L}, S={S}")
        if self.lande_g is None:
            jj, ss, ll = J * (J + 1), S * (S + 1), Fraction(self.L * (self.L + 1))
            object.__setattr__(self, "lande_g", 1 + (jj + ss - ll) / (2 * jj))

    @property
    def dim(self) -> int:
        return int(2 * self.J + 1)

    @property
    def is_kramers(self) -> bool:
        return self.dim % 2 == 0


ER_4I15_2 = Multiplet(6, Fraction(3, 2), Fraction(15, 2))
ER_4I13_2 = Multiplet(6, Fraction(3, 2), Fraction(13, 2))


class StevensCoefficients(Mapping):
    """The nine C2v crystal-field parameters ``B_l^m`` in GHz."""

    def __init__(self, values: Mapping[tuple[int, int], float] | None = None, **named: float):
        vals = {k: 0.0 for k in C2V_KEYS}
        for key, v in dict(values or {}).items():
            key = (int(key[0]), int(key[1]))
            if key not in vals:
                raise KeyError(f"B_{key[0]}^{key[1]} is not a C2v parameter")
            vals[key] = float(v)
        for name, v in named.items():  # B20=..., B66=...
            key = (int(name[1]), int(name[2:]))
            if key not in vals:
                raise KeyError(f"{name} is not a C2v parameter")
            vals[key] = float(v)
        if not all(math.isfinite(v) for v in vals.values()):
            raise ValueError("crystal-field parameters must be finite")
        self._values = vals

    def __getitem__(self, key):
        return self._values[tuple(key)]

    def __iter__(self):
        return iter(C2V_KEYS)

    def __len__(self):
        return len(C2V_KEYS)

    def __repr__(self):
        inner = ", ".join(f"B{l}{m}={v:.6g}" for (l, m), v in self._values.items())
        return f"StevensCoefficients({inner})"

    def as_vector(self) -> np.ndarray:
        return np.array([self._values[k] for k in C2V_KEYS])

    @classmethod
    def from_vector(cls, x) -> "StevensCoefficients":
        return cls(dict(zip(C2V_KEYS, np.asarray(x, dtype=float))))

    def to_dict(self) -> dict:
        return {"B": [{"l": l, "m": m, "value_ghz": v} for (l, m), v in self._values.items()]}

    @classmethod
    def from_dict(cls, data: dict) -> "StevensCoefficients":
        return cls({(int(e["l"]), int(e["m"])): float(e["value_ghz"]) for e in data["B"]})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StevensCoefficients":
        return cls.from_dict(json.loads(text))


class AngularMomentumSet(NamedTuple):
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray


@lru_cache(maxsize=None)
def _ladder(two_j: int) -> tuple[np.ndarray, np.ndarray]:
    j = two_j / 2
    m = j - np.arange(two_j + 1)
    jz = np.diag(m)
    jplus = np.zeros((two_j + 1, two_j + 1))
    for i in range(1, two_j + 1):
        jplus[i - 1, i] = math.sqrt(j * (j + 1) - m[i] * (m[i] + 1))
    jz.setflags(write=False)
    jplus.setflags(write=False)
    return jz, jplus


def angular_momentum_matrices(J) -> AngularMomentumSet:
    two_j = int(_half_integer(J) * 2)
    if two_j < 1:
        raise ValueError("J must be at least 1/2")
    jz, jp = _ladder(two_j)
    jm = jp.T
    return AngularMomentumSet((jp + jm) / 2 + 0j, (jp - jm) / 2j, jz + 0j)


def _anticommutator_quarter(poly: np.ndarray, ladder: np.ndarray) -> np.ndarray:
    return 0.25 * (poly @ ladder + ladder @ poly)


@lru_cache(maxsize=None)
def _stevens(l: int, m: int, two_j: int) -> np.ndarray:
    j = two_j / 2
    x = j * (j + 1)
    jz, jp = _ladder(two_j)
    jm = jp.T
    eye = np.eye(two_j + 1)
    z = np.diag(jz)

    def pz(*coeffs):  # polynomial in Jz, highest power first
        return np.diag(np.polyval(coeffs, z))

    def lad(k):
        return np.linalg.matrix_power(jp, k) + np.linalg.matrix_power(jm, k)

    if l == 2:
        ops = {
            0: pz(3, 0, -x),
            1: _anticommutator_quarter(jz, lad(1)),
            2: 0.5 * lad(2),
        }
    elif l == 4:
        ops = {
            0: pz(35, 0, -(30 * x - 25), 0, 3 * x * x - 6 * x),
            1: _anticommutator_quarter(pz(7, 0, -(3 * x + 1), 0), lad(1)),
            2: _anticommutator_quarter(pz(7, 0, -x - 5), lad(2)),
            3: _anticommutator_quarter(jz, lad(3)),
            4: 0.5 * lad(4),
        }
    elif l == 6:
        ops = {
            0: pz(231, 0, -(315 * x - 735), 0, 105 * x * x - 525 * x + 294, 0, -5 * x**3 + 40 * x * x - 60 * x),
            1: _anticommutator_quarter(pz(33, 0, -(30 * x - 15), 0, 5 * x * x - 10 * x + 12, 0), lad(1)),
            2: _anticommutator_quarter(pz(33, 0, -(18 * x + 123), 0, x * x + 10 * x + 102), lad(2)),
            3: _anticommutator_quarter(pz(11, 0, -(3 * x + 59), 0), lad(3)),
            4: _anticommutator_quarter(pz(11, 0, -x - 38), lad(4)),
            5: _anticommutator_quarter(jz, lad(5)),
            6: 0.5 * lad(6),
        }
    else:
        raise ValueError(f"Stevens operators implemented for l in (2, 4, 6), got {l}")
    op = np.asarray(ops[m], dtype=float) if l <= two_j else np.zeros_like(eye)
    op.setflags(write=False)
    return op


def stevens_operator(l: int, m: int, J) -> np.ndarray:
    """Real symmetric Stevens operator ``O_l^m(J)``; zero (with a warning) when ``l > 2J``."""
    two_j = int(_half_integer(J) * 2)
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    if l > two_j:
        warnings.warn(f"O_{l}^{m} vanishes identically for J={J}", VanishingOperatorWarning, stacklevel=2)
    return _stevens(l, m, two_j)


@lru_cache(maxsize=None)
def _c2v_stack(two_j: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VanishingOperatorWarning)
        stack = np.array([stevens_operator(l, m, Fraction(two_j, 2)) for l, m in C2V_KEYS])
    stack.setflags(write=False)
    return stack


def cf_hamiltonian(coeffs: Mapping, multiplet: Multiplet) -> np.ndarray:
    """``sum B_l^m O_l^m(J)`` as a real symmetric matrix (GHz)."""
    vec = coeffs.as_vector() if isinstance(coeffs, StevensCoefficients) else StevensCoefficients(coeffs).as_vector()
    return np.tensordot(vec, _c2v_stack(int(2 * multiplet.J)), axes=1)


# --------------------------------------------------------------------------- #
# Parameter transfer between multiplets of the same term
# --------------------------------------------------------------------------- #


def scaling_ratio(l: int, source: Multiplet, target: Multiplet) -> float:
    """``B~_l^m / B_l^m`` for moving rank-``l`` parameters from ``source`` to ``target``."""
    if source.L != target.L or source.S != target.S:
        raise ValueError("parameter transfer needs multiplets of the same L and S")
    j, jt = source.J, target.J
    if l > 2 * min(j, jt):
        raise ValueError(f"rank {l} exceeds 2*min(J) for J={j}, J~={jt}")
    den = wigner_6j(j, j, l, source.L, source.L, source.S)
    if den == 0.0:
        raise ValueError(f"6-j symbol for J={j}, l={l} vanishes")
    num = wigner_6j(jt, jt, l, target.L, target.L, target.S)
    phase = -1.0 if int(jt - j) % 2 else 1.0
    fact = Fraction(
        math.factorial(int(2 * jt - l)) * math.factorial(int(2 * j + l + 1)),
        math.factorial(int(2 * j - l)) * math.factorial(int(2 * jt + l + 1)),
    )
    return phase * float((2 * jt + 1) / (2 * j + 1)) * math.sqrt(fact) * num / den


def scale_parameters(coeffs: StevensCoefficients, source: Multiplet, target: Multiplet) -> StevensCoefficients:
    ratios = {l: scaling_ratio(l, source, target) for l in {l for l, _ in C2V_KEYS}}
    return StevensCoefficients({k: v * ratios[k[0]] for k, v in coeffs.items()})


# --------------------------------------------------------------------------- #
# Levels, doublets and g-values
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class KramersDoublet:
    energy: float  # GHz above the lowest doublet
    state_up: np.ndarray = field(repr=False)
    state_down: np.ndarray = field(repr=False)
    width: float = 0.0  # residual splitting of the pair, GHz


def cf_levels(coeffs: Mapping, multiplet: Multiplet, rtol: float = 1e-6) -> list[KramersDoublet]:
    """Kramers doublets of the crystal-field Hamiltonian, ascending, lowest at zero."""
    if not multiplet.is_kramers:
        raise ValueError("Kramers doublets need a half-integer J")
    w, v = np.linalg.eigh(cf_hamiltonian(coeffs, multiplet))
    spread = w[-1] - w[0]
    doublets = []
    for i in range(0, len(w), 2):
        gap = w[i + 1] - w[i]
        if gap > rtol * spread:
            raise DegeneracyError(f"levels {i} and {i + 1} differ by {gap:.3g} GHz (spread {spread:.3g} GHz)")
        doublets.append(KramersDoublet(0.5 * (w[i] + w[i + 1]) - w[0], v[:, i], v[:, i + 1], gap))
    ground = doublets[0].energy
    return [KramersDoublet(d.energy - ground, d.state_up, d.state_down, d.width) for d in doublets]


def level_energies(coeffs: Mapping, multiplet: Multiplet) -> np.ndarray:
    """Doublet energies only; cheaper than ``cf_levels`` and used inside fits."""
    w = np.linalg.eigvalsh(cf_hamiltonian(coeffs, multiplet))
    pairs = 0.5 * (w[0::2] + w[1::2])
    return pairs - pairs[0]


def g_from_doublet(doublet: KramersDoublet, ops: AngularMomentumSet, lande_g: float, atol: float = 1e-6) -> np.ndarray:
    """Principal g-values ``(g1, g2, g3)`` along ``(y', x', z')`` of a Kramers doublet.

    The doublet basis is fixed by diagonalizing ``Jz'`` in the degenerate
    subspace (``<up|Jz'|up> >= 0``) and rotating the relative phase so that
    ``<up|Jx'|down>`` is real and non-negative.  If ``Jz'`` is degenerate in
    the subspace the values are taken as singular values of the projected
    operators instead.
    """
    if doublet.width > atol * max(1.0, abs(doublet.energy)):
        raise ValueError(f"states are not degenerate (splitting {doublet.width:.3g} GHz)")
    p = np.column_stack([doublet.state_up, doublet.state_down]).astype(complex)
    gj = float(lande_g)
    mz = p.conj().T @ ops.jz @ p
    w, v = np.linalg.eigh(mz)
    if w[1] - w[0] < 1e-10:
        sv = [np.linalg.svd(p.conj().T @ a @ p, compute_uv=False)[0] for a in (ops.jy, ops.jx, ops.jz)]
        return 2 * gj * np.array(sv)
    up, down = p @ v[:, 1], p @ v[:, 0]
    x = up.conj() @ ops.jx @ down
    if abs(x) > 0:
        down = down * np.exp(-1j * np.angle(x))
    g1 = abs(2j * gj * (up.conj() @ ops.jy @ down))
    g2 = abs(2 * gj * (up.conj() @ ops.jx @ down))
    g3 = abs(2 * gj * (up.conj() @ ops.jz @ up))
    return np.array([g1, g2, g3])


def ground_g_values(coeffs: Mapping, multiplet: Multiplet) -> np.ndarray:
    doublet = cf_levels(coeffs, multiplet)[0]
    return g_from_doublet(doublet, angular_momentum_matrices(multiplet.J), multiplet.lande_g)


# --------------------------------------------------------------------------- #
# Zeeman effect beyond the effective spin
# --------------------------------------------------------------------------- #


def zeeman_hamiltonian(coeffs: Mapping, multiplet: Multiplet, field) -> np.ndarray:
    bx, by, bz = np.asarray(field, dtype=float)
    ops = angular_momentum_matrices(multiplet.J)
    zeeman = float(multiplet.lande_g) * MU_B_OVER_H * (bx * ops.jx + by * ops.jy + bz * ops.jz)
    return cf_hamiltonian(coeffs, multiplet) + zeeman


def zeeman_cf_spectrum(coeffs: Mapping, multiplet: Multiplet, field) -> np.ndarray:
    """All ``2J+1`` energies (GHz) at ``field``, measured from the zero-field ground doublet."""
    e0 = np.linalg.eigvalsh(cf_hamiltonian(coeffs, multiplet))[0]
    return np.linalg.eigvalsh(zeeman_hamiltonian(coeffs, multiplet, field)) - e0


def zeeman_sweep(coeffs: Mapping, multiplet: Multiplet, direction, b_values) -> np.ndarray:
    """Energies for fields ``b * direction``; shape ``(len(b_values), 2J+1)``."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    return np.array([zeeman_cf_spectrum(coeffs, multiplet, b * u) for b in b_values])
