"""Point-group machinery of the cubic host: T_d operations, subsites, site symmetry.

The 24 operations of T_d stand in for the 48 of O_h because the Zeeman
interaction is inversion-even: an operation and its product with inversion act
identically on a g-tensor.

Operation ``Pi_i`` is the product ``S^s @ D_d @ C^c`` of a mirror across (110)
(``s`` in 0..1), a two-fold rotation about a crystal axis (``d`` in 0..3 for
E, C2x, C2y, C2z) and a three-fold rotation about [111] (``c`` in 0..2), with
``i = s + 2*d + 8*c``.  With this ordering the C2v group of a site with its
two-fold axis along [001] is ``{Pi_0, Pi_1, Pi_6, Pi_7}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "SymmetryOperation",
    "PointGroup",
    "MagneticClassSet",
    "InconsistentSymmetryError",
    "td_operations",
    "operation_index",
    "conjugate_tensor",
    "generate_subsites",
    "generate_subsite_pairs",
    "subsite_count",
    "point_group",
    "normalized_commutator",
    "commutator_table",
    "classify_point_group",
    "count_distinguishable_classes",
    "INVERSION_PARTNER",
]

_C3 = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
_D2 = (
    np.eye(3),
    np.diag([1.0, -1.0, -1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([-1.0, -1.0, 1.0]),
)
_MIRROR_110 = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


class InconsistentSymmetryError(ValueError):
    """The operations below threshold do not close into a group."""


@dataclass(frozen=True)
class SymmetryOperation:
    label: str
    matrix: np.ndarray = field(repr=False)
    generators: tuple[int, int, int]  # (C3 power, D2 element, Cs element)

    @property
    def determinant(self) -> int:
        return int(round(np.linalg.det(self.matrix)))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "matrix": self.matrix.tolist(),
            "generators": list(self.generators),
        }


@lru_cache(maxsize=None)
def _td_operations() -> tuple[SymmetryOperation, ...]:
    ops = []
    for c, d, s in itertools.product(range(3), range(4), range(2)):
        index = s + 2 * d + 8 * c
        matrix = np.linalg.matrix_power(_MIRROR_110, s) @ _D2[d] @ np.linalg.matrix_power(_C3, c)
        matrix.setflags(write=False)
        ops.append((index, SymmetryOperation(f"Pi_{index}", matrix, (c, d, s))))
    ops.sort(key=lambda item: item[0])
    return tuple(op for _, op in ops)


def td_operations() -> list[SymmetryOperation]:
    """The 24 elements of T_d, ``Pi_0`` being the identity."""
    return list(_td_operations())


def operation_index(matrix: np.ndarray) -> int:
    """Index of the T_d operation equal to ``matrix`` up to inversion."""
    for i, op in enumerate(_td_operations()):
        if np.allclose(op.matrix, matrix, atol=1e-9) or np.allclose(op.matrix, -matrix, atol=1e-9):
            return i
    raise ValueError("matrix is not an element of T_d (up to inversion)")


@lru_cache(maxsize=None)
def _product_table() -> np.ndarray:
    ops = _td_operations()
    table = np.empty((24, 24), dtype=int)
    for i, a in enumerate(ops):
        for j, b in enumerate(ops):
            table[i, j] = operation_index(a.matrix @ b.matrix)
    return table


def _as_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, SymmetryOperation) else np.asarray(op, dtype=float)


def _op_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def conjugate_tensor(g: np.ndarray, op) -> np.ndarray:
    """``Pi^-1 g Pi``; for orthogonal ``Pi`` the inverse is the transpose."""
    p = _as_matrix(op)
    return p.T @ np.asarray(g, dtype=float) @ p


# --------------------------------------------------------------------------- #
# Subsites and magnetic classes
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class MagneticClassSet:
    """Distinct conjugates of a tensor (or tensor pair) under T_d.

    ``tensors[k]`` is the class generated by operation ``operations[k]``; each
    class is reached by ``multiplicity`` of the 24 operations.
    """

    tensors: tuple
    multiplicity: int
    operations: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tensors)


def _dedupe(stacks: list[np.ndarray], scale: float, rtol: float) -> list[int]:
    tol = rtol * scale
    kept: list[int] = []
    for i, s in enumerate(stacks):
        if not any(np.max(np.abs(s - stacks[k])) <= tol for k in kept):
            kept.append(i)
    return kept


def generate_subsites(g: np.ndarray, rtol: float = 1e-6) -> MagneticClassSet:
    g = np.asarray(g, dtype=float)
    conj = [conjugate_tensor(g, op) for op in _td_operations()]
    kept = _dedupe(conj, _op_norm(g), rtol)
    return MagneticClassSet(tuple(conj[i] for i in kept), 24 // len(kept), tuple(kept))


def generate_subsite_pairs(g_ground: np.ndarray, g_excited: np.ndarray, rtol: float = 1e-6) -> MagneticClassSet:
    """Magnetic classes of a ground/excited tensor pair conjugated together."""
    pairs = [
        np.stack([conjugate_tensor(g_ground, op), conjugate_tensor(g_excited, op)])
        for op in _td_operations()
    ]
    scale = max(_op_norm(np.asarray(g_ground, float)), _op_norm(np.asarray(g_excited, float)))
    kept = _dedupe(pairs, scale, rtol)
    return MagneticClassSet(tuple(pairs[i] for i in kept), 24 // len(kept), tuple(kept))


# --------------------------------------------------------------------------- #
# Point groups
# --------------------------------------------------------------------------- #

# Subgroups of T_d realizable as sets of sub-threshold operations, keyed by
# (order, number of C2, number of C3, number of mirrors, number of S4).
_TD_SUBGROUP_NAMES = {
    (1, 0, 0, 0, 0): "C1",
    (2, 1, 0, 0, 0): "C2",
    (2, 0, 0, 1, 0): "Cs",
    (3, 0, 2, 0, 0): "C3",
    (4, 3, 0, 0, 0): "D2",
    (4, 1, 0, 2, 0): "C2v",
    (4, 1, 0, 0, 2): "S4",
    (6, 0, 2, 3, 0): "C3v",
    (8, 3, 0, 2, 2): "D2d",
    (12, 3, 8, 0, 0): "T",
    (24, 3, 8, 6, 6): "Td",
}

INVERSION_PARTNER = {
    "C1": "Ci", "C2": "C2h", "Cs": "C2h", "C3": "S6", "D2": "D2h", "C2v": "D2h",
    "S4": "C4h", "C3v": "D3d", "D2d": "D4h", "T": "Th", "Td": "Oh",
}

# name -> (order, centrosymmetric, T_d subgroup holding its representatives)
_GROUPS = {
    "C1": (1, False, "C1"), "Ci": (2, True, "C1"),
    "C2": (2, False, "C2"), "Cs": (2, False, "Cs"), "C2h": (4, True, "C2"),
    "C3": (3, False, "C3"), "S6": (6, True, "C3"),
    "D2": (4, False, "D2"), "C2v": (4, False, "C2v"), "S4": (4, False, "S4"),
    "D2h": (8, True, "D2"), "C4h": (8, True, "S4"),
    "C3v": (6, False, "C3v"), "D3d": (12, True, "C3v"),
    "D2d": (8, False, "D2d"), "D4h": (16, True, "D2d"),
    "T": (12, False, "T"), "Th": (24, True, "T"),
    "Td": (24, False, "Td"), "O": (24, False, "Td"), "Oh": (48, True, "Td"),
}


@dataclass(frozen=True)
class PointGroup:
    """A site point group, stored through its representatives in T_d.

    For centrosymmetric groups ``operations`` lists one representative per
    inversion pair, so ``order == 2 * len(operations)``.
    """

    name: str
    order: int
    operations: tuple[int, ...]
    centrosymmetric: bool = False

    @property
    def inversion_partner(self) -> str:
        return INVERSION_PARTNER.get(self.name, self.name)


def _signature(ops: tuple[int, ...]) -> tuple[int, ...]:
    counts = {"C2": 0, "C3": 0, "m": 0, "S4": 0}
    for i in ops:
        m = _td_operations()[i].matrix
        det, tr = np.linalg.det(m), np.trace(m)
        if det > 0:
            if np.isclose(tr, -1.0):
                counts["C2"] += 1
            elif np.isclose(tr, 0.0):
                counts["C3"] += 1
        elif np.isclose(tr, 1.0):
            counts["m"] += 1
        elif np.isclose(tr, -1.0):
            counts["S4"] += 1
    return (len(ops), counts["C2"], counts["C3"], counts["m"], counts["S4"])


def _closure(generators: list[int]) -> tuple[int, ...]:
    table = _product_table()
    group = {0, *generators}
    while True:
        new = {int(table[a, b]) for a in group for b in group} - group
        if not new:
            return tuple(sorted(group))
        group |= new


@lru_cache(maxsize=None)
def _canonical_td_subgroups() -> dict[str, tuple[int, ...]]:
    c2x, c2z, c3 = 2, 6, 8
    m110, m1m10 = 1, 7
    s4z = operation_index(_MIRROR_110 @ _D2[1])  # C2x then the (110) mirror: S4 about z
    gens = {
        "C1": [], "C2": [c2z], "Cs": [m110], "C3": [c3], "D2": [c2x, c2z],
        "C2v": [c2z, m110], "S4": [s4z], "C3v": [c3, m1m10], "D2d": [s4z, c2x],
        "T": [c3, c2x], "Td": list(range(24)),
    }
    return {name: _closure(g) for name, g in gens.items()}


def point_group(name: str) -> PointGroup:
    """Named point group with canonical T_d representatives ([001] two-fold axis, (110) mirror)."""
    try:
        order, centro, rep = _GROUPS[name]
    except KeyError:
        raise ValueError(f"unknown point group {name!r}") from None
    return PointGroup(name, order, _canonical_td_subgroups()[rep], centro)


def subsite_count(group: PointGroup | str) -> tuple[int, int]:
    """(subsites, magnetic classes) for a site of the given point group in O_h."""
    if isinstance(group, str):
        group = point_group(group)
    if group.order <= 0 or 48 % group.order:
        raise ValueError(f"point group order {group.order} does not divide 48")
    subsites = 48 // group.order
    classes = subsites if group.centrosymmetric else subsites // 2
    return subsites, min(classes, 24)


# --------------------------------------------------------------------------- #
# Symmetry from fitted tensors
# --------------------------------------------------------------------------- #


def normalized_commutator(g: np.ndarray, op) -> float:
    g = np.asarray(g, dtype=float)
    norm = _op_norm(g)
    if norm == 0.0:
        raise ValueError("normalized commutator undefined for the zero tensor")
    p = _as_matrix(op)
    return _op_norm(g @ p - p @ g) / norm


def commutator_table(*tensors: np.ndarray) -> np.ndarray:
    """Normalized commutators of each tensor with all 24 operations, shape (n, 24)."""
    return np.array([[normalized_commutator(g, op) for op in _td_operations()] for g in tensors])


def classify_point_group(g_ground: np.ndarray, g_excited: np.ndarray, threshold: float = 0.04) -> PointGroup:
    """Site symmetry as the set of operations commuting (below threshold) with both tensors."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    table = commutator_table(g_ground, g_excited)
    ops = tuple(int(i) for i in np.flatnonzero(np.all(table < threshold, axis=0)))
    products = _product_table()
    for a in ops:
        for b in ops:
            c = int(products[a, b])
            if c not in ops:
                raise InconsistentSymmetryError(
                    f"sub-threshold operations are not closed: Pi_{a} * Pi_{b} = Pi_{c} "
                    f"(commutators {table[0, c]:.3g}, {table[1, c]:.3g})"
                )
    name = _TD_SUBGROUP_NAMES.get(_signature(ops))
    if name is None:
        raise InconsistentSymmetryError(f"operation set {ops} is not a recognised subgroup of T_d")
    return PointGroup(name, len(ops), ops, False)


def count_distinguishable_classes(g: np.ndarray, field_direction, rtol: float = 1e-6) -> int:
    """Number of distinct effective g-factors over the magnetic classes of ``g``."""
    from .spin_model import effective_g

    values = sorted(effective_g(gi, field_direction) for gi in generate_subsites(g).tensors)
    distinct = [values[0]]
    for v in values[1:]:
        if abs(v - distinct[-1]) > rtol * max(abs(v), abs(distinct[-1]), 1e-300):
            distinct.append(v)
    return len(distinct)
