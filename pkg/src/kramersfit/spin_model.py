"""Effective spin-1/2 Zeeman model of an optical transition between two Kramers doublets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.constants import physical_constants

from . import symmetry

# Bohr magneton over Planck constant in GHz/T.
MU_B_OVER_H = physical_constants["Bohr magneton in Hz/T"][0] * 1e-9

BRANCHES = ("f_pp", "f_pm", "f_mp", "f_mm")
_BRANCH_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def as_gtensor(entries) -> np.ndarray:
    """Symmetric 3x3 float array built from the upper triangle of ``entries``."""
    m = np.array(entries, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"g-tensor must be 3x3, got shape {m.shape}")
    upper = np.triu(m)
    return upper + np.triu(m, 1).T


def _unit(direction, tol: float = 1e-9) -> np.ndarray:
    u = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > tol:
        raise ValueError(f"direction {u} is not a unit vector")
    return u


def effective_g(g: np.ndarray, direction) -> float:
    """``|g . n|`` for unit vector ``n``."""
    return float(np.linalg.norm(np.asarray(g, dtype=float) @ _unit(direction)))


@dataclass(frozen=True)
class SpinModel:
    g_ground: np.ndarray
    g_excited: np.ndarray
    f0: float = 0.0  # zero-field line, GHz; 0 for detuning-relative work

    def __post_init__(self):
        object.__setattr__(self, "g_ground", as_gtensor(self.g_ground))
        object.__setattr__(self, "g_excited", as_gtensor(self.g_excited))
        if self.f0 < 0 or not np.isfinite(self.f0):
            raise ValueError("f0 must be finite and non-negative")

    def to_dict(self) -> dict:
        return {
            "f0_ghz": float(self.f0),
            "g_ground": self.g_ground.tolist(),
            "g_excited": self.g_excited.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpinModel":
        return cls(np.array(data["g_ground"]), np.array(data["g_excited"]), float(data.get("f0_ghz", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SpinModel":
        return cls.from_dict(json.loads(text))


class TransitionQuartet(NamedTuple):
    f_pp: float
    f_pm: float
    f_mp: float
    f_mm: float


def transition_frequencies(model: SpinModel, field) -> TransitionQuartet:
    """The two spin-flip and two spin-preserving lines at magnetic field ``field`` (tesla)."""
    b = np.asarray(field, dtype=float)
    magnitude = float(np.linalg.norm(b))
    if magnitude == 0.0:
        return TransitionQuartet(*(float(model.f0),) * 4)
    u = b / magnitude
    gg = float(np.linalg.norm(model.g_ground @ u))
    ge = float(np.linalg.norm(model.g_excited @ u))
    half = 0.5 * MU_B_OVER_H * magnitude
    return TransitionQuartet(
        model.f0 + half * (gg + ge),
        model.f0 + half * (gg - ge),
        model.f0 + half * (-gg + ge),
        model.f0 + half * (-gg - ge),
    )


class BrightnessOrder(NamedTuple):
    bright: str
    dim: str
    bright_detuning_sign: int  # sign of (f_pm - f0): which side of f0 carries the bright line
    degenerate: bool


def brightness_ranking(
    quartet: TransitionQuartet,
    g_ground_eff: float,
    g_excited_eff: float,
    low_temperature: bool = True,
) -> BrightnessOrder | None:
    """Label the spin-preserving lines by thermal brightness.

    With the lower ground Zeeman state preferentially populated, ``f_pm``
    outshines ``f_mp``.  The ordering is only meaningful when the caller
    asserts ``low_temperature`` (cold enough, high enough field); otherwise
    ``None`` is returned.
    """
    if not low_temperature:
        return None
    degenerate = bool(np.isclose(g_ground_eff, g_excited_eff, rtol=1e-12, atol=0.0)) or quartet.f_pm == quartet.f_mp
    sign = int(np.sign(g_ground_eff - g_excited_eff))
    return BrightnessOrder("f_pm", "f_mp", sign, degenerate)


def read_off_g(bright_preserving_detuning: float, largest_flip_detuning: float, b_magnitude: float) -> tuple[float, float]:
    """Ground and excited effective g from a spectrum taken along a common principal axis.

    The largest spin-flip splitting gives ``g_g + g_e``; the brightest
    spin-preserving line gives ``g_g - g_e`` including its sign.
    """
    scale = 0.5 * MU_B_OVER_H * b_magnitude
    total = abs(largest_flip_detuning) / scale
    diff = bright_preserving_detuning / scale
    return 0.5 * (total + diff), 0.5 * (total - diff)


def principal_values(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues sorted by decreasing magnitude and the matching axes (as rows)."""
    w, v = np.linalg.eigh(as_gtensor(g))
    order = np.argsort(-np.abs(w), kind="stable")
    return w[order], v[:, order].T


# --------------------------------------------------------------------------- #
# Rotation patterns
# --------------------------------------------------------------------------- #


class PatternLine(NamedTuple):
    angle_deg: float
    branch: str
    class_index: int
    frequency_ghz: float


def rotation_directions(axis, angles_deg: Sequence[float]) -> np.ndarray:
    """Field directions swept about ``axis`` starting from the projection of [001].

    For axis [110] the sweep runs from [001] at 0 deg to [-110] at 90 deg.
    """
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    start = np.array([0.0, 0.0, 1.0]) - a[2] * a
    if np.linalg.norm(start) < 1e-12:
        start = np.array([1.0, 0.0, 0.0]) - a[0] * a
    start /= np.linalg.norm(start)
    side = np.cross(start, a)
    t = np.radians(np.asarray(angles_deg, dtype=float))
    return np.cos(t)[:, None] * start + np.sin(t)[:, None] * side


def predict_rotation_pattern(
    model: SpinModel,
    axis,
    angle_grid: Sequence[float],
    b_magnitude: float,
) -> list[PatternLine]:
    """All transition lines of all magnetic classes along a field rotation."""
    classes = symmetry.generate_subsite_pairs(model.g_ground, model.g_excited)
    lines = []
    for angle, u in zip(angle_grid, rotation_directions(axis, angle_grid)):
        for k, (gg, ge) in enumerate(classes.tensors):
            q = transition_frequencies(SpinModel(gg, ge, model.f0), b_magnitude * u)
            lines.extend(PatternLine(float(angle), name, k, f) for name, f in zip(BRANCHES, q))
    return lines


def distinct_positions(frequencies: Sequence[float], rtol: float = 1e-6) -> list[float]:
    """Merge line positions equal within ``rtol`` (relative to the largest magnitude)."""
    values = sorted(float(f) for f in frequencies)
    if not values:
        return []
    scale = max(abs(values[0]), abs(values[-1])) or 1.0
    merged = [values[0]]
    for v in values[1:]:
        if v - merged[-1] > rtol * scale:
            merged.append(v)
    return merged


# --------------------------------------------------------------------------- #
# Tensor comparison
# --------------------------------------------------------------------------- #


@lru_cache(maxsize=None)
def icosphere(level: int = 4) -> np.ndarray:
    """Unit vectors of a subdivided icosahedron (``10 * 4**level + 2`` points)."""
    phi = (1 + 5**0.5) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    points = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = points[i] + points[j]
                points.append(m / np.linalg.norm(m))
                cache[key] = len(points) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    out = np.array(points)
    out.setflags(write=False)
    return out


def delta_g(g_a: np.ndarray, g_b: np.ndarray, directions: np.ndarray | None = None) -> float:
    """Direction-averaged relative deviation of two tensors' effective g-factors."""
    u = icosphere(4) if directions is None else np.asarray(directions, dtype=float)
    ga = np.linalg.norm(u @ np.asarray(g_a, dtype=float).T, axis=1)
    gb = np.linalg.norm(u @ np.asarray(g_b, dtype=float).T, axis=1)
    mean = 0.5 * (ga + gb)
    keep = mean > 0
    if not np.any(keep):
        raise ValueError("both effective g-factors vanish along every direction")
    return float(np.mean(np.abs(ga[keep] - gb[keep]) / mean[keep]))


def equivalent_delta_g(
    model_a: SpinModel, model_b: SpinModel
) -> tuple[float, float, int]:
    """(delta_g ground, delta_g excited, operation) minimized over simultaneous T_d conjugation of ``model_a``."""
    best = None
    for i, op in enumerate(symmetry.td_operations()):
        dg = delta_g(symmetry.conjugate_tensor(model_a.g_ground, op), model_b.g_ground)
        de = delta_g(symmetry.conjugate_tensor(model_a.g_excited, op), model_b.g_excited)
        if best is None or max(dg, de) < max(best[0], best[1]):
            best = (dg, de, i)
    return best
