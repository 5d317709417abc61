"""Fluorescence maps: CSV I/O, symmetrization, peak extraction and synthetic maps.

Spectrum CSV layout::

    # field_tesla=1.9
    # axis=[110]
    # f0_ghz=0
    # sweep=angle_deg
    sweep_value,detuning_ghz,counts
    0,-44.5,12
    ...

Rows are grouped by sweep value; every group shares one detuning grid.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks, peak_widths

from .fitting.spin import PeakDatum
from .spin_model import BRANCHES, SpinModel, predict_rotation_pattern, rotation_directions

MAP_COLUMNS = "sweep_value,detuning_ghz,counts"
PEAK_COLUMNS = "sweep_value,detuning_ghz,amplitude,prominence"
SWEEP_KINDS = ("angle_deg", "label")
_REQUIRED_KEYS = ("field_tesla", "axis", "f0_ghz", "sweep")


class MapFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


def _fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _parse_axis(text: str) -> np.ndarray:
    m = re.fullmatch(r"\[\s*(-?\d+)\s*,?\s*(-?\d+)\s*,?\s*(-?\d+)\s*\]", text.strip())
    if m is None:
        compact = re.fullmatch(r"\[(-?\d)(-?\d)(-?\d)\]", text.strip())
        if compact is None:
            raise ValueError(f"cannot parse axis {text!r}")
        m = compact
    return np.array([float(g) for g in m.groups()])


@dataclass
class FluorescenceMap:
    detuning: np.ndarray  # GHz, strictly increasing
    sweep: np.ndarray  # degrees (float) or labels (str)
    counts: np.ndarray  # (n_sweep, n_detuning)
    field_tesla: float
    axis: str = "[110]"
    f0_ghz: float = 0.0
    sweep_kind: str = "angle_deg"

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.sweep = np.asarray(self.sweep, dtype=float if self.sweep_kind == "angle_deg" else str)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.sweep_kind not in SWEEP_KINDS:
            raise ValueError(f"sweep kind must be one of {SWEEP_KINDS}")
        if self.counts.shape != (self.sweep.size, self.detuning.size):
            raise ValueError(f"counts shape {self.counts.shape} does not match axes ({self.sweep.size}, {self.detuning.size})")
        if self.detuning.size > 1 and not np.all(np.diff(self.detuning) > 0):
            raise ValueError("detuning axis must be strictly increasing")
        if self.sweep_kind == "angle_deg" and self.sweep.size > 1:
            steps = np.diff(self.sweep)
            if not (np.all(steps > 0) or np.all(steps < 0)):
                raise ValueError("sweep axis must be strictly monotone")
        if self.sweep_kind == "label" and len(set(self.sweep.tolist())) != self.sweep.size:
            raise ValueError("sweep labels must be unique")
        if np.any(~np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise ValueError("counts must be finite and non-negative")

    @property
    def step(self) -> float:
        return float(np.median(np.diff(self.detuning))) if self.detuning.size > 1 else 0.0

    @property
    def axis_vector(self) -> np.ndarray:
        return _parse_axis(self.axis)


# --------------------------------------------------------------------------- #
# CSV I/O
# --------------------------------------------------------------------------- #


def save_map(fmap: FluorescenceMap, path) -> None:
    lines = [
        f"# field_tesla={_fmt(fmap.field_tesla)}",
        f"# axis={fmap.axis}",
        f"# f0_ghz={_fmt(fmap.f0_ghz)}",
        f"# sweep={fmap.sweep_kind}",
        MAP_COLUMNS,
    ]
    det = [_fmt(d) for d in fmap.detuning]
    for s, row in zip(fmap.sweep, fmap.counts):
        label = _fmt(s) if fmap.sweep_kind == "angle_deg" else str(s)
        lines.extend(f"{label},{d},{_fmt(c)}" for d, c in zip(det, row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_map(path) -> FluorescenceMap:
    path = Path(path)
    meta: dict[str, str] = {}
    groups: dict = {}
    order: list = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if order:
                    raise MapFormatError(path, lineno, "header line after data")
                key, sep, value = line[1:].partition("=")
                if not sep:
                    raise MapFormatError(path, lineno, f"malformed header {line!r}")
                meta[key.strip()] = value.strip()
                continue
            if line.replace(" ", "") == MAP_COLUMNS:
                continue
            missing = [k for k in _REQUIRED_KEYS if k not in meta]
            if missing:
                raise MapFormatError(path, lineno, f"missing header keys {missing}")
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise MapFormatError(path, lineno, f"expected 3 columns, got {len(parts)}")
            try:
                sweep = float(parts[0]) if meta["sweep"] == "angle_deg" else parts[0]
                det, cnt = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise MapFormatError(path, lineno, str(exc)) from None
            if not (math.isfinite(det) and math.isfinite(cnt)):
                raise MapFormatError(path, lineno, "non-finite value")
            if cnt < 0:
                raise MapFormatError(path, lineno, f"negative count {cnt}")
            if sweep not in groups:
                if order and sweep in order:
                    raise MapFormatError(path, lineno, f"sweep value {sweep} split across blocks")
                groups[sweep] = ([], [], lineno)
                order.append(sweep)
            elif sweep != order[-1]:
                raise MapFormatError(path, lineno, f"sweep value {sweep} split across blocks")
            dets, cnts, _ = groups[sweep]
            if dets and det <= dets[-1]:
                raise MapFormatError(path, lineno, "detuning axis not strictly increasing")
            dets.append(det)
            cnts.append(cnt)
    if not order:
        raise MapFormatError(path, 0, "no data rows")
    if meta["sweep"] not in SWEEP_KINDS:
        raise MapFormatError(path, 0, f"unknown sweep kind {meta['sweep']!r}")
    detuning = groups[order[0]][0]
    for s in order[1:]:
        if groups[s][0] != detuning:
            raise MapFormatError(path, groups[s][2], f"detuning grid of sweep {s} differs from the first block")
    if meta["sweep"] == "angle_deg" and len(order) > 1:
        steps = np.diff(order)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise MapFormatError(path, 0, "sweep axis not strictly monotone")
    try:
        field_tesla, f0 = float(meta["field_tesla"]), float(meta["f0_ghz"])
        _parse_axis(meta["axis"])
    except ValueError as exc:
        raise MapFormatError(path, 0, f"malformed header: {exc}") from None
    return FluorescenceMap(
        np.array(detuning), np.array(order), np.array([groups[s][1] for s in order]),
        field_tesla, meta["axis"], f0, meta["sweep"],
    )


# --------------------------------------------------------------------------- #
# Preprocessing
# --------------------------------------------------------------------------- #


def _with_counts(fmap: FluorescenceMap, counts: np.ndarray) -> FluorescenceMap:
    return FluorescenceMap(fmap.detuning.copy(), fmap.sweep.copy(), counts, fmap.field_tesla,
                           fmap.axis, fmap.f0_ghz, fmap.sweep_kind)


def symmetrize(fmap: FluorescenceMap, f0_detuning: float | None = None) -> FluorescenceMap:
    """Map plus its mirror image about ``f0_detuning`` (linear interpolation, zero outside the grid)."""
    f0 = fmap.f0_ghz if f0_detuning is None else float(f0_detuning)
    if not fmap.detuning[0] <= f0 <= fmap.detuning[-1]:
        raise ValueError(f"f0 = {f0} GHz lies outside the detuning axis")
    mirrored = 2.0 * f0 - fmap.detuning
    reflected = np.array([np.interp(mirrored, fmap.detuning, row, left=0.0, right=0.0) for row in fmap.counts])
    return _with_counts(fmap, fmap.counts + reflected)


@dataclass(frozen=True)
class ExtractionConfig:
    min_amplitude: float = 0.0
    min_prominence: float = 0.0
    min_separation: float = 0.0  # GHz
    refine: bool = True  # sub-bin line center from a local Lorentzian fit

    def __post_init__(self):
        if min(self.min_amplitude, self.min_prominence, self.min_separation) < 0:
            raise ValueError("extraction thresholds must be non-negative")


class Peak(NamedTuple):
    sweep_value: object
    detuning_ghz: float
    amplitude: float
    prominence: float


@dataclass
class PeakList:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def at(self, sweep_value) -> list[Peak]:
        return [p for p in self.entries if p.sweep_value == sweep_value]


def _lorentzian(x, amplitude, center, hwhm):
    return amplitude / (1.0 + ((x - center) / hwhm) ** 2)


def _refine(detuning: np.ndarray, row: np.ndarray, i: int, half_width: float, base: float) -> float:
    """Sub-bin line center from a local Lorentzian fit above the peak's prominence base.

    Falls back to the vertex of a three-point parabola when the fit fails or
    leaves the window.
    """
    step = detuning[1] - detuning[0]
    h = max(2, int(round(2.0 * half_width)))
    lo, hi = max(0, i - h), min(row.size, i + h + 1)
    x, y = detuning[lo:hi], row[lo:hi] - base
    try:
        (_, center, _), _ = curve_fit(_lorentzian, x, y, p0=(row[i] - base, detuning[i], max(half_width, 1.0) * step))
        if x[0] <= center <= x[-1]:
            return float(center)
    except (RuntimeError, ValueError):
        pass
    if 0 < i < row.size - 1:
        a, b, c = row[i - 1], row[i], row[i + 1]
        curv = a - 2.0 * b + c
        if curv < 0:
            return float(detuning[i] + 0.5 * (a - c) / curv * step)
    return float(detuning[i])


def _row_peaks(detuning: np.ndarray, row: np.ndarray, config: ExtractionConfig, step: float):
    distance = max(1, math.ceil(config.min_separation / step - 1e-9)) if step > 0 else 1
    idx, props = find_peaks(
        row, height=config.min_amplitude, prominence=config.min_prominence,
        distance=distance if config.min_separation > 0 else None,
    )
    keep = props["prominences"] > 0
    idx, prominences = idx[keep], props["prominences"][keep]
    if idx.size == 0:
        return []
    widths = peak_widths(row, idx, rel_height=0.5)[0] if config.refine else np.zeros(idx.size)
    out = []
    for i, prom, w in zip(idx, prominences, widths):
        center = _refine(detuning, row, i, 0.5 * w, row[i] - prom) if config.refine else float(detuning[i])
        out.append((center, float(row[i]), float(prom)))
    return out


def extract_peaks(fmap: FluorescenceMap, config: ExtractionConfig = ExtractionConfig()) -> PeakList:
    """Local maxima per sweep row with amplitude and topographic prominence thresholds."""
    step = fmap.step
    entries = []
    for s, row in zip(fmap.sweep, fmap.counts):
        value = float(s) if fmap.sweep_kind == "angle_deg" else str(s)
        entries.extend(Peak(value, *p) for p in _row_peaks(fmap.detuning, row, config, step))
    return PeakList(entries)


def coincidence_filter(peaks_a: PeakList, field_a: float, peaks_b: PeakList, field_b: float,
                       f0: float, tolerance_ghz_per_tesla: float) -> PeakList:
    """Peaks of ``peaks_a`` whose Zeeman slope (GHz/T) matches a peak of ``peaks_b`` at the same sweep value.

    Zeeman lines scale linearly with the field; features of other sites at a
    fixed frequency do not, and are dropped.
    """
    if field_a <= 0 or field_b <= 0 or field_a == field_b:
        raise ValueError("need two distinct positive field magnitudes")
    slopes_b: dict = {}
    for p in peaks_b:
        slopes_b.setdefault(p.sweep_value, []).append((p.detuning_ghz - f0) / field_b)
    kept = []
    for p in peaks_a:
        partners = slopes_b.get(p.sweep_value)
        if not partners:
            continue
        slope = (p.detuning_ghz - f0) / field_a
        if min(abs(slope - q) for q in partners) <= tolerance_ghz_per_tesla:
            kept.append(p)
    return PeakList(kept)


def default_coincidence_tolerance(step_ghz: float, field_a: float, field_b: float) -> float:
    """Two detuning bins over the smaller field, in GHz/T."""
    return 2.0 * step_ghz / min(field_a, field_b)


# --------------------------------------------------------------------------- #
# Peak list files and manual vetoes
# --------------------------------------------------------------------------- #


def save_peaks(peaks: PeakList, path) -> None:
    rows = [PEAK_COLUMNS]
    for p in peaks:
        s = _fmt(p.sweep_value) if isinstance(p.sweep_value, float) else str(p.sweep_value)
        rows.append(f"{s},{_fmt(p.detuning_ghz)},{_fmt(p.amplitude)},{_fmt(p.prominence)}")
    Path(path).write_text("\n".join(rows) + "\n")


def _read_rows(path, ncols: int) -> Iterable[tuple[int, list[str]]]:
    path = Path(path)
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != ncols:
                raise MapFormatError(path, lineno, f"expected {ncols} columns, got {len(parts)}")
            yield lineno, parts


def _sweep_value(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def load_peaks(path) -> PeakList:
    entries = []
    for lineno, parts in _read_rows(path, 4):
        try:
            entries.append(Peak(_sweep_value(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise MapFormatError(path, lineno, str(exc)) from None
    return PeakList(entries)


def load_veto(path) -> list[tuple[object, float]]:
    out = []
    for lineno, parts in _read_rows(path, 2):
        try:
            out.append((_sweep_value(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise MapFormatError(path, lineno, str(exc)) from None
    return out


def apply_veto(peaks: PeakList, vetoes: Sequence[tuple[object, float]], tolerance_ghz: float) -> PeakList:
    """Drop peaks within ``tolerance_ghz`` of a vetoed (sweep value, detuning) point."""
    def vetoed(p: Peak) -> bool:
        return any(s == p.sweep_value and abs(d - p.detuning_ghz) <= tolerance_ghz for s, d in vetoes)

    return PeakList([p for p in peaks if not vetoed(p)])


def peaks_to_data(peaks: PeakList, field_tesla: float, axis, f0: float = 0.0,
                  weight: float = 1.0, mirror: bool = False) -> list[PeakDatum]:
    """Fit input from an angle-swept peak list; ``mirror`` adds reflections about ``f0``."""
    data = []
    for p in peaks:
        if not isinstance(p.sweep_value, float):
            raise ValueError("peaks need numeric sweep angles to be placed on the field sphere")
        b = field_tesla * rotation_directions(axis, [p.sweep_value])[0]
        data.append(PeakDatum(b, p.detuning_ghz - f0, weight))
        if mirror:
            data.append(PeakDatum(b, f0 - p.detuning_ghz, weight))
    return data


# --------------------------------------------------------------------------- #
# Synthetic maps
# --------------------------------------------------------------------------- #

DEFAULT_BRANCH_WEIGHTS = {"f_pp": 1.0, "f_pm": 1.0, "f_mp": 0.6, "f_mm": 1.0}


def synthesize_map(
    model: SpinModel,
    angles: Sequence[float],
    b_magnitude: float,
    linewidth_ghz: float,
    peak_counts: float,
    background_rate: float,
    rng_seed: int | None,
    detuning=None,
    axis=(1.0, 1.0, 0.0),
    branches: Sequence[str] = BRANCHES,
    branch_weights: dict | None = None,
) -> FluorescenceMap:
    """Lorentzian lines at the predicted rotation pattern plus background and Poisson noise.

    ``peak_counts`` is the height of a single unit-weight line; ``f_mp`` is
    rendered dimmer than ``f_pm`` by default, as for a thermally polarized
    ground doublet.  ``rng_seed=None`` gives the noiseless expectation.
    Frequencies are detunings: ``model.f0`` is placed at zero.
    """
    if linewidth_ghz <= 0:
        raise ValueError("linewidth must be positive")
    det = np.arange(-44.5, 44.5 + 1e-9, 0.125) if detuning is None else np.asarray(detuning, dtype=float)
    weights = dict(DEFAULT_BRANCH_WEIGHTS, **(branch_weights or {}))
    hwhm = 0.5 * linewidth_ghz
    pattern = predict_rotation_pattern(SpinModel(model.g_ground, model.g_excited), axis, list(angles), b_magnitude)
    counts = np.full((len(angles), det.size), float(background_rate))
    row_of = {float(a): i for i, a in enumerate(angles)}
    for line in pattern:
        if line.branch not in branches:
            continue
        counts[row_of[line.angle_deg]] += peak_counts * weights[line.branch] / (1.0 + ((det - line.frequency_ghz) / hwhm) ** 2)
    if rng_seed is not None:
        counts = np.random.default_rng(rng_seed).poisson(counts).astype(float)
    axis_label = "[" + "".join(str(int(round(c))) for c in axis) + "]"
    return FluorescenceMap(det, np.asarray(angles, dtype=float), counts, float(b_magnitude), axis_label, 0.0)
