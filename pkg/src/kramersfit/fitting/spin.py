"""g-tensor fitting against unassigned peak positions.

The model predicts 4 lines for each of the 24 T_d conjugates of the tensor
pair (96 lines per field).  Each peak is charged the squared relative distance
to its nearest model line; each model line is charged the distances of its
``k`` nearest peaks, so lines without empirical support are penalized.
Frequencies are detunings from the zero-field line.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .. import symmetry
from ..spin_model import MU_B_OVER_H, SpinModel, as_gtensor

PARAMETERIZATIONS = ("general12", "c2v6")

# principal axes imposed by C2v with the two-fold axis along [001]
C2V_AXES = np.array([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, math.sqrt(2.0)]]) / math.sqrt(2.0)

# peaks closer than this (GHz) to the zero-field line are compared in absolute terms
ZERO_DETUNING_GUARD = 1e-3

_OPS = np.array([op.matrix for op in symmetry.td_operations()])


class PeakDatum(NamedTuple):
    field_vector: np.ndarray  # tesla, crystal frame
    frequency: float  # GHz detuning
    weight: float = 1.0


@dataclass(frozen=True)
class SpinFitConfig:
    parameterization: str = "general12"
    reverse_support_count: int = 10
    reverse_support_weight: float = 1.0
    spin_flip_weight: float = 0.5
    basin_hops: int = 200
    hop_temperature: float = 1.0
    step_scale: float = 0.5
    rng_seed: int = 0
    local_tolerance: float = 1e-9
    local_xtol: float = 1e-6
    local_max_evaluations: int = 20000
    patience: int = 50
    restarts: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.reverse_support_count < 0:
            raise ValueError("reverse_support_count must be >= 0")
        if min(self.spin_flip_weight, self.hop_temperature, self.step_scale, self.local_tolerance) <= 0:
            raise ValueError("weights, temperature, step scale and tolerance must be positive")
        if self.basin_hops < 0 or self.restarts < 1:
            raise ValueError("basin_hops must be >= 0 and restarts >= 1")


@dataclass
class FitResult:
    parameters: np.ndarray
    model: object
    loss: float
    rmsd_relative: float
    rmsd_relative_weighted: float = float("nan")
    rmsd_absolute: float = float("nan")
    converged: bool = True
    diagnostics: list = field(default_factory=list)
    message: str = ""


# --------------------------------------------------------------------------- #
# Parameterizations
# --------------------------------------------------------------------------- #


def tensors_from_params(params, parameterization: str = "general12") -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(params, dtype=float)
    if parameterization == "general12":
        if p.shape != (12,):
            raise ValueError("general12 needs 12 parameters")

        def sym(a, b, c, ab, ac, bc):
            return np.array([[a, ab, ac], [ab, b, bc], [ac, bc, c]])

        return sym(*p[0:6]), sym(*p[6:12])
    if parameterization == "c2v6":
        if p.shape != (6,):
            raise ValueError("c2v6 needs 6 parameters")
        return C2V_AXES.T @ np.diag(p[0:3]) @ C2V_AXES, C2V_AXES.T @ np.diag(p[3:6]) @ C2V_AXES
    raise ValueError(f"unknown parameterization {parameterization!r}")


def params_from_tensors(g_ground, g_excited, parameterization: str = "general12") -> np.ndarray:
    """Inverse of :func:`tensors_from_params` (a projection for ``c2v6``)."""
    gg, ge = as_gtensor(g_ground), as_gtensor(g_excited)
    if parameterization == "general12":
        pick = lambda g: [g[0, 0], g[1, 1], g[2, 2], g[0, 1], g[0, 2], g[1, 2]]  # noqa: E731
        return np.array(pick(gg) + pick(ge))
    if parameterization == "c2v6":
        diag = lambda g: list(np.einsum("ij,jk,ik->i", C2V_AXES, g, C2V_AXES))  # noqa: E731
        return np.array(diag(gg) + diag(ge))
    raise ValueError(f"unknown parameterization {parameterization!r}")


def model_from_params(params, parameterization: str = "general12", f0: float = 0.0) -> SpinModel:
    return SpinModel(*tensors_from_params(params, parameterization), f0)


def _lines(gg: np.ndarray, ge: np.ndarray, directions: np.ndarray, magnitudes: np.ndarray) -> np.ndarray:
    """(n_fields, 96) detunings, ordered branch-major: f_pp, f_pm, f_mp, f_mm x 24 classes."""
    # conjugates Pi^T g Pi applied to u equal Pi^T g (Pi u)
    rotated = np.einsum("kij,fj->fki", _OPS, directions)
    a = np.linalg.norm(np.einsum("ij,fkj->fki", gg, rotated), axis=2)
    b = np.linalg.norm(np.einsum("ij,fkj->fki", ge, rotated), axis=2)
    half = 0.5 * MU_B_OVER_H * magnitudes[:, None]
    return np.concatenate([half * (a + b), half * (a - b), half * (b - a), -half * (a + b)], axis=1)


def model_lines(params, field, parameterization: str = "general12") -> np.ndarray:
    """The 96 predicted detunings (GHz) at one field vector."""
    b = np.asarray(field, dtype=float)
    mag = float(np.linalg.norm(b))
    u = b / mag if mag > 0 else np.array([0.0, 0.0, 1.0])
    gg, ge = tensors_from_params(params, parameterization)
    return _lines(gg, ge, u[None, :], np.array([mag]))[0]


# --------------------------------------------------------------------------- #
# Loss
# --------------------------------------------------------------------------- #


class SpinLoss:
    """Vectorized nearest-line and reverse-support loss over a fixed peak set.

    Peaks are stored grouped by field so that the per-field line sets can be
    broadcast with ``np.repeat``; residual matrices are laid out (96, n_peaks).
    """

    def __init__(self, data: Sequence[PeakDatum], parameterization: str = "general12",
                 reverse_support_count: int = 10, reverse_support_weight: float = 1.0,
                 absolute_frequencies: bool = False):
        if not data:
            raise ValueError("no peaks to fit")
        fields = np.array([np.asarray(d.field_vector, dtype=float) for d in data])
        frequency = np.array([float(d.frequency) for d in data])
        weight = np.array([float(d.weight) for d in data])
        if np.any(weight <= 0) or not np.all(np.isfinite(frequency)):
            raise ValueError("peak weights must be positive and frequencies finite")
        if absolute_frequencies and np.any(frequency == 0):
            raise ValueError("absolute peak frequencies must be nonzero")
        unique, field_index = np.unique(fields, axis=0, return_inverse=True)
        order = np.argsort(field_index.ravel(), kind="stable")
        self.frequency, self.weight = frequency[order], weight[order]
        self.counts = np.bincount(field_index.ravel(), minlength=len(unique))
        self.magnitudes = np.linalg.norm(unique, axis=1)
        safe = np.where(self.magnitudes > 0, self.magnitudes, 1.0)
        self.directions = unique / safe[:, None]
        self.inverse_scale = 1.0 / np.where(np.abs(self.frequency) < ZERO_DETUNING_GUARD, 1.0, self.frequency)
        self.parameterization = parameterization
        self.k = min(int(reverse_support_count), len(data))
        self.reverse_weight = float(reverse_support_weight)

    def residuals(self, params) -> np.ndarray:
        """(96, n_peaks) squared relative distances, peaks in field-grouped order."""
        gg, ge = tensors_from_params(params, self.parameterization)
        d = np.repeat(_lines(gg, ge, self.directions, self.magnitudes).T, self.counts, axis=1)
        d -= self.frequency
        d *= self.inverse_scale
        return np.square(d, out=d)

    def forward(self, params, sq=None) -> float:
        sq = self.residuals(params) if sq is None else sq
        return float(sq.min(axis=0) @ self.weight)

    def reverse(self, params, sq=None) -> float:
        if self.k == 0:
            return 0.0
        sq = self.residuals(params) if sq is None else sq
        weighted = sq * self.weight
        nearest = np.partition(weighted, self.k - 1, axis=1)[:, : self.k]
        return float(np.sum(nearest))

    def __call__(self, params) -> float:
        sq = self.residuals(params)
        return self.forward(params, sq) + self.reverse_weight * self.reverse(params, sq)

    def rmsd(self, params) -> tuple[float, float]:
        """(unweighted, weighted) relative RMSD of peaks to their nearest line."""
        best = self.residuals(params).min(axis=0)
        return float(np.sqrt(best.mean())), float(np.sqrt(np.sum(self.weight * best) / self.weight.sum()))


def nearest_line_loss(params, data: Sequence[PeakDatum], parameterization: str = "general12") -> float:
    return SpinLoss(data, parameterization, 0).forward(params)


def reverse_support_loss(params, data: Sequence[PeakDatum], reverse_support_count: int = 10,
                         parameterization: str = "general12") -> float:
    return SpinLoss(data, parameterization, reverse_support_count).reverse(params)


def rmsd_relative(data: Sequence[PeakDatum], params, parameterization: str = "general12") -> float:
    return SpinLoss(data, parameterization, 0).rmsd(params)[0]


def rmsd_absolute(predicted, measured) -> float:
    p, m = np.asarray(predicted, dtype=float), np.asarray(measured, dtype=float)
    if p.size == 0 or p.shape != m.shape:
        raise ValueError("need non-empty arrays of equal shape")
    return float(np.sqrt(np.mean((p - m) ** 2)))


# --------------------------------------------------------------------------- #
# Data preparation
# --------------------------------------------------------------------------- #


def mirror_peaks(peaks: Sequence[PeakDatum]) -> list[PeakDatum]:
    """Peaks plus their reflections about the zero-field line."""
    return list(peaks) + [PeakDatum(p.field_vector, -p.frequency, p.weight) for p in peaks]


def initial_guess(data_preserving: Sequence[PeakDatum], data_spinflip: Sequence[PeakDatum],
                  parameterization: str = "general12") -> np.ndarray:
    """Axial C2v-shaped start whose largest splittings match the data."""

    def largest_slope(peaks):
        slopes = [abs(p.frequency) / np.linalg.norm(p.field_vector) for p in peaks if np.linalg.norm(p.field_vector) > 0]
        return 2.0 * max(slopes) / MU_B_OVER_H if slopes else 0.0

    diff = largest_slope(data_preserving)
    total = max(largest_slope(data_spinflip), diff, 1.0)
    gg, ge = 0.5 * (total + diff), max(0.5 * (total - diff), 0.1)
    c2v = np.array([gg, 0.05 * gg, 0.05 * gg, ge, 0.05 * ge, 0.05 * ge])
    if parameterization == "c2v6":
        return c2v
    return params_from_tensors(*tensors_from_params(c2v, "c2v6"), "general12")


# --------------------------------------------------------------------------- #
# Basin hopping
# --------------------------------------------------------------------------- #


def _local_minimize(fun, x0: np.ndarray, config: SpinFitConfig):
    f0 = fun(x0)
    res = minimize(
        fun, x0, method="Nelder-Mead",
        options={
            "xatol": config.local_xtol,
            "fatol": config.local_tolerance * max(abs(f0), 1e-12),
            "maxfev": config.local_max_evaluations,
            "adaptive": True,
        },
    )
    return res.x, float(res.fun), bool(res.success), int(res.nfev)


def _basin_hop_chain(args) -> dict:
    loss, x0, config, seed_seq, chain = args
    rng = np.random.default_rng(seed_seq)
    x, f, ok, nfev = _local_minimize(loss, np.asarray(x0, dtype=float), config)
    best_x, best_f, best_ok = x.copy(), f, ok
    trace = [(chain, 0, f, True)]
    since_improved = 0
    converged = config.basin_hops == 0
    for hop in range(1, config.basin_hops + 1):
        trial = x + config.step_scale * rng.standard_normal(x.shape)
        tx, tf, tok, n = _local_minimize(loss, trial, config)
        nfev += n
        accept = tf < f or rng.random() < math.exp(-(tf - f) / config.hop_temperature)
        trace.append((chain, hop, tf, bool(accept)))
        if accept:
            x, f = tx, tf
        if tf < best_f - config.local_tolerance * max(abs(best_f), 1.0):
            best_x, best_f, best_ok = tx.copy(), tf, tok
            since_improved = 0
        else:
            since_improved += 1
        if since_improved >= config.patience:
            converged = True
            break
    return {"x": best_x, "f": best_f, "local_ok": best_ok, "converged": converged, "trace": trace, "nfev": nfev}


def _start_points(x0: np.ndarray, config: SpinFitConfig) -> list:
    seqs = np.random.SeedSequence(config.rng_seed).spawn(config.restarts)
    starts = []
    for i, seq in enumerate(seqs):
        if i == 0:
            starts.append((x0, seq))
        else:
            jitter_seq, chain_seq = seq.spawn(2)
            jitter = config.step_scale * np.random.default_rng(jitter_seq).standard_normal(x0.shape)
            starts.append((x0 + jitter, chain_seq))
    return starts


def assign_by_brightness(model: SpinModel, direction, bright_detuning_sign: int) -> SpinModel:
    """Order ground/excited so the bright spin-preserving line sits on the observed side of f0.

    The line positions are symmetric under exchanging the two tensors; only the
    thermal brightness of ``f_pm`` over ``f_mp`` tells them apart.
    """
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    diff = np.linalg.norm(model.g_ground @ u) - np.linalg.norm(model.g_excited @ u)
    if np.sign(diff) * np.sign(bright_detuning_sign) < 0:
        return SpinModel(model.g_excited, model.g_ground, model.f0)
    return model


def fit_spin(
    data_preserving: Sequence[PeakDatum],
    data_spinflip: Sequence[PeakDatum],
    config: SpinFitConfig = SpinFitConfig(),
    initial=None,
    brightness: tuple | None = None,
) -> FitResult:
    """Basin-hopping fit of a ground/excited g-tensor pair.

    ``data_spinflip`` is expected already mirrored about the zero-field line;
    its weights are multiplied by ``config.spin_flip_weight``.  ``brightness``
    is an optional ``(direction, sign)`` pair giving the side of the zero-field
    line on which the brighter spin-preserving line was observed; without it
    the tensor with the larger principal value is taken as the ground state.
    """
    data = list(data_preserving) + [
        PeakDatum(p.field_vector, p.frequency, p.weight * config.spin_flip_weight) for p in data_spinflip
    ]
    loss = SpinLoss(data, config.parameterization, config.reverse_support_count, config.reverse_support_weight)
    x0 = initial_guess(data_preserving, data_spinflip, config.parameterization) if initial is None else np.asarray(initial, float)
    tasks = [(loss, start, config, seq, i) for i, (start, seq) in enumerate(_start_points(x0, config))]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chains = list(pool.map(_basin_hop_chain, tasks))
    else:
        chains = [_basin_hop_chain(t) for t in tasks]
    best = min(range(len(chains)), key=lambda i: (chains[i]["f"], i))
    chain = chains[best]

    model = model_from_params(chain["x"], config.parameterization)
    if brightness is not None:
        model = assign_by_brightness(model, *brightness)
    elif np.abs(np.linalg.eigvalsh(model.g_excited)).max() > np.abs(np.linalg.eigvalsh(model.g_ground)).max():
        model = SpinModel(model.g_excited, model.g_ground, model.f0)
    # exact inverse in both parameterizations, since the tensors came from them
    params = params_from_tensors(model.g_ground, model.g_excited, config.parameterization)
    unweighted, weighted = loss.rmsd(params)
    converged = any(c["converged"] for c in chains)
    diagnostics = [row for c in chains for row in c["trace"]]
    return FitResult(
        parameters=params,
        model=model,
        loss=float(loss(params)),
        rmsd_relative=unweighted,
        rmsd_relative_weighted=weighted,
        converged=converged,
        diagnostics=diagnostics,
        message="" if converged else f"best loss still improving after {config.basin_hops} hops",
    )


def with_overrides(config: SpinFitConfig, **overrides) -> SpinFitConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
