"""Command-line front end.

Every subcommand resolves its options from built-in defaults, an optional
JSON ``--config`` file and explicit flags (in increasing priority), writes its
outputs into ``--output`` and records the resolved options in
``manifest.json`` there.  Exit status: 0 success, 1 unconverged fit (outputs
still written), 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, symmetry
from . import erbium_silicon as es
from .crystal_field import (
    Multiplet,
    StevensCoefficients,
    ground_g_values,
    scale_parameters,
    zeeman_sweep,
)
from .fitting.cf import CfFitConfig, default_seed_grid, fit_cf
from .fitting.spin import SpinFitConfig, fit_spin
from .spectra_io import (
    ExtractionConfig,
    MapFormatError,
    PeakList,
    apply_veto,
    coincidence_filter,
    default_coincidence_tolerance,
    extract_peaks,
    load_map,
    load_peaks,
    load_veto,
    peaks_to_data,
    save_map,
    save_peaks,
    symmetrize,
    synthesize_map,
)
from .spin_model import SpinModel, predict_rotation_pattern

EXIT_OK, EXIT_UNCONVERGED, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported with exit status 2."""


def fmt(x) -> str:
    return f"{float(x):.9g}"


def _round(obj):
    """Floats rounded to 9 significant digits, recursively."""
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_round(data), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _vector(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    s = str(text).strip().strip("[]")
    if "," in s:
        return [float(v) for v in s.split(",")]
    # compact Miller notation such as 110 or 1-10
    out, sign = [], 1
    for ch in s:
        if ch == "-":
            sign = -1
        else:
            out.append(sign * float(ch))
            sign = 1
    if len(out) != 3:
        raise InputError(f"cannot read a 3-vector from {text!r}")
    return out


def _grid(text) -> np.ndarray:
    """``start:stop:step`` inclusive of stop, or a comma list."""
    if isinstance(text, (list, tuple)):
        return np.asarray(text, dtype=float)
    s = str(text)
    if ":" in s:
        start, stop, step = (float(v) for v in s.split(":"))
        if step <= 0 or stop < start:
            raise InputError(f"bad grid {text!r}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)
    return np.array([float(v) for v in s.split(",")])


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc})") from None


def _load_spin_model(path) -> SpinModel:
    data = _read_json(path)
    try:
        return SpinModel.from_dict(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{path}: not a spin model ({exc})") from None


def _multiplet(opts, which: str) -> Multiplet:
    return Multiplet(Fraction(str(opts["L"])), Fraction(str(opts["S"])), Fraction(str(opts[f"{which}_J"])))


# --------------------------------------------------------------------------- #
# Subcommands.  Each takes the resolved option dict and the output directory.
# --------------------------------------------------------------------------- #


def cmd_extract_peaks(o: dict, out: Path) -> int:
    fmap = load_map(_existing(o["map"]))
    cfg = ExtractionConfig(o["min_amplitude"], o["min_prominence"], o["min_separation"])
    f0 = fmap.f0_ghz if o["f0"] is None else float(o["f0"])
    if o["symmetrize"]:
        fmap = symmetrize(fmap, f0)
    peaks = extract_peaks(fmap, cfg)
    if o["second_map"]:
        other = load_map(_existing(o["second_map"]))
        if o["symmetrize"]:
            other = symmetrize(other, f0)
        tol = o["tolerance"] or default_coincidence_tolerance(fmap.step, fmap.field_tesla, other.field_tesla)
        peaks = coincidence_filter(peaks, fmap.field_tesla, extract_peaks(other, cfg), other.field_tesla, f0, tol)
    if o["veto"]:
        peaks = apply_veto(peaks, load_veto(_existing(o["veto"])), 0.5 * fmap.step)
    save_peaks(peaks, out / o["peaks_out"])
    print(f"{len(peaks)} peaks -> {out / o['peaks_out']}")
    return EXIT_OK


def cmd_fit_spin(o: dict, out: Path) -> int:
    axis = _vector(o["axis"])
    pres = load_peaks(_existing(o["preserving"]))
    flip = load_peaks(_existing(o["spinflip"])) if o["spinflip"] else PeakList()
    data_p = peaks_to_data(pres, o["field_preserving"], axis, o["f0"])
    data_f = peaks_to_data(flip, o["field_spinflip"], axis, o["f0"], mirror=o["mirror_spinflip"])
    if not data_p:
        raise InputError("no spin-preserving peaks")
    cfg = SpinFitConfig(
        parameterization="c2v6" if o["symmetry"] == "c2v" else "general12",
        reverse_support_count=o["k"], reverse_support_weight=o["reverse_weight"],
        spin_flip_weight=o["spin_flip_weight"], basin_hops=o["hops"], hop_temperature=o["temperature"],
        step_scale=o["step"], rng_seed=o["seed"], local_tolerance=o["local_tolerance"],
        local_xtol=o["local_xtol"], patience=o["patience"], restarts=o["restarts"], jobs=o["jobs"],
    )
    initial = None
    if o["initial"]:
        from .fitting.spin import params_from_tensors

        m = _load_spin_model(o["initial"])
        initial = params_from_tensors(m.g_ground, m.g_excited, cfg.parameterization)
    brightness = None
    if o["bright_sign"]:
        brightness = (_vector(o["bright_direction"]), int(o["bright_sign"]))
    res = fit_spin(data_p, data_f, cfg, initial=initial, brightness=brightness)
    _write_json(out / o["model_out"], res.model.to_dict())
    _write_csv(out / "diagnostics.csv", ["chain", "hop", "loss", "accepted"],
               [(c, h, float(f), int(a)) for c, h, f, a in res.diagnostics])
    print(f"loss {fmt(res.loss)}")
    print(f"rmsd_relative {fmt(res.rmsd_relative)}")
    print(f"rmsd_relative_weighted {fmt(res.rmsd_relative_weighted)}")
    if not res.converged:
        print(f"warning: {res.message}", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def _read_levels(path) -> tuple[np.ndarray, np.ndarray]:
    data = _read_json(path)
    try:
        return np.asarray(data["ground_ghz"], dtype=float), np.asarray(data["excited_ghz"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: expected 'ground_ghz' and 'excited_ghz' level lists ({exc})") from None


def cmd_fit_cf(o: dict, out: Path) -> int:
    ground, excited = _multiplet(o, "ground"), _multiplet(o, "excited")
    if o["levels"]:
        zg, ye = _read_levels(o["levels"])
    else:
        zg, ye = es.GROUND_LEVELS_MEASURED, es.EXCITED_LEVELS_MEASURED
    grid = [tuple(p) for p in o["seed_grid"]] if o["seed_grid"] else default_seed_grid()
    try:
        cfg = CfFitConfig(tuple(grid), o["powell_tolerance"], o["max_iterations"], o["jobs"])
        res = fit_cf(zg, ye, ground, excited, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write_json(out / o["params_out"], res.model.to_dict())
    _write_csv(out / "cf_diagnostics.csv", ["seed_b40", "seed_b60", "initial_rmsd", "rmsd", "evaluations", "converged"],
               [(d["seed_b40"], d["seed_b60"], d["initial_rmsd"], d["rmsd"], d["evaluations"], int(d["converged"]))
                for d in res.diagnostics])
    gz = ground_g_values(res.model, ground)
    gy = ground_g_values(scale_parameters(res.model, ground, excited), excited)
    print(f"rmsd_ghz {fmt(res.rmsd_absolute)}")
    print("g_ground " + " ".join(fmt(v) for v in gz))
    print("g_excited " + " ".join(fmt(v) for v in gy))
    if not res.converged:
        print(f"warning: {res.message}", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_predict(o: dict, out: Path) -> int:
    data = _read_json(_existing(o["model"]))
    if "B" in data:
        coeffs = StevensCoefficients.from_dict(data)
        ground = _multiplet(o, "ground")
        mult = ground if o["multiplet"] == "ground" else _multiplet(o, "excited")
        if mult is not ground:
            coeffs = scale_parameters(coeffs, ground, mult)
        direction = np.asarray(_vector(o["direction"]))
        direction = direction / np.linalg.norm(direction)
        b = _grid(o["fields"])
        energies = zeeman_sweep(coeffs, mult, direction, b)
        header = ["b_tesla"] + [f"level_{i}" for i in range(energies.shape[1])]
        _write_csv(out / o["pattern_out"], header, ([float(bi)] + [float(e) for e in row] for bi, row in zip(b, energies)))
        print(f"{energies.shape[1]} curves x {b.size} fields -> {out / o['pattern_out']}")
        return EXIT_OK
    model = _load_spin_model(o["model"])
    angles = _grid(o["angles"])
    lines = predict_rotation_pattern(model, _vector(o["axis"]), angles, float(o["field"]))
    _write_csv(out / o["pattern_out"], ["angle_deg", "branch", "class_index", "frequency_ghz"],
               ((float(l.angle_deg), l.branch, l.class_index, float(l.frequency_ghz)) for l in lines))
    n_classes = 1 + max(l.class_index for l in lines)
    print(f"{n_classes} magnetic classes, {len(lines)} lines -> {out / o['pattern_out']}")
    return EXIT_OK


def cmd_classify(o: dict, out: Path) -> int:
    model = _load_spin_model(_existing(o["model"]))
    table = symmetry.commutator_table(model.g_ground, model.g_excited)
    _write_csv(out / "commutators.csv", ["operation", "ground", "excited"],
               ((f"Pi_{i}", float(table[0, i]), float(table[1, i])) for i in range(24)))
    for i in range(24):
        print(f"Pi_{i:<2d} {fmt(table[0, i]):>12} {fmt(table[1, i]):>12}")
    try:
        group = symmetry.classify_point_group(model.g_ground, model.g_excited, o["threshold"])
        print(f"point group {group.name} (operations {list(group.operations)}; with inversion {group.inversion_partner})")
    except symmetry.InconsistentSymmetryError as exc:
        print(f"point group C1 (closure note: {exc})")
    return EXIT_OK


def cmd_subsites(o: dict, out: Path) -> int:
    if o["model"]:
        model = _load_spin_model(_existing(o["model"]))
        u = np.asarray(_vector(o["direction"]))
        u = u / np.linalg.norm(u)
        for label, g in (("ground", model.g_ground), ("excited", model.g_excited)):
            print(f"{label}: {len(symmetry.generate_subsites(g).tensors)} classes, "
                  f"{symmetry.count_distinguishable_classes(g, u)} distinguishable along {o['direction']}")
        return EXIT_OK
    try:
        n_sub, n_cls = symmetry.subsite_count(o["group"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print(f"{o['group']}: {n_sub} subsites, {n_cls} magnetic classes")
    return EXIT_OK


def cmd_synth(o: dict, out: Path) -> int:
    model = _load_spin_model(_existing(o["model"])) if o["model"] else es.SITE_A_C2V
    fmap = synthesize_map(
        model, _grid(o["angles"]), float(o["field"]), float(o["linewidth"]), float(o["peak_counts"]),
        float(o["background"]), o["seed"], detuning=_grid(o["detuning"]), axis=_vector(o["axis"]),
        branches=tuple(o["branches"].split(",")) if isinstance(o["branches"], str) else tuple(o["branches"]),
    )
    save_map(fmap, out / o["map_out"])
    print(f"{fmap.counts.shape[0]} x {fmap.counts.shape[1]} map -> {out / o['map_out']}")
    return EXIT_OK


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    return p


# --------------------------------------------------------------------------- #
# Argument parsing
# --------------------------------------------------------------------------- #

_ERBIUM = {"L": 6, "S": 1.5, "ground_J": 7.5, "excited_J": 6.5}

DEFAULTS: dict[str, dict] = {
    "extract-peaks": {
        "map": None, "second_map": None, "veto": None, "symmetrize": False, "f0": None,
        "min_amplitude": 0.0, "min_prominence": 0.0, "min_separation": 0.0, "tolerance": None,
        "peaks_out": "peaks.csv",
    },
    "fit-spin": {
        "preserving": None, "spinflip": None, "field_preserving": 1.9, "field_spinflip": 0.25,
        "axis": "110", "f0": 0.0, "symmetry": "general", "mirror_spinflip": True, "initial": None,
        "k": 10, "reverse_weight": 1.0, "spin_flip_weight": 0.5, "hops": 200, "temperature": 1.0,
        "step": 0.5, "local_tolerance": 1e-9, "local_xtol": 1e-6, "patience": 50, "restarts": 1,
        "bright_direction": "1-10", "bright_sign": None, "model_out": "spin_model.json",
    },
    "fit-cf": {
        "levels": None, **_ERBIUM, "seed_grid": None, "powell_tolerance": 1e-6, "max_iterations": 100000,
        "params_out": "cf_params.json",
    },
    "predict": {
        "model": None, "axis": "110", "angles": "0:90:1", "field": 1.9, "direction": "001",
        "fields": "0:3:0.1", "multiplet": "ground", **_ERBIUM, "pattern_out": "prediction.csv",
    },
    "classify": {"model": None, "threshold": 0.04},
    "subsites": {"group": "C2v", "model": None, "direction": "001"},
    "synth": {
        "model": None, "angles": "0:90:1", "field": 1.9, "linewidth": 0.5, "peak_counts": 100.0,
        "background": 25.0, "detuning": "-44.5:44.5:0.125", "axis": "110", "branches": "f_pm,f_mp",
        "map_out": "map.csv",
    },
}

HANDLERS = {
    "extract-peaks": cmd_extract_peaks, "fit-spin": cmd_fit_spin, "fit-cf": cmd_fit_cf,
    "predict": cmd_predict, "classify": cmd_classify, "subsites": cmd_subsites, "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # suppressed defaults, so a flag given before the subcommand is not reset by the subparser
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="JSON file of option values (flags take precedence)")
    common.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=S, help="worker processes for fits (default 1)")
    common.add_argument("--output", default=S, help="output directory (default .)")

    parser = argparse.ArgumentParser(prog="kramersfit", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-peaks", parents=[common], help="peak positions from a fluorescence map")
    p.add_argument("map", nargs="?", default=S)
    p.add_argument("--second-map", default=S, help="map at a second field for coincidence filtering")
    p.add_argument("--veto", default=S, help="file of 'sweep_value, detuning_ghz' points to discard")
    p.add_argument("--symmetrize", action="store_true", default=S)
    p.add_argument("--f0", type=float, default=S, help="zero-field line on the detuning axis (GHz)")
    p.add_argument("--min-amplitude", type=float, default=S)
    p.add_argument("--min-prominence", type=float, default=S)
    p.add_argument("--min-separation", type=float, default=S, help="GHz")
    p.add_argument("--tolerance", type=float, default=S, help="coincidence tolerance (GHz/T)")
    p.add_argument("--peaks-out", default=S)

    p = sub.add_parser("fit-spin", parents=[common], help="fit ground/excited g-tensors to peaks")
    p.add_argument("preserving", nargs="?", default=S, help="spin-preserving peak CSV")
    p.add_argument("spinflip", nargs="?", default=S, help="spin-flip peak CSV (one side of f0)")
    p.add_argument("--field-preserving", type=float, default=S, help="tesla")
    p.add_argument("--field-spinflip", type=float, default=S, help="tesla")
    p.add_argument("--axis", default=S, help="rotation axis, e.g. 110")
    p.add_argument("--f0", type=float, default=S)
    p.add_argument("--symmetry", choices=["general", "c2v"], default=S)
    p.add_argument("--no-mirror", dest="mirror_spinflip", action="store_false", default=S)
    p.add_argument("--initial", default=S, help="spin model JSON to start from")
    p.add_argument("--k", type=int, default=S, help="reverse-support neighbours per line")
    p.add_argument("--reverse-weight", type=float, default=S)
    p.add_argument("--spin-flip-weight", type=float, default=S)
    p.add_argument("--hops", type=int, default=S)
    p.add_argument("--temperature", type=float, default=S)
    p.add_argument("--step", type=float, default=S)
    p.add_argument("--local-tolerance", type=float, default=S)
    p.add_argument("--local-xtol", type=float, default=S)
    p.add_argument("--patience", type=int, default=S)
    p.add_argument("--restarts", type=int, default=S)
    p.add_argument("--bright-direction", default=S)
    p.add_argument("--bright-sign", type=int, choices=[-1, 1], default=S,
                   help="side of f0 carrying the brighter spin-preserving line along --bright-direction")
    p.add_argument("--model-out", default=S)

    p = sub.add_parser("fit-cf", parents=[common], help="fit crystal-field parameters to level energies")
    p.add_argument("levels", nargs="?", default=S, help="JSON with ground_ghz and excited_ghz lists")
    for name in ("L", "S", "ground-J", "excited-J"):
        p.add_argument(f"--{name}", type=float, default=S, dest=name.replace("-", "_"))
    p.add_argument("--powell-tolerance", type=float, default=S)
    p.add_argument("--max-iterations", type=int, default=S)
    p.add_argument("--params-out", default=S)

    p = sub.add_parser("predict", parents=[common], help="rotation pattern or Zeeman sweep CSV")
    p.add_argument("model", nargs="?", default=S, help="spin model or crystal-field JSON")
    p.add_argument("--axis", default=S)
    p.add_argument("--angles", default=S, help="start:stop:step in degrees")
    p.add_argument("--field", type=float, default=S, help="tesla, for rotation patterns")
    p.add_argument("--direction", default=S, help="field direction for a crystal-field sweep")
    p.add_argument("--fields", default=S, help="start:stop:step in tesla, for a crystal-field sweep")
    p.add_argument("--multiplet", choices=["ground", "excited"], default=S)
    for name in ("L", "S", "ground-J", "excited-J"):
        p.add_argument(f"--{name}", type=float, default=S, dest=name.replace("-", "_"))
    p.add_argument("--pattern-out", default=S)

    p = sub.add_parser("classify", parents=[common], help="site point group from a spin model")
    p.add_argument("model", nargs="?", default=S)
    p.add_argument("--threshold", type=float, default=S)

    p = sub.add_parser("subsites", parents=[common], help="subsite and magnetic class counts")
    p.add_argument("--group", default=S)
    p.add_argument("--model", default=S)
    p.add_argument("--direction", default=S)

    p = sub.add_parser("synth", parents=[common], help="synthetic fluorescence map")
    p.add_argument("--model", default=S)
    p.add_argument("--angles", default=S)
    p.add_argument("--field", type=float, default=S)
    p.add_argument("--linewidth", type=float, default=S, help="FWHM, GHz")
    p.add_argument("--peak-counts", type=float, default=S)
    p.add_argument("--background", type=float, default=S)
    p.add_argument("--detuning", default=S, help="start:stop:step in GHz")
    p.add_argument("--axis", default=S)
    p.add_argument("--branches", default=S, help="comma list of f_pp,f_pm,f_mp,f_mm")
    p.add_argument("--map-out", default=S)
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict, Path]:
    given = vars(args)
    file_opts = _read_json(given["config"]) if given.get("config") else {}
    if not isinstance(file_opts, dict):
        raise InputError("config file must hold a JSON object")
    opts = dict(DEFAULTS[args.command])
    opts.update({"seed": 0, "jobs": 1, "output": "."})
    unknown = set(file_opts) - set(opts)
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    opts.update(file_opts)
    opts.update({k: v for k, v in given.items() if k in opts and v is not None})
    return opts, Path(opts["output"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts, out = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"command": args.command, "options": opts, "version": __version__}
        _write_json(out / "manifest.json", manifest)
        return HANDLERS[args.command](opts, out)
    except (InputError, MapFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
