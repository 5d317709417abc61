import csv
import json

import numpy as np
import pytest

from kramersfit import erbium_silicon as es
from kramersfit.cli import main
from kramersfit.crystal_field import level_energies, scale_parameters
from kramersfit.spin_model import SpinModel


def run(tmp_path, *argv):
    return main(["--output", str(tmp_path), *map(str, argv)])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def models(tmp_path):
    c2v = tmp_path / "c2v.json"
    c2v.write_text(es.SITE_A_C2V.to_json())
    general = tmp_path / "general.json"
    general.write_text(es.SITE_A_GENERAL.to_json())
    cf = tmp_path / "cf.json"
    cf.write_text(es.CF_PARAMETERS.to_json())
    iso = tmp_path / "iso.json"
    iso.write_text(SpinModel(2 * np.eye(3), np.eye(3)).to_json())
    return {"c2v": c2v, "general": general, "cf": cf, "iso": iso}


# --------------------------------------------------------------------------- #
# Maps and peaks
# --------------------------------------------------------------------------- #


def test_synth_then_extract(tmp_path, models):
    assert run(tmp_path, "synth", "--model", models["c2v"], "--angles", "0:90:10", "--seed", 1) == 0
    assert (tmp_path / "map.csv").is_file()
    code = run(tmp_path, "extract-peaks", tmp_path / "map.csv", "--symmetrize",
               "--min-amplitude", 90, "--min-prominence", 40, "--min-separation", 0.25)
    assert code == 0
    peaks = rows(tmp_path / "peaks.csv")
    assert peaks[0] == ["sweep_value", "detuning_ghz", "amplitude", "prominence"] and len(peaks) > 10


def test_extract_missing_file_names_path(tmp_path, capsys):
    assert run(tmp_path, "extract-peaks", tmp_path / "nope.csv") == 2
    assert "nope.csv" in capsys.readouterr().err


def test_extract_two_field_coincidence(tmp_path, models):
    det = "-63:63:0.125"
    for b, name in ((0.25, "a.csv"), (0.35, "b.csv")):
        assert run(tmp_path, "synth", "--model", models["c2v"], "--angles", "0:90:15", "--field", b,
                   "--branches", "f_pp,f_mm", f"--detuning={det}", "--map-out", name) == 0
    # a fixed-frequency feature that does not move with the field
    text = (tmp_path / "a.csv").read_text().splitlines()
    out = []
    for line in text:
        parts = line.split(",")
        if len(parts) == 3 and parts[0][0].isdigit() and abs(float(parts[1]) - 7.0) < 0.3:
            parts[2] = repr(float(parts[2]) + float(400.0 * np.exp(-((float(parts[1]) - 7.0) / 0.15) ** 2)))
        out.append(",".join(parts))
    (tmp_path / "a.csv").write_text("\n".join(out) + "\n")
    opts = ("--min-amplitude", 60, "--min-prominence", 30)
    assert run(tmp_path, "extract-peaks", tmp_path / "a.csv", *opts, "--peaks-out", "single.csv") == 0
    assert run(tmp_path, "extract-peaks", tmp_path / "a.csv", "--second-map", tmp_path / "b.csv", *opts) == 0
    single = [float(r[1]) for r in rows(tmp_path / "single.csv")[1:]]
    kept = [float(r[1]) for r in rows(tmp_path / "peaks.csv")[1:]]
    assert any(abs(f - 7.0) < 0.1 for f in single)
    assert not any(abs(f - 7.0) < 0.1 for f in kept)
    # every Zeeman line whose 0.35 T partner stays inside the window survives
    inside = [f for f in single if abs(f - 7.0) > 0.1 and abs(f) * 0.35 / 0.25 < 60.0]
    assert set(inside) <= set(kept) <= set(single)


# --------------------------------------------------------------------------- #
# Fits
# --------------------------------------------------------------------------- #


def test_fit_spin_writes_model_and_diagnostics(tmp_path, models):
    run(tmp_path, "synth", "--model", models["c2v"], "--angles", "0:90:10", "--seed", 1)
    run(tmp_path, "extract-peaks", tmp_path / "map.csv", "--symmetrize", "--min-amplitude", 90,
        "--min-prominence", 40, "--min-separation", 0.25)
    code = run(tmp_path, "fit-spin", tmp_path / "peaks.csv", "--symmetry", "c2v", "--hops", 3, "--patience", 2)
    assert code in (0, 1)
    model = json.loads((tmp_path / "spin_model.json").read_text())
    assert set(model) == {"f0_ghz", "g_ground", "g_excited"}
    assert rows(tmp_path / "diagnostics.csv")[0] == ["chain", "hop", "loss", "accepted"]


def test_unconverged_fit_exits_one(tmp_path, models):
    run(tmp_path, "synth", "--model", models["c2v"], "--angles", "0:90:30", "--seed", 1)
    run(tmp_path, "extract-peaks", tmp_path / "map.csv", "--min-amplitude", 90, "--min-prominence", 40)
    assert run(tmp_path, "fit-spin", tmp_path / "peaks.csv", "--symmetry", "c2v", "--hops", 1) == 1
    assert (tmp_path / "spin_model.json").is_file()


def test_fit_cf_malformed_levels(tmp_path):
    bad = tmp_path / "levels.json"
    bad.write_text(json.dumps({"ground_ghz": [0, 1, 2], "excited_ghz": [0]}))
    assert run(tmp_path, "fit-cf", bad) == 2
    bad.write_text("{not json")
    assert run(tmp_path, "fit-cf", bad) == 2
    bad.write_text(json.dumps({"ground": []}))
    assert run(tmp_path, "fit-cf", bad) == 2


def test_fit_cf_synthetic_levels(tmp_path, capsys):
    z, y = es.GROUND_MULTIPLET, es.EXCITED_MULTIPLET
    levels = tmp_path / "levels.json"
    levels.write_text(json.dumps({
        "ground_ghz": level_energies(es.CF_PARAMETERS, z).tolist(),
        "excited_ghz": level_energies(scale_parameters(es.CF_PARAMETERS, z, y), y).tolist(),
    }))
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"seed_grid": [[0.31622776601683794, 1e-4]]}))
    assert run(tmp_path, "fit-cf", levels, "--config", config) == 0
    out = capsys.readouterr().out
    assert float(out.split("rmsd_ghz ")[1].split()[0]) < 0.1
    params = json.loads((tmp_path / "cf_params.json").read_text())
    assert len(params["B"]) == 9
    assert len(rows(tmp_path / "cf_diagnostics.csv")) == 2


# --------------------------------------------------------------------------- #
# Prediction and symmetry
# --------------------------------------------------------------------------- #


def test_predict_rotation_pattern(tmp_path, models, capsys):
    assert run(tmp_path, "predict", models["c2v"], "--angles", "0:90:5") == 0
    table = rows(tmp_path / "prediction.csv")
    assert table[0] == ["angle_deg", "branch", "class_index", "frequency_ghz"]
    assert len({r[2] for r in table[1:]}) == 6
    assert "6 magnetic classes" in capsys.readouterr().out


def test_predict_cf_field_sweep(tmp_path, models):
    assert run(tmp_path, "predict", models["cf"], "--fields", "0:3:0.5") == 0
    table = rows(tmp_path / "prediction.csv")
    assert len(table[0]) == 17 and len(table) == 8
    zero = np.array(table[1][1:], dtype=float)
    levels = level_energies(es.CF_PARAMETERS, es.GROUND_MULTIPLET)
    assert np.allclose(zero, np.repeat(levels, 2), atol=1e-6)


def test_classify_outputs(tmp_path, models, capsys):
    assert run(tmp_path, "classify", models["c2v"]) == 0
    out = capsys.readouterr().out
    assert "point group C2v" in out and out.count("Pi_") >= 24
    assert len(rows(tmp_path / "commutators.csv")) == 25
    assert run(tmp_path, "classify", models["iso"]) == 0
    assert "point group Td" in capsys.readouterr().out
    assert run(tmp_path, "classify", models["general"], "--threshold", 1e-12) == 0
    assert "point group C1" in capsys.readouterr().out


def test_subsites(tmp_path, models, capsys):
    assert run(tmp_path, "subsites", "--group", "C2v") == 0
    assert "12 subsites, 6 magnetic classes" in capsys.readouterr().out
    assert run(tmp_path, "subsites", "--model", models["c2v"]) == 0
    assert "ground: 6 classes, 2 distinguishable" in capsys.readouterr().out
    assert run(tmp_path, "subsites", "--group", "C9") == 2


# --------------------------------------------------------------------------- #
# Configuration and manifest
# --------------------------------------------------------------------------- #


def test_manifest_and_precedence(tmp_path, models):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"angles": "0:90:45", "field": 1.0}))
    assert run(tmp_path, "synth", "--config", config, "--field", 0.5, "--model", models["c2v"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["options"]["angles"] == "0:90:45" and manifest["options"]["field"] == 0.5
    assert manifest["options"]["seed"] == 0


def test_unknown_config_key(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"bogus": 1}))
    assert run(tmp_path, "subsites", "--config", config) == 2


def test_global_flags_before_subcommand(tmp_path, models):
    assert main(["--seed", "5", "--output", str(tmp_path), "synth", "--model", str(models["c2v"]), "--angles", "0:90:45"]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["options"]["seed"] == 5
