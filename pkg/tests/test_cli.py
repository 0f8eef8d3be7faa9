import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tactilemap import cli, gelsim, pipeline
from tactilemap.core import HeightMap, SensorGeometry, save_raster
from tactilemap.recon import ReconConfig


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


# ------------------------------------------------------------------- stats
def test_stats_reproduces_table_and_writes_manifest(tmp_path):
    assert run("stats", "--out", tmp_path) == 0
    with open(tmp_path / "moisturizer_tests.csv") as fh:
        rows = {r["location"]: r for r in csv.DictReader(fh)}
    assert rows["palm"]["friedman_chi2"] == "19.7333"
    assert rows["wrist"]["bonf_pre1_pre2"] == "0.6879"
    desc = json.loads((tmp_path / "descriptive.json").read_text())
    assert f"{desc['knuckle']['mean']:.2f}" == "35.90"
    m = manifest(tmp_path)
    assert m["command"] == "stats" and "seed" in m and len(m["config_hash"]) == 16
    assert set(m["outputs"]) == {"moisturizer_tests.csv", "descriptive.json"}
    assert m["versions"]["backend"] in ("numba", "numpy")


def test_stats_is_idempotent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("stats", "--out", a, "--seed", 3) == 0
    assert run("stats", "--out", b, "--seed", 3) == 0
    ma, mb = manifest(a), manifest(b)
    assert ma["outputs"] == mb["outputs"] and ma["config_hash"] == mb["config_hash"]
    assert ma["seed"] == 3


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"stats": {"bonferroni_m": 1, "decimals": 6}}))
    assert run("stats", "--out", tmp_path / "o", "--config", cfg, "--bonferroni-m", 2) == 0
    m = manifest(tmp_path / "o")
    assert m["config"]["bonferroni_m"] == 2 and m["config"]["decimals"] == 6
    assert str(cfg) in m["inputs"]
    assert cli.resolve({"a": 1, "b": 2}, {"a": 5, "z": 9}, {"a": None, "b": 7}) == {"a": 5, "b": 7}


def test_help_exits_zero():
    res = subprocess.run([sys.executable, "-m", "tactilemap.cli", "reconstruct", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "usage" in res.stdout.lower()


@pytest.mark.parametrize("argv", [
    ("stats", "--config", "does_not_exist.json"),
    ("simulate", "--config", "does_not_exist.json"),
    ("channels",),
    ("channels", "--height", "missing.raster"),
    ("hertz",),
    ("stats", "--table", "missing.csv"),
])
def test_missing_inputs_fail_with_diagnostic(tmp_path, capsys, argv):
    assert run(*argv, "--out", tmp_path / "o") != 0
    err = capsys.readouterr().err
    assert "error" in err and argv[0] in err
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_bad_config_json_fails(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert run("stats", "--out", tmp_path / "o", "--config", cfg) == 2
    assert "bad config" in capsys.readouterr().err


# ------------------------------------------------------------ measurement
def test_channels_on_reconstructed_96um_object(tmp_path):
    geom = SensorGeometry().at_resolution(256)
    spec = gelsim.ChannelObjectSpec("straight", 500.0, 96.0)
    h = pipeline.oracle_height(spec, geom, ReconConfig.for_geometry(geom))
    hp = tmp_path / "h.raster"
    save_raster(hp, h)
    assert run("channels", "--out", tmp_path / "o", "--height", hp) == 0
    st = json.loads((tmp_path / "o" / "depth_stats.json").read_text())
    assert 81 <= st["mean"] <= 111
    with open(tmp_path / "o" / "depths.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == st["n"] and list(rows[0]) == ["profile_id", "pair_id", "depth_um"]


def test_wrinkles_on_sinusoid(tmp_path):
    xx = np.mgrid[0:160, 0:160][1]
    hp = tmp_path / "w.raster"
    save_raster(hp, HeightMap(25 * np.sin(2 * np.pi * xx / 50)))
    assert run("wrinkles", "--out", tmp_path / "o", "--height", hp, "--n-samples", 2000) == 0
    s = json.loads((tmp_path / "o" / "wrinkle_summary.json").read_text())
    assert abs(s["p80"] - 50) <= 2.5
    assert (tmp_path / "o" / "valleys.png").stat().st_size > 0
    with open(tmp_path / "o" / "depth_histogram.csv") as fh:
        assert next(csv.reader(fh)) == ["bin_lo_um", "bin_hi_um", "density"]


def test_hertz_from_csv_curves(tmp_path):
    from tactilemap.hertz import hertz_force

    paths = []
    for i, E in enumerate((124.44, 129.55, 132.74)):
        d = np.linspace(0, 2, 40)
        p = tmp_path / f"c{i}.csv"
        p.write_text("displacement_mm,force_N\n" + "\n".join(
            f"{x:.17g},{f:.17g}" for x, f in zip(d, hertz_force(d, E, 0.49, 1.5))))
        paths += ["--curve", p]
    assert run("hertz", "--out", tmp_path / "o", *paths) == 0
    rep = json.loads((tmp_path / "o" / "hertz_fit.json").read_text())
    assert round(rep["mean_E2_kPa"], 2) == 128.91
    assert len(manifest(tmp_path / "o")["inputs"]) == 3


# ------------------------------------------------------------- full chain
def test_simulate_calibrate_train_reconstruct_chain(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--out", sim, "--resolution", 96, "--seed", 2) == 0
    cal = json.loads((sim / "calibration" / "manifest.json").read_text())
    assert cal["n_samples"] == 147
    objs = json.loads((sim / "objects" / "objects.json").read_text())["objects"]
    assert len(objs) == 8

    # byte-identical objects for the same seed
    again = tmp_path / "sim2"
    assert run("simulate", "--out", again, "--resolution", 96, "--seed", 2, "--calibration", "false") == 0
    m1, m2 = manifest(sim)["outputs"], manifest(again)["outputs"]
    shared = set(m1) & set(m2)
    assert len(shared) == 8 * 3 + 1 and all(m1[k] == m2[k] for k in shared)

    assert run("calibrate", "--out", tmp_path / "cal", "--resolution", 96, "--seed", 2) == 0
    ds = tmp_path / "cal" / "dataset" / "manifest.json"
    assert json.loads(ds.read_text())["n_samples"] == 144
    tr = tmp_path / "tr"
    assert run("train", "--out", tr, "--dataset", ds, "--epochs", 1, "--channels", 4, "--blocks", 1) == 0
    ev = json.loads((tr / "eval.json").read_text())
    assert 0 <= ev["test_masked_cosine_loss"] <= 2

    stem = objs[3]["stem"]
    rec = tmp_path / "rec"
    assert run("reconstruct", "--out", rec, "--weights", tr / "weights.bin",
               "--image", sim / "objects" / f"{stem}_image.raster",
               "--untouched", sim / "objects" / f"{stem}_untouched.raster") == 0
    from tactilemap.core import load_raster

    h = load_raster(rec / "height.raster")
    assert h.data.shape == (96 - 12, 96 - 12)
    assert set(manifest(rec)["outputs"]) == {"height.raster", "height.png"}
