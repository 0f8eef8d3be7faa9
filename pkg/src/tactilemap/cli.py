"""``tactilemap`` command line: one subcommand per pipeline stage.

Every subcommand resolves its settings as flags > ``--config`` JSON >
defaults, writes its outputs under ``--out`` and finishes with a
``manifest.json`` recording inputs, resolved config, its hash, the seed,
output hashes and library versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, _accel

log = logging.getLogger("tactilemap")


class CLIError(Exception):
    pass


# ------------------------------------------------------------------ helpers
def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import scipy

    numba_version = _accel.numba.__version__ if _accel.numba is not None else None
    return {"tactilemap": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba_version, "backend": _accel.backend()}


def _config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def resolve(defaults, file_cfg, flags):
    """flags (non-None) > file > defaults, restricted to the default keys."""
    out = dict(defaults)
    for src in (file_cfg or {}, flags):
        for k, v in src.items():
            if k in defaults and v is not None:
                out[k] = v
    return out


def _load_config(path, section):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"bad config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CLIError("config file must hold a JSON object")
    # either a flat mapping or one section per subcommand
    return data.get(section, data) if isinstance(data.get(section), dict) else data


def _require(path, what):
    if path is None:
        raise CLIError(f"missing required {what}")
    if not Path(path).exists():
        raise CLIError(f"{what} not found: {path}")
    return Path(path)


def _write_manifest(out, command, cfg, inputs, outputs):
    out = Path(out)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {Path(p).name: _sha256(p) for p in sorted(map(str, outputs))},
        "versions": _versions(),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _geometry(resolution):
    from .core import SensorGeometry

    geom = SensorGeometry()
    return geom if resolution in (None, geom.crop_size) else geom.at_resolution(int(resolution))


# --------------------------------------------------------------- commands
SIMULATE_DEFAULTS = {"seed": 0, "resolution": 256, "noise_sigma": 0.002, "calibration": True,
                     "objects": None, "surface_jitter_mm": 0.05}


def cmd_simulate(args, cfg):
    """Render the calibration set and the channel objects."""
    from . import gelsim, pipeline
    from .calibration import CalibrationRig, build_dataset, save_dataset
    from .core import save_raster

    out = Path(args.out)
    geom = _geometry(cfg["resolution"])
    lights = gelsim.LightingModel(noise_sigma=cfg["noise_sigma"])
    outputs = []
    if cfg["calibration"]:
        rig = CalibrationRig(geom=geom, lights=lights, surface_jitter_mm=cfg["surface_jitter_mm"],
                             seed=cfg["seed"])
        samples = build_dataset(rig)
        mpath = save_dataset(samples, out / "calibration", seed=cfg["seed"])
        outputs += sorted((out / "calibration").iterdir())
        log.info("wrote %d calibration samples to %s", len(samples), mpath.parent)
    specs = gelsim.standard_objects() if cfg["objects"] is None else [
        gelsim.ChannelObjectSpec.from_dict(d) for d in cfg["objects"]]
    objdir = out / "objects"
    objdir.mkdir(parents=True, exist_ok=True)
    index = []
    for i, spec in enumerate(specs):
        h, img, flat = pipeline.render_object(spec, geom, lights, cfg["seed"] + i)
        stem = f"object_{i}_{spec.layout}_{int(spec.depth_um)}um"
        for key, r in (("height", h), ("image", img), ("untouched", flat)):
            p = objdir / f"{stem}_{key}.raster"
            save_raster(p, r)
            outputs.append(p)
        index.append({"stem": stem, "spec": spec.to_dict()})
    ipath = objdir / "objects.json"
    ipath.write_text(json.dumps({"resolution": geom.crop_size, "mm_per_pixel": geom.mm_per_pixel,
                                 "border_crop": geom.border_crop, "objects": index}, indent=2))
    outputs.append(ipath)
    return [], outputs


CALIBRATE_DEFAULTS = {"seed": 0, "resolution": 256, "noise_sigma": 0.002, "surface_jitter_mm": 0.05,
                      "test_fraction": 0.1, "paper_view": True}


def cmd_calibrate(args, cfg):
    """Run the virtual indentation protocol and write a train/test dataset."""
    from . import gelsim
    from .calibration import CalibrationRig, build_dataset, paper_view, save_dataset, split_indices

    geom = _geometry(cfg["resolution"])
    rig = CalibrationRig(geom=geom, lights=gelsim.LightingModel(noise_sigma=cfg["noise_sigma"]),
                         surface_jitter_mm=cfg["surface_jitter_mm"], seed=cfg["seed"])
    samples = build_dataset(rig)
    if cfg["paper_view"]:
        samples = paper_view(samples)
    split = split_indices(len(samples), cfg["test_fraction"], cfg["seed"])
    mpath = save_dataset(samples, Path(args.out) / "dataset", split=split, seed=cfg["seed"])
    errs = np.array([s.touch_error_um for s in samples])
    log.info("%d samples; touch error %.1f..%.1f um", len(samples), errs.min(), errs.max())
    return [], sorted(mpath.parent.iterdir())


TRAIN_DEFAULTS = {"seed": 0, "epochs": 30, "lr": 1e-3, "lr_decay": 0.95, "weight_decay": 1e-5,
                  "grad_accum": 32, "blocks": 2, "channels": 64, "kernel": 3, "batch_norm": True}


def cmd_train(args, cfg):
    from .calibration import load_dataset
    from .net import NetConfig, TrainConfig, evaluate, save_weights, train, write_history

    manifest = _require(args.dataset, "--dataset manifest")
    samples, train_ids, test_ids = load_dataset(manifest)
    net_cfg = NetConfig(blocks=cfg["blocks"], channels_per_block=cfg["channels"], kernel=cfg["kernel"],
                        batch_norm=cfg["batch_norm"])
    tcfg = TrainConfig(epochs=cfg["epochs"], lr=cfg["lr"], lr_decay_per_epoch=cfg["lr_decay"],
                       weight_decay=cfg["weight_decay"], grad_accum=cfg["grad_accum"], seed=cfg["seed"])
    weights, history = train([samples[i] for i in train_ids], net_cfg, tcfg)
    out = Path(args.out)
    wpath, hpath = out / "weights.bin", out / "history.csv"
    save_weights(wpath, weights)
    write_history(hpath, history)
    outputs = [wpath, hpath]
    if test_ids:
        loss = evaluate(weights, [samples[i] for i in test_ids])
        epath = out / "eval.json"
        epath.write_text(json.dumps({"test_masked_cosine_loss": loss, "n_test": len(test_ids)}, indent=2))
        outputs.append(epath)
        log.info("held-out masked cosine loss %.5f", loss)
    return [manifest], outputs


RECON_DEFAULTS = {"cutoff": None, "border_crop": None, "method": "spectral", "max_tilt_deg": 85.0,
                  "png": True}


def cmd_reconstruct(args, cfg):
    from .core import load_raster, save_raster
    from .net import load_weights
    from .recon import ReconConfig, reconstruct

    wpath = _require(args.weights, "--weights")
    ipath = _require(args.image, "--image")
    upath = _require(args.untouched, "--untouched")
    img, flat = load_raster(ipath), load_raster(upath)
    scale = img.mm_per_pixel / ReconConfig().pixel_pitch
    rcfg = ReconConfig(
        cutoff=cfg["cutoff"] if cfg["cutoff"] is not None else min(0.002 * scale, 0.49),
        border_crop=cfg["border_crop"] if cfg["border_crop"] is not None else int(round(100 / scale)),
        pixel_pitch=img.mm_per_pixel,
        method=cfg["method"],
        max_tilt_deg=cfg["max_tilt_deg"],
    )
    h = reconstruct(load_weights(wpath), img, flat, rcfg)
    out = Path(args.out)
    hpath = out / "height.raster"
    save_raster(hpath, h)
    outputs = [hpath]
    if cfg["png"]:
        outputs.append(_height_png(out / "height.png", h.data))
    return [wpath, ipath, upath], outputs


def _height_png(path, data, overlay=None):
    from .core import TactileImage, save_png

    d = np.asarray(data, dtype=np.float64)
    span = np.ptp(d)
    g = (d - d.min()) / span if span > 0 else np.zeros_like(d)
    rgb = np.repeat(g[..., None], 3, axis=2)
    if overlay is not None:
        rgb[overlay] = (0.0, 0.3, 1.0)
    save_png(path, TactileImage(rgb))
    return Path(path)


CHANNELS_DEFAULTS = {"layout": "straight", "channel_width_um": 500.0, "orientation": "vertical",
                     "center_px": None, "spacing_px": None, "dtheta_deg": 15.0, "window": None,
                     "prominence_frac": 0.25, "height_source": "raw"}


def cmd_channels(args, cfg):
    from . import channels
    from .core import MM_PER_PIXEL, load_raster

    hpath = _require(args.height, "--height")
    h = load_raster(hpath)
    dcfg = channels.DetectorConfig.for_channels(
        cfg["channel_width_um"], h.mm_per_pixel, prominence_frac=cfg["prominence_frac"],
        window=cfg["window"], height_source=cfg["height_source"])
    if cfg["layout"] == "straight":
        spacing = cfg["spacing_px"] or max(1, int(round(100 * MM_PER_PIXEL / h.mm_per_pixel)))
        profiles = channels.straight_sections(h, spacing, cfg["orientation"])
    elif cfg["layout"] == "circular":
        rows, cols = h.data.shape
        center = cfg["center_px"] or ((rows - 1) / 2.0, (cols - 1) / 2.0)
        profiles = channels.circular_sections(h, center, cfg["dtheta_deg"])
    else:
        raise CLIError(f"unknown layout {cfg['layout']!r}")
    depths = channels.profile_depths(profiles, dcfg)
    stats = channels.depth_stats(profiles, dcfg)
    out = Path(args.out)
    cpath, jpath = out / "depths.csv", out / "depth_stats.json"
    channels.write_depths_csv(cpath, depths)
    channels.write_stats_json(jpath, stats, n_profiles=len(profiles))
    log.info("depth %.2f +/- %.2f um over %d pairs", stats.mean, stats.sd, stats.n)
    return [hpath], [cpath, jpath]


WRINKLES_DEFAULTS = {"seed": 0, "n_samples": 10000, "radius_px": 30, "prominence_um": 1.0,
                     "percentile": 80.0, "bins": 30, "angles": [-60.0, -30.0, 0.0, 30.0, 60.0, 90.0]}


def cmd_wrinkles(args, cfg):
    from . import wrinkles
    from .core import load_raster

    hpath = _require(args.height, "--height")
    h = load_raster(hpath)
    summary, skel = wrinkles.analyze(h, tuple(cfg["angles"]), cfg["n_samples"], cfg["radius_px"],
                                     cfg["seed"], cfg["prominence_um"], cfg["bins"], cfg["percentile"])
    out = Path(args.out)
    cpath, jpath = out / "depth_histogram.csv", out / "wrinkle_summary.json"
    wrinkles.write_histogram_csv(cpath, summary)
    wrinkles.write_summary_json(jpath, summary, skeleton_pixels=skel.count)
    ppath = _height_png(out / "valleys.png", h.data, skel.mask)
    log.info("p%g wrinkle depth %.2f um (n=%d)", summary.percentile, summary.p80, summary.n)
    return [hpath], [cpath, jpath, ppath]


HERTZ_DEFAULTS = {"radius_mm": 1.5, "nu": 0.49, "fit_offset": False}


def cmd_hertz(args, cfg):
    from . import hertz

    if not args.curve:
        raise CLIError("missing required --curve")
    paths = [_require(p, "--curve") for p in args.curve]
    fits = []
    for p in paths:
        curve = hertz.read_curve_csv(p, cfg["radius_mm"], cfg["nu"])
        fits.append(hertz.fit_modulus(curve, cfg["fit_offset"]))
    out = Path(args.out)
    jpath = out / "hertz_fit.json"
    rep = hertz.report(fits, jpath)
    log.info("mean E2 %.2f kPa over %d curves", rep["mean_E2_kPa"], len(fits))
    return paths, [jpath]


STATS_DEFAULTS = {"bonferroni_m": 3, "decimals": 4, "ddof": 0}


def cmd_stats(args, cfg):
    from . import stats

    table_path = Path(args.table) if args.table else Path(str(stats.data_path("table_s6_wrinkle_p80.csv")))
    if not table_path.is_file():
        raise CLIError(f"table not found: {table_path}")
    table = stats.wrinkle_table(str(table_path))
    rows = stats.moisturizer_report(table, cfg["bonferroni_m"])
    desc = stats.describe_table(table, ddof=cfg["ddof"])
    out = Path(args.out)
    rpath, dpath = out / "moisturizer_tests.csv", out / "descriptive.json"
    stats.write_report_csv(rpath, rows, cfg["decimals"])
    dpath.write_text(json.dumps(desc, indent=2))
    for r in rows:
        log.info("%s: chi2 %.4f p %.4f", r["location"], r["friedman_chi2"], r["friedman_p"])
    return [table_path], [rpath, dpath]


COMMANDS = {
    "simulate": (cmd_simulate, SIMULATE_DEFAULTS),
    "calibrate": (cmd_calibrate, CALIBRATE_DEFAULTS),
    "train": (cmd_train, TRAIN_DEFAULTS),
    "reconstruct": (cmd_reconstruct, RECON_DEFAULTS),
    "channels": (cmd_channels, CHANNELS_DEFAULTS),
    "wrinkles": (cmd_wrinkles, WRINKLES_DEFAULTS),
    "hertz": (cmd_hertz, HERTZ_DEFAULTS),
    "stats": (cmd_stats, STATS_DEFAULTS),
}


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


def build_parser():
    p = argparse.ArgumentParser(prog="tactilemap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (flat, or one object per subcommand)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        return sp

    sp = common(sub.add_parser("simulate", help="render calibration spheres and channel objects"))
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--calibration", type=_bool)

    sp = common(sub.add_parser("calibrate", help="virtual indentation protocol -> dataset"))
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--test-fraction", dest="test_fraction", type=float)

    sp = common(sub.add_parser("train", help="fit the normal estimator"))
    sp.add_argument("--dataset", help="calibration manifest.json")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--grad-accum", dest="grad_accum", type=int)
    sp.add_argument("--channels", type=int)
    sp.add_argument("--blocks", type=int)

    sp = common(sub.add_parser("reconstruct", help="image pair -> detrended height map"))
    sp.add_argument("--weights")
    sp.add_argument("--image")
    sp.add_argument("--untouched")
    sp.add_argument("--cutoff", type=float)
    sp.add_argument("--border-crop", dest="border_crop", type=int)
    sp.add_argument("--method", choices=["spectral", "discrete"])
    sp.add_argument("--max-tilt-deg", dest="max_tilt_deg", type=float)

    sp = common(sub.add_parser("channels", help="channel depth statistics of a height map"))
    sp.add_argument("--height")
    sp.add_argument("--layout", choices=["straight", "circular"])
    sp.add_argument("--channel-width-um", dest="channel_width_um", type=float)
    sp.add_argument("--orientation", choices=["vertical", "horizontal"])
    sp.add_argument("--center-px", dest="center_px", type=float, nargs=2)
    sp.add_argument("--spacing-px", dest="spacing_px", type=int)
    sp.add_argument("--window", type=int)

    sp = common(sub.add_parser("wrinkles", help="wrinkle valley depth distribution"))
    sp.add_argument("--height")
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--radius-px", dest="radius_px", type=float)
    sp.add_argument("--prominence-um", dest="prominence_um", type=float)
    sp.add_argument("--percentile", type=float)

    sp = common(sub.add_parser("hertz", help="Young's modulus from force curves"))
    sp.add_argument("--curve", action="append", help="CSV with displacement_mm,force_N (repeatable)")
    sp.add_argument("--radius-mm", dest="radius_mm", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--fit-offset", dest="fit_offset", type=_bool)

    sp = common(sub.add_parser("stats", help="Friedman / Wilcoxon / Bonferroni report"))
    sp.add_argument("--table", help="per-participant CSV (defaults to the bundled table)")
    sp.add_argument("--bonferroni-m", dest="bonferroni_m", type=int)
    return p


_GLOBAL = {"config", "out", "verbose", "command"}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, defaults = COMMANDS[args.command]
    try:
        _accel.apply_thread_cap()
        flags = {k: v for k, v in vars(args).items() if k not in _GLOBAL}
        cfg = resolve(defaults, _load_config(args.config, args.command), flags)
        if "seed" not in defaults:
            cfg["seed"] = args.seed
        Path(args.out).mkdir(parents=True, exist_ok=True)
        inputs, outputs = func(args, cfg)
        for o in outputs:
            if not Path(o).is_file() or Path(o).stat().st_size == 0:
                raise CLIError(f"output missing or empty: {o}")
        inputs = list(inputs) + ([args.config] if args.config else [])
        _write_manifest(args.out, args.command, cfg, inputs, outputs)
    except (CLIError, ValueError, OSError) as exc:
        print(f"tactilemap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
