"""Indentation calibration protocol: grid plan, touch detection, labels."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import HeightMap, NormalMap, SensorGeometry, TactileImage, load_raster, save_raster
from .gelsim import LightingModel, VirtualProbe

log = logging.getLogger(__name__)

GRID_MM = (-4.5, -3.0, -1.5, 0.0, 1.5, 3.0, 4.5)
INDENTER_RADII_MM = (0.5, 0.875, 1.25)


class NoContactError(RuntimeError):
    pass


class OutOfFrameError(ValueError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"propagated centers outside the raster at plan indices {self.indices}")


@dataclass(frozen=True)
class GridPlan:
    positions: tuple = tuple(itertools.product(GRID_MM, GRID_MM))
    indenter_radius: float = 1.25

    def __post_init__(self):
        if not self.positions:
            raise ValueError("plan needs at least one position")


def paper_plan(indenter_radius):
    return GridPlan(tuple(itertools.product(GRID_MM, GRID_MM)), indenter_radius)


@dataclass(frozen=True)
class TouchParams:
    down_step_mm: float = 0.050
    up_step_mm: float = 0.015
    frames_per_reading: int = 5
    crop_px: int = 300
    touch_factor: float = 1.1
    untouch_factor: float = 0.7
    max_travel_mm: float = 5.0

    def __post_init__(self):
        for name in ("down_step_mm", "up_step_mm", "frames_per_reading", "crop_px",
                     "touch_factor", "untouch_factor", "max_travel_mm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.up_step_mm < self.down_step_mm:
            raise ValueError("up_step must be smaller than down_step")

    def scaled(self, factor):
        """Crop size rescaled for a raster ``factor`` times coarser."""
        return TouchParams(
            self.down_step_mm, self.up_step_mm, self.frames_per_reading,
            max(8, int(round(self.crop_px / factor))), self.touch_factor,
            self.untouch_factor, self.max_travel_mm,
        )


def _window(center_px, size, shape):
    half = size // 2
    r0 = int(round(center_px[0])) - half
    c0 = int(round(center_px[1])) - half
    r0 = min(max(r0, 0), max(shape[0] - size, 0))
    c0 = min(max(c0, 0), max(shape[1] - size, 0))
    return r0, min(r0 + size, shape[0]), c0, min(c0 + size, shape[1])


def _mse(a, b):
    d = a - b
    return float(np.mean(d * d))


@dataclass
class TouchTrace:
    e_untouched: float = 0.0
    t_touch: float = 0.0
    e_final: float = 0.0
    t_untouch: float = 0.0
    z_history: list = field(default_factory=list)


def detect_touch(probe, params=TouchParams(), trace=None):
    """Lower the probe until contact, then back off until release.

    Returns the indenter height (mm) at which the image stream first looks
    untouched again. ``probe`` needs ``capture(n)``, ``move_by(dz)``,
    ``z_mm`` and ``center_px``; frames are compared on a ``crop_px`` square
    around ``center_px``.
    """
    k = params.frames_per_reading

    def grab():
        frames = probe.capture(k)
        r0, r1, c0, c1 = _window(probe.center_px, params.crop_px, frames[0].data.shape)
        return [f.data[r0:r1, c0:c1].astype(np.float64) for f in frames]

    ref_frames = grab()
    reference = np.median(np.stack(ref_frames), axis=0)
    e_untouched = float(np.median([_mse(a, b) for a, b in itertools.combinations(ref_frames, 2)]))
    t_touch = params.touch_factor * e_untouched

    def reading():
        return float(np.median([_mse(f, reference) for f in grab()]))

    tr = trace if trace is not None else TouchTrace()
    tr.e_untouched, tr.t_touch = e_untouched, t_touch
    travelled = 0.0
    while True:
        if travelled + params.down_step_mm > params.max_travel_mm + 1e-12:
            raise NoContactError(
                f"no contact within {params.max_travel_mm} mm of travel "
                f"(threshold {t_touch:.3g}, last z {probe.z_mm:.4f} mm)"
            )
        probe.move_by(-params.down_step_mm)
        travelled += params.down_step_mm
        tr.z_history.append(probe.z_mm)
        e_curr = reading()
        if e_curr > t_touch:
            break
    tr.e_final = e_curr
    tr.t_untouch = params.untouch_factor * e_curr
    max_up = int(np.ceil(travelled / params.up_step_mm)) + 2
    for _ in range(max_up):
        probe.move_by(params.up_step_mm)
        tr.z_history.append(probe.z_mm)
        if reading() < tr.t_untouch:
            return probe.z_mm
    raise NoContactError("release never detected while backing off")


def gt_normals_for_sphere(center_px, radius_px, dims, mm_per_pixel=0.0077, rim_fraction=0.999):
    """Ground-truth normals of a dent left by a sphere pressed one radius deep.

    Inside the contact disk the normal is ``(-(x-cx)/R, -(y-cy)/R, sqrt(1-rho^2/R^2))``;
    the rim annulus beyond ``rim_fraction*R`` reuses the direction at that
    radius. Outside the disk the normal is (0, 0, 1).
    """
    if not radius_px > 0:
        raise ValueError("radius_px must be positive")
    h, w = dims
    if not (0 <= center_px[0] < h and 0 <= center_px[1] < w):
        raise ValueError("center must lie inside the raster")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - center_px[1]
    dy = yy - center_px[0]
    rho = np.hypot(dx, dy)
    inside = rho <= radius_px
    cap = rim_fraction * radius_px
    scale = np.where(rho > cap, cap / np.maximum(rho, 1e-300), 1.0)
    ux = dx * scale / radius_px
    uy = dy * scale / radius_px
    uz = np.sqrt(np.maximum(1.0 - ux * ux - uy * uy, 0.0))
    n = np.zeros((h, w, 3))
    n[..., 2] = 1.0
    n[inside, 0] = -ux[inside]
    n[inside, 1] = -uy[inside]
    n[inside, 2] = uz[inside]
    return NormalMap.from_vectors(n, mm_per_pixel)


def propagate_centers(center0_px, plan, mm_per_px, dims=None):
    """Pixel centers of every plan position from the labelled (0, 0) center.

    Plan +x maps to +column and +y to +row.
    """
    out = [
        (center0_px[0] + y / mm_per_px, center0_px[1] + x / mm_per_px)
        for x, y in plan.positions
    ]
    if dims is not None:
        bad = [i for i, (r, c) in enumerate(out) if not (0 <= r < dims[0] and 0 <= c < dims[1])]
        if bad:
            raise OutOfFrameError(bad)
    return out


def build_mask(center_px, box_halfwidth, gamma, rng, dims):
    """Square of ones around the indentation plus random outside pixels.

    The number of random outside ones is ``round(gamma * rows * cols)``,
    capped by how many outside pixels exist.
    """
    h, w = dims
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = np.zeros((h, w), dtype=bool)
    r, c = int(round(center_px[0])), int(round(center_px[1]))
    hw = int(box_halfwidth)
    mask[max(r - hw, 0):min(r + hw + 1, h), max(c - hw, 0):min(c + hw + 1, w)] = True
    outside = np.flatnonzero(~mask.ravel())
    n_extra = min(int(round(gamma * h * w)), outside.size)
    if n_extra:
        mask.ravel()[rng.choice(outside, size=n_extra, replace=False)] = True
    return mask


@dataclass(eq=False)
class IndentationSample:
    image: TactileImage
    untouched: TactileImage
    gt_normals: NormalMap
    mask: np.ndarray
    center_px: tuple
    indenter_radius_px: float
    radius_mm: float = 0.0
    position_mm: tuple = (0.0, 0.0)
    label_source: bool = False
    touch_error_um: float = 0.0

    def __post_init__(self):
        shape = self.image.data.shape
        if self.untouched.data.shape != shape or self.gt_normals.data.shape != shape:
            raise ValueError("sample rasters must share dimensions")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != shape[:2]:
            raise ValueError("mask must match raster dimensions")


@dataclass
class CalibrationRig:
    """Virtual stand-in for the indenting printer and sensor.

    ``surface_jitter_mm`` makes the true gel surface height differ per grid
    position, so touch detection has something to find.
    """

    geom: SensorGeometry = field(default_factory=SensorGeometry)
    lights: LightingModel = field(default_factory=lambda: LightingModel(noise_sigma=0.002))
    clearance_mm: float = 0.2
    surface_jitter_mm: float = 0.05
    seed: int = 0

    @property
    def dims(self):
        return (self.geom.crop_size, self.geom.crop_size)

    def nominal_center(self):
        return ((self.geom.crop_size - 1) / 2.0, (self.geom.crop_size - 1) / 2.0)

    def probe(self, center_px, radius_mm, surface_z_mm, seed):
        gel = HeightMap(np.zeros(self.dims), self.geom.mm_per_pixel)
        return VirtualProbe(gel, radius_mm, center_px, self.lights, z_mm=self.clearance_mm,
                            surface_z_mm=surface_z_mm, seed=seed)


def build_dataset(rig, radii_mm=INDENTER_RADII_MM, params=None, gamma=0.05, center0_px=None,
                  positions=None):
    """Run the full indentation protocol on the virtual rig.

    For each radius and grid position: detect touch, indent by the radius,
    capture the image, and pair it with the untouched median image, the
    ground-truth normals at the propagated label and a loss mask.
    """
    geom = rig.geom
    if params is None:
        params = TouchParams().scaled(1500 / geom.crop_size)
    center0 = rig.nominal_center() if center0_px is None else center0_px
    rng = np.random.default_rng(rig.seed)
    samples = []
    for radius in radii_mm:
        plan = GridPlan(tuple(positions) if positions is not None else GridPlan().positions, radius)
        centers = propagate_centers(center0, plan, geom.mm_per_pixel, rig.dims)
        r_px = radius / geom.mm_per_pixel
        for (x, y), c in zip(plan.positions, centers):
            surface = float(rng.uniform(-rig.surface_jitter_mm, rig.surface_jitter_mm))
            probe = rig.probe(c, radius, surface, int(rng.integers(2 ** 31)))
            untouched = np.median(np.stack([f.data for f in probe.capture(params.frames_per_reading)]), axis=0)
            z_touch = detect_touch(probe, params)
            probe.move_to(z_touch - radius)
            image = probe.capture(1)[0]
            gt = gt_normals_for_sphere(c, r_px, rig.dims, geom.mm_per_pixel)
            mask = build_mask(c, int(np.ceil(1.2 * r_px)), gamma, rng, rig.dims)
            samples.append(IndentationSample(
                image=image,
                untouched=TactileImage(untouched, geom.mm_per_pixel),
                gt_normals=gt,
                mask=mask,
                center_px=c,
                indenter_radius_px=r_px,
                radius_mm=radius,
                position_mm=(x, y),
                label_source=(x == 0 and y == 0),
                touch_error_um=(z_touch - surface) * 1000.0,
            ))
            log.debug("radius %.3f pos (%.1f, %.1f) touch error %.1f um",
                      radius, x, y, samples[-1].touch_error_um)
    return samples


def paper_view(samples):
    """Drop the label-source frame of each radius (3 x 49 -> 144)."""
    return [s for s in samples if not s.label_source]


def split_indices(n, test_fraction=0.1, seed=0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def save_dataset(samples, out_dir, split=None, seed=None):
    """Write sample rasters plus a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = split if split is not None else (list(range(len(samples))), [])
    test = set(test)
    entries = []
    for i, s in enumerate(samples):
        stem = f"sample_{i:03d}"
        paths = {}
        for key, raster in (("image", s.image), ("untouched", s.untouched), ("gt_normals", s.gt_normals)):
            p = out / f"{stem}_{key}.raster"
            save_raster(p, raster)
            paths[key] = p.name
        mpath = out / f"{stem}_mask.raster"
        save_raster(mpath, HeightMap(s.mask.astype(np.float32), s.image.mm_per_pixel))
        paths["mask"] = mpath.name
        entries.append({
            "id": i,
            **paths,
            "center_px": list(s.center_px),
            "indenter_radius_px": s.indenter_radius_px,
            "radius_mm": s.radius_mm,
            "position_mm": list(s.position_mm),
            "label_source": s.label_source,
            "touch_error_um": s.touch_error_um,
            "split": "test" if i in test else "train",
        })
    manifest = {"kind": "calibration-dataset", "seed": seed, "n_samples": len(samples), "samples": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(manifest_path):
    """Inverse of :func:`save_dataset`; returns (samples, train_ids, test_ids)."""
    path = Path(manifest_path)
    root = path.parent
    manifest = json.loads(path.read_text())
    samples, train, test = [], [], []
    for e in manifest["samples"]:
        mask = load_raster(root / e["mask"]).data > 0.5
        samples.append(IndentationSample(
            image=load_raster(root / e["image"]),
            untouched=load_raster(root / e["untouched"]),
            gt_normals=load_raster(root / e["gt_normals"]),
            mask=mask,
            center_px=tuple(e["center_px"]),
            indenter_radius_px=e["indenter_radius_px"],
            radius_mm=e["radius_mm"],
            position_mm=tuple(e["position_mm"]),
            label_source=e["label_source"],
            touch_error_um=e.get("touch_error_um", 0.0),
        ))
        (test if e["split"] == "test" else train).append(len(samples) - 1)
    return samples, train, test
