"""End-to-end helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np

from . import channels, gelsim
from .core import MM_PER_PIXEL, HeightMap, SensorGeometry, TactileImage
from .recon import ReconConfig, normals_to_height, reconstruct


def render_pair(height, lights, seed=0, frames=5):
    """(contact image, untouched median image) for a gel surface."""
    rng = np.random.default_rng(seed)
    img = gelsim.render(height, lights, rng)
    flat = HeightMap(np.zeros(height.data.shape), height.mm_per_pixel)
    stack = np.stack([gelsim.render(flat, lights, rng).data for _ in range(frames)])
    return img, TactileImage(np.median(stack, axis=0), height.mm_per_pixel)


def render_object(spec, geom=SensorGeometry(), lights=None, seed=0):
    lights = gelsim.LightingModel(noise_sigma=0.002) if lights is None else lights
    h = gelsim.channel_object(spec, geom)
    return (h,) + render_pair(h, lights, seed)


def section_spacing(geom):
    """100 px at full resolution, scaled to keep the same physical spacing."""
    return max(1, int(round(100 * MM_PER_PIXEL / geom.mm_per_pixel)))


def object_profiles(height, spec, geom=SensorGeometry(), border=None):
    """Cross-sections of a (border-cropped) reconstruction of ``spec``."""
    border = geom.border_crop if border is None else border
    if spec.layout == "straight":
        return channels.straight_sections(height, section_spacing(geom), spec.orientation)
    rows, cols = height.data.shape
    full = geom.crop_size
    c = spec.center_px if spec.center_px is not None else ((full - 1) / 2.0, (full - 1) / 2.0)
    center = (min(max(c[0] - border, 0), rows - 1), min(max(c[1] - border, 0), cols - 1))
    return channels.circular_sections(height, center, 15.0)


def measure_object(height, spec, geom=SensorGeometry(), cfg=None, border=None):
    cfg = channels.DetectorConfig.for_channels(spec.channel_width_um, geom.mm_per_pixel) if cfg is None else cfg
    return channels.depth_stats(object_profiles(height, spec, geom, border), cfg)


def evaluate_objects(weights, geom=SensorGeometry(), objects=None, lights=None, seed=0, recon_cfg=None):
    """Render, reconstruct and measure each channel object.

    Returns one dict per object with the designed depth and measured stats.
    """
    objects = gelsim.standard_objects() if objects is None else objects
    recon_cfg = ReconConfig.for_geometry(geom) if recon_cfg is None else recon_cfg
    out = []
    for i, spec in enumerate(objects):
        _, img, flat = render_object(spec, geom, lights, seed + i)
        h = reconstruct(weights, img, flat, recon_cfg)
        st = measure_object(h, spec, geom, border=recon_cfg.border_crop)
        out.append({"spec": spec.to_dict(), "designed_um": spec.depth_um, "stats": st.to_dict(),
                    "error_um": st.mean - spec.depth_um})
    return out


def oracle_height(spec, geom=SensorGeometry(), recon_cfg=None):
    """Reconstruction from the exact rendering normals (no network)."""
    recon_cfg = ReconConfig.for_geometry(geom) if recon_cfg is None else recon_cfg
    h = gelsim.channel_object(spec, geom)
    n = gelsim.height_normals(h.data, geom.mm_per_pixel)
    return normals_to_height(n, recon_cfg)
