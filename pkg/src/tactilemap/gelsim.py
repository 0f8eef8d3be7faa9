"""Synthetic gel renderer used as a ground-truth oracle.

Heights follow the gel-surface convention: z points out of the gel towards
the contacting object, so an indenter leaves a negative dent and channel
grooves sit at ``-depth``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import HeightMap, SensorGeometry, TactileImage


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def default_directions(elevation_deg=45.0, azimuths_deg=(0.0, 120.0, 240.0)):
    el = np.deg2rad(elevation_deg)
    rows = []
    for az in np.deg2rad(azimuths_deg):
        rows.append([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return np.array(rows)


@dataclass
class LightingModel:
    """Three coloured lights, one per channel (R, G, B).

    ``gain`` may be an explicit (rows, cols, 3) array; when None a radial
    falloff ``1 - falloff * (rho / rho_max)**2`` is generated for the raster
    being rendered.
    """

    directions: np.ndarray = field(default_factory=default_directions)
    ambient: tuple = (0.1, 0.1, 0.1)
    falloff: float = 0.2
    gain: np.ndarray | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.shape != (3, 3):
            raise ValueError("need one 3-vector light direction per channel")
        self.directions = d / np.linalg.norm(d, axis=1, keepdims=True)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.falloff < 1:
            raise ValueError("falloff must lie in [0, 1)")

    def gain_map(self, shape):
        if self.gain is not None:
            g = np.asarray(self.gain, dtype=np.float64)
            if g.shape[:2] != tuple(shape):
                raise ValueError("gain map shape does not match raster")
            return g if g.ndim == 3 else np.repeat(g[..., None], 3, axis=2)
        h, w = shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        rho2 = (yy - cy) ** 2 + (xx - cx) ** 2
        g = 1.0 - self.falloff * rho2 / max(rho2.max(), 1e-12)
        return np.repeat(g[..., None], 3, axis=2)

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if "directions" in kw:
            kw["directions"] = np.asarray(kw["directions"], dtype=np.float64)
        elif "elevation_deg" in kw or "azimuths_deg" in kw:
            kw["directions"] = default_directions(
                kw.pop("elevation_deg", 45.0), tuple(kw.pop("azimuths_deg", (0.0, 120.0, 240.0)))
            )
        if "ambient" in kw:
            kw["ambient"] = tuple(kw["ambient"])
        return cls(**kw)

    def to_dict(self):
        return {
            "directions": self.directions.tolist(),
            "ambient": list(self.ambient),
            "falloff": self.falloff,
            "noise_sigma": self.noise_sigma,
        }


def height_normals(h_um, mm_per_pixel):
    """Unit normals (…, 3) of a height field via central differences.

    Slopes are dimensionless (µm of height per µm of lateral travel).
    """
    step = mm_per_pixel * 1000.0
    gy, gx = np.gradient(np.asarray(h_um, dtype=np.float64), step)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def shade(normals, lights, shape=None):
    """Noise-free Lambertian intensities for a (rows, cols, 3) normal field."""
    normals = np.asarray(normals, dtype=np.float64)
    shape = normals.shape[:2] if shape is None else shape
    lam = np.maximum(0.0, normals @ lights.directions.T)
    return lights.gain_map(shape) * lam + np.asarray(lights.ambient, dtype=np.float64)


def render(height, lights, rng_seed=None):
    """Render a tactile image of ``height`` under ``lights``.

    ``rng_seed`` may be an int, a ``numpy.random.Generator`` or None; with
    ``lights.noise_sigma == 0`` the seed has no effect.
    """
    n = height_normals(height.data, height.mm_per_pixel)
    img = shade(n, lights)
    if lights.noise_sigma > 0:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        img = img + rng.normal(0.0, lights.noise_sigma, size=img.shape)
    return TactileImage(np.clip(img, 0.0, 1.0), height.mm_per_pixel)


def contact_radius_mm(radius_mm, depth_mm):
    return float(np.sqrt(radius_mm ** 2 - (radius_mm - depth_mm) ** 2))


def sphere_imprint_um(center_px, radius_mm, depth_mm, shape, mm_per_pixel):
    """float64 dent of a rigid sphere pressed ``depth_mm`` into a flat gel."""
    if depth_mm < 0:
        raise ValueError("depth must be >= 0")
    if depth_mm > radius_mm:
        raise ValueError("indentation depth cannot exceed the indenter radius")
    h, w = shape
    out = np.zeros(shape, dtype=np.float64)
    if depth_mm == 0:
        return out
    a = contact_radius_mm(radius_mm, depth_mm)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rho2 = ((yy - center_px[0]) ** 2 + (xx - center_px[1]) ** 2) * mm_per_pixel ** 2
    inside = rho2 <= a * a
    cap = radius_mm - np.sqrt(np.maximum(radius_mm ** 2 - rho2[inside], 0.0))
    out[inside] = -(depth_mm - cap) * 1000.0
    return out


def sphere_imprint(center_px, indenter_radius_mm, depth_mm, geom=SensorGeometry(), shape=None):
    shape = (geom.crop_size, geom.crop_size) if shape is None else tuple(shape)
    data = sphere_imprint_um(center_px, indenter_radius_mm, depth_mm, shape, geom.mm_per_pixel)
    return HeightMap(data, geom.mm_per_pixel)


@dataclass(frozen=True)
class ChannelObjectSpec:
    """Rectangular-profile grooves; gap between grooves equals their width.

    ``orientation`` applies to straight layouts: "vertical" grooves run along
    the columns (the profile varies with x), "horizontal" along the rows.
    """

    layout: str
    channel_width_um: float
    depth_um: float
    orientation: str = "vertical"
    center_px: tuple | None = None

    def __post_init__(self):
        if self.layout not in ("straight", "circular"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if not self.channel_width_um > 0:
            raise ValueError("channel width must be positive")
        if self.depth_um < 0:
            raise ValueError("depth must be >= 0")
        if self.orientation not in ("vertical", "horizontal"):
            raise ValueError(f"unknown orientation {self.orientation!r}")

    @property
    def channel_pitch_um(self):
        return 2.0 * self.channel_width_um

    def to_dict(self):
        d = {
            "layout": self.layout,
            "channel_width_um": self.channel_width_um,
            "depth_um": self.depth_um,
            "orientation": self.orientation,
        }
        if self.center_px is not None:
            d["center_px"] = list(self.center_px)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if kw.get("center_px") is not None:
            kw["center_px"] = tuple(kw["center_px"])
        return cls(**kw)


def channel_object(spec, geom=SensorGeometry(), shape=None):
    """Height field of a channel object filling the whole raster."""
    shape = (geom.crop_size, geom.crop_size) if shape is None else tuple(shape)
    h, w = shape
    center = spec.center_px if spec.center_px is not None else ((h - 1) / 2.0, (w - 1) / 2.0)
    width_mm = spec.channel_width_um / 1000.0
    if spec.layout == "straight":
        if spec.orientation == "vertical":
            coord = (np.arange(w) - center[1]) * geom.mm_per_pixel
            band = np.broadcast_to(np.floor(coord / width_mm)[None, :], shape)
        else:
            coord = (np.arange(h) - center[0]) * geom.mm_per_pixel
            band = np.broadcast_to(np.floor(coord / width_mm)[:, None], shape)
    else:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        r = np.hypot(yy - center[0], xx - center[1]) * geom.mm_per_pixel
        band = np.floor(r / width_mm)
    groove = np.mod(band, 2) == 1
    return HeightMap(np.where(groove, -float(spec.depth_um), 0.0), geom.mm_per_pixel)


VALIDATION_DEPTHS_UM = (24.0, 48.0, 72.0, 96.0)
TEST_DEPTHS_UM = (12.0, 36.0, 60.0, 84.0)
VALIDATION_WIDTH_UM = 500.0
TEST_WIDTH_UM = 350.0


def standard_objects(orientation="vertical"):
    """The four straight validation and four circular test objects."""
    objs = [ChannelObjectSpec("straight", VALIDATION_WIDTH_UM, d, orientation) for d in VALIDATION_DEPTHS_UM]
    objs += [ChannelObjectSpec("circular", TEST_WIDTH_UM, d) for d in TEST_DEPTHS_UM]
    return objs


@dataclass
class VirtualProbe:
    """Simulated indenting rig: a sphere above a gel at a fixed (row, col).

    ``z_mm`` is the indenter tip height; the gel surface under the tip sits
    at ``surface_z_mm``. Contact depth is ``max(0, surface_z_mm - z_mm)``.
    """

    gel: HeightMap
    radius_mm: float
    center_px: tuple
    lights: LightingModel = field(default_factory=LightingModel)
    z_mm: float = 1.0
    surface_z_mm: float = 0.0
    seed: int | None = 0
    frames_captured: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    @property
    def depth_mm(self):
        return max(0.0, self.surface_z_mm - self.z_mm)

    def move_to(self, z_mm):
        self.z_mm = float(z_mm)

    def move_by(self, dz_mm):
        self.z_mm = float(self.z_mm + dz_mm)

    def surface(self, depth_mm=None):
        depth = self.depth_mm if depth_mm is None else depth_mm
        depth = min(depth, self.radius_mm)
        dent = sphere_imprint_um(self.center_px, self.radius_mm, depth, self.gel.data.shape, self.gel.mm_per_pixel)
        return HeightMap(self.gel.data + dent, self.gel.mm_per_pixel)

    def capture(self, n=1):
        if n < 1:
            raise ValueError("n must be >= 1")
        surf = self.surface()
        normals = height_normals(surf.data, surf.mm_per_pixel)
        clean = shade(normals, self.lights)
        frames = []
        for _ in range(n):
            img = clean
            if self.lights.noise_sigma > 0:
                img = clean + self._rng.normal(0.0, self.lights.noise_sigma, size=clean.shape)
            frames.append(TactileImage(np.clip(img, 0.0, 1.0), surf.mm_per_pixel))
        self.frames_captured += n
        return frames


def probe_capture(probe, n):
    return probe.capture(n)
