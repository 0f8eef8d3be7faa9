"""Normals -> height: periodic FFT Poisson integration, detrend, border crop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MM_PER_PIXEL, HeightMap, NormalMap, SensorGeometry


@dataclass(frozen=True)
class ReconConfig:
    cutoff: float = 0.002          # cycles / pixel
    border_crop: int = 100         # pixels per side
    pixel_pitch: float = MM_PER_PIXEL
    method: str = "spectral"       # or "discrete" (central-difference symbols)
    max_tilt_deg: float | None = 85.0  # steepest surface tilt passed to the integrator

    def __post_init__(self):
        if not 0 < self.cutoff < 0.5:
            raise ValueError("cutoff must lie in (0, 0.5)")
        if self.border_crop < 0:
            raise ValueError("border_crop must be >= 0")
        if self.method not in ("spectral", "discrete"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_tilt_deg is not None and not 0 < self.max_tilt_deg < 90:
            raise ValueError("max_tilt_deg must lie in (0, 90)")

    @classmethod
    def for_geometry(cls, geom, base=None):
        """Scale the cutoff and crop so they keep their physical meaning."""
        base = cls() if base is None else base
        scale = geom.mm_per_pixel / base.pixel_pitch
        return cls(
            cutoff=min(base.cutoff * scale, 0.49),
            border_crop=geom.border_crop,
            pixel_pitch=geom.mm_per_pixel,
            method=base.method,
            max_tilt_deg=base.max_tilt_deg,
        )


def _wavenumbers(shape):
    """Angular wavenumbers (rad/pixel) for signed integer k in (-N/2, N/2]."""
    h, w = shape
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    # numpy puts the Nyquist bin at -1/2; the convention here is +1/2
    if h % 2 == 0:
        fy[h // 2] = 0.5
    if w % 2 == 0:
        fx[w // 2] = 0.5
    return 2 * np.pi * fy[:, None], 2 * np.pi * fx[None, :]


def integrate_gradients(p, q, method="spectral"):
    """Zero-mean least-squares height whose gradient is (p, q) per pixel.

    ``p`` is d/dcol and ``q`` is d/drow, both in height units per pixel.
    Boundaries are periodic.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    ky, kx = _wavenumbers(p.shape)
    if method == "discrete":
        sx, sy = np.sin(kx), np.sin(ky)
    else:
        sx, sy = kx, ky
    denom = sx * sx + sy * sy
    num = -1j * sx * np.fft.fft2(p) - 1j * sy * np.fft.fft2(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        hk = np.where(denom > 1e-12, num / np.where(denom > 1e-12, denom, 1.0), 0.0)
    hk[0, 0] = 0.0
    h = np.fft.ifft2(hk).real
    return h - h.mean()


def normals_to_gradients(n, pitch_mm):
    """Per-pixel height gradients in µm from unit normals."""
    n = np.asarray(n, dtype=np.float64)
    nz = n[..., 2]
    if np.any(nz <= 0):
        raise ValueError("normals must have nz > 0 everywhere")
    step_um = pitch_mm * 1000.0
    return -n[..., 0] / nz * step_um, -n[..., 1] / nz * step_um


def integrate_normals(n, pitch=None, method="spectral"):
    """Height map (µm) of a normal map via periodic FFT Poisson integration."""
    data = n.data if isinstance(n, NormalMap) else np.asarray(n)
    pitch = (n.mm_per_pixel if isinstance(n, NormalMap) else MM_PER_PIXEL) if pitch is None else pitch
    p, q = normals_to_gradients(data, pitch)
    return HeightMap(integrate_gradients(p, q, method), pitch)


def highpass(h, cutoff):
    """Zero every Fourier bin with radial frequency below ``cutoff``."""
    h = np.asarray(h, dtype=np.float64)
    ky, kx = _wavenumbers(h.shape)
    f = np.hypot(kx, ky) / (2 * np.pi)
    spec = np.fft.fft2(h)
    spec[f < cutoff] = 0.0
    return np.fft.ifft2(spec).real


def highpass_detrend(h, cutoff=0.002):
    if isinstance(h, HeightMap):
        return HeightMap(highpass(h.data, cutoff), h.mm_per_pixel)
    return highpass(h, cutoff)


def crop_border(h, border):
    if border == 0:
        return h
    data = h.data if isinstance(h, HeightMap) else h
    out = data[border:-border, border:-border]
    if out.size == 0:
        raise ValueError("border crop removes the whole raster")
    return HeightMap(out, h.mm_per_pixel) if isinstance(h, HeightMap) else out


def limit_tilt(p, q, max_tilt_deg, pitch_mm):
    """Shrink gradient vectors steeper than ``max_tilt_deg`` onto that bound.

    A near-horizontal normal (nz -> 0) maps to an unbounded slope, and one
    such pixel spreads across the whole map under spectral integration.
    """
    lim = np.tan(np.deg2rad(max_tilt_deg)) * pitch_mm * 1000.0
    mag = np.hypot(p, q)
    scale = np.minimum(1.0, lim / np.maximum(mag, 1e-300))
    return p * scale, q * scale


def normals_to_height(n, cfg=ReconConfig()):
    """integrate -> detrend -> crop for an already-estimated normal map."""
    data = n.data if isinstance(n, NormalMap) else np.asarray(n)
    p, q = normals_to_gradients(data, cfg.pixel_pitch)
    if cfg.max_tilt_deg is not None:
        p, q = limit_tilt(p, q, cfg.max_tilt_deg, cfg.pixel_pitch)
    h = highpass(integrate_gradients(p, q, cfg.method), cfg.cutoff)
    return crop_border(HeightMap(h, cfg.pixel_pitch), cfg.border_crop)


def reconstruct(weights, image, untouched, cfg=ReconConfig()):
    from .net import infer_normals

    return normals_to_height(infer_normals(weights, image, untouched), cfg)


def default_config(geom=SensorGeometry()):
    return ReconConfig.for_geometry(geom)
