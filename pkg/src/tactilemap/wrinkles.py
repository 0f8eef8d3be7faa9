"""Wrinkle valleys: angled line scans, thinning, disk-max depths, summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import find_peaks

from . import kernels
from .core import HeightMap

DEFAULT_ANGLES = (-60.0, -30.0, 0.0, 30.0, 60.0, 90.0)


class EmptySkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class ValleyMask:
    mask: np.ndarray
    skeletonized: bool = False

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be 2-D")
        if self.skeletonized and _has_block(m):
            raise ValueError("skeletonized mask contains a 2x2 block")
        object.__setattr__(self, "mask", m)

    @property
    def count(self):
        return int(self.mask.sum())


@dataclass(frozen=True)
class WrinkleSummary:
    depths: np.ndarray
    p80: float
    bin_edges: np.ndarray
    density: np.ndarray
    mean: float
    sd: float
    percentile: float = 80.0

    @property
    def n(self):
        return int(self.depths.size)

    def to_dict(self):
        return {"p80": self.p80, "percentile": self.percentile, "mean": self.mean,
                "sd": self.sd, "n": self.n}


def _has_block(m):
    return bool((m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]).any())


def _data(h):
    return h.data.astype(np.float64) if isinstance(h, HeightMap) else np.asarray(h, dtype=np.float64)


def _line_grid(shape, angle_deg):
    """Sample coordinates for every unit-spaced line at ``angle_deg``.

    Angle 0 runs along +col (a horizontal cut), 90 along +row. Returns
    (rows, cols) arrays of shape (n_lines, n_steps).
    """
    h, w = shape
    t = np.deg2rad(angle_deg)
    d = np.array([np.sin(t), np.cos(t)])      # along the line (row, col)
    nrm = np.array([d[1], -d[0]])             # across lines
    # an integer anchor keeps axis-aligned scans on pixel centres
    center = np.array([h // 2, w // 2], dtype=np.float64)
    corners = np.array([[0, 0], [0, w - 1], [h - 1, 0], [h - 1, w - 1]], float) - center
    s_proj = corners @ nrm
    t_proj = corners @ d
    s = np.arange(np.floor(s_proj.min()), np.ceil(s_proj.max()) + 1)
    tt = np.arange(np.floor(t_proj.min()), np.ceil(t_proj.max()) + 1)
    rows = center[0] + s[:, None] * nrm[0] + tt[None, :] * d[0]
    cols = center[1] + s[:, None] * nrm[1] + tt[None, :] * d[1]
    # snap float noise so axis-aligned scans hit pixel centres exactly
    return np.round(rows, 9), np.round(cols, 9)


def detect_valleys(h, angles=DEFAULT_ANGLES, prominence_um=1.0, distance_px=1):
    """Mark every pixel that is a valley on some angled cross-section.

    Each offset line at each angle is scanned once (bilinear samples at unit
    spacing); valleys are peaks of the negated profile with at least
    ``prominence_um`` prominence, rounded to the nearest pixel.
    """
    a = _data(h)
    if not np.all(np.isfinite(a)):
        raise ValueError("height map must be finite")
    rows_n, cols_n = a.shape
    mask = np.zeros(a.shape, dtype=bool)
    for ang in angles:
        rr, cc = _line_grid(a.shape, ang)
        inside = (rr >= -1e-9) & (rr <= rows_n - 1 + 1e-9) & (cc >= -1e-9) & (cc <= cols_n - 1 + 1e-9)
        vals = ndimage.map_coordinates(a, [np.clip(rr, 0, rows_n - 1), np.clip(cc, 0, cols_n - 1)],
                                       order=1, mode="nearest")
        for i in range(rr.shape[0]):
            idx = np.flatnonzero(inside[i])
            if idx.size < 3:
                continue
            # the inside run of a straight line through a rectangle is contiguous
            lo, hi = idx[0], idx[-1] + 1
            prof = vals[i, lo:hi]
            v, _ = find_peaks(-prof, prominence=prominence_um, distance=distance_px)
            if v.size:
                r = np.rint(rr[i, lo + v]).astype(int)
                c = np.rint(cc[i, lo + v]).astype(int)
                mask[np.clip(r, 0, rows_n - 1), np.clip(c, 0, cols_n - 1)] = True
    return ValleyMask(mask, skeletonized=False)


def skeletonize(mask):
    """Zhang-Suen thinning to a fixpoint with no 2x2 blocks.

    Thinning and block cleanup alternate until neither changes anything.
    Components that thinning would erase entirely (e.g. an isolated 2x2
    square) keep their first pixel in raster order.
    """
    m = mask.mask if isinstance(mask, ValleyMask) else np.asarray(mask, dtype=bool)
    img = np.ascontiguousarray(m, dtype=bool)
    while True:
        img = kernels.zhang_suen(img)
        if not kernels.clear_blocks(img):
            break
    labels, n = ndimage.label(m, structure=np.ones((3, 3)))
    if n:
        kept = np.zeros(n + 1, dtype=bool)
        kept[np.unique(labels[img])] = True
        for lab in np.flatnonzero(~kept[1:]) + 1:
            r, c = np.argwhere(labels == lab)[0]
            img[r, c] = True
    return ValleyMask(img, skeletonized=True)


def estimate_depths(h, skeleton, n_samples=10000, radius_px=30, rng=None):
    """Depth of sampled valley pixels: highest point within the disk minus the valley."""
    a = _data(h)
    m = skeleton.mask if isinstance(skeleton, ValleyMask) else np.asarray(skeleton, dtype=bool)
    pts = np.argwhere(m)
    if pts.size == 0:
        raise EmptySkeletonError("skeleton is empty")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    k = min(int(n_samples), len(pts))
    pick = pts[np.sort(rng.choice(len(pts), size=k, replace=False))]
    top = kernels.disk_max(a, pick[:, 0], pick[:, 1], radius_px)
    return top - a[pick[:, 0], pick[:, 1]]


def summarize(depths, percentile=80.0, bins=30):
    d = np.asarray(depths, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no depths to summarize")
    density, edges = np.histogram(d, bins=bins, density=np.ptp(d) > 0)
    if np.ptp(d) == 0:
        density = density / (density.sum() * (edges[1] - edges[0]))
    return WrinkleSummary(
        depths=d,
        p80=float(np.percentile(d, percentile)),
        bin_edges=edges,
        density=density,
        mean=float(d.mean()),
        sd=float(d.std(ddof=1)) if d.size > 1 and np.ptp(d) > 0 else 0.0,
        percentile=float(percentile),
    )


def analyze(h, angles=DEFAULT_ANGLES, n_samples=10000, radius_px=30, seed=0, prominence_um=1.0,
            bins=30, percentile=80.0):
    """detect -> skeletonize -> estimate -> summarize; returns (summary, skeleton)."""
    skel = skeletonize(detect_valleys(h, angles, prominence_um))
    depths = estimate_depths(h, skel, n_samples, radius_px, np.random.default_rng(seed))
    return summarize(depths, percentile, bins), skel


def write_histogram_csv(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo_um", "bin_hi_um", "density"])
        for lo, hi, d in zip(summary.bin_edges[:-1], summary.bin_edges[1:], summary.density):
            w.writerow([f"{lo:.6f}", f"{hi:.6f}", f"{d:.8f}"])


def write_summary_json(path, summary, **extra):
    with open(path, "w") as fh:
        json.dump(dict(summary.to_dict(), **extra), fh, indent=2)
