"""Channel depth metrology: cross-sections, smoothing, peak/valley pairing, agreement."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.signal import find_peaks, savgol_filter

from .core import MM_PER_PIXEL, HeightMap


class EmptyResultError(ValueError):
    """No peak/valley pairs were found."""


@dataclass(frozen=True)
class Profile:
    positions: np.ndarray
    heights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        hts = np.asarray(self.heights, dtype=np.float64)
        if pos.ndim != 1 or pos.shape != hts.shape:
            raise ValueError("positions and heights must be matching 1-D arrays")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly increasing")
        if not np.all(np.isfinite(hts)):
            raise ValueError("heights must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "heights", hts)

    def __len__(self):
        return self.heights.size


@dataclass(frozen=True)
class DepthStats:
    mean: float
    sd: float
    n: int
    depths: tuple = ()

    def __post_init__(self):
        if self.n < 1 or self.sd < 0:
            raise ValueError("DepthStats needs n >= 1 and sd >= 0")

    def to_dict(self):
        return {"mean": self.mean, "sd": self.sd, "n": self.n}


@dataclass(frozen=True)
class DetectorConfig:
    """Peak detector settings. ``distance_px=None`` falls back to 20 px."""

    prominence_frac: float = 0.25   # of the profile's interquartile range
    distance_px: float | None = None
    window: int = 31
    order: int = 3
    height_source: str = "raw"      # read extremum heights from "raw" or "smoothed"

    def __post_init__(self):
        if self.height_source not in ("raw", "smoothed"):
            raise ValueError(f"unknown height_source {self.height_source!r}")

    @classmethod
    def for_channels(cls, channel_width_um, mm_per_pixel=MM_PER_PIXEL, **kw):
        """Distance = half the channel width; smoothing window scaled to pitch."""
        width_px = channel_width_um / 1000.0 / mm_per_pixel
        window = kw.pop("window", None)
        if window is None:
            window = scaled_window(31, mm_per_pixel)
        return cls(distance_px=max(width_px / 2.0, 1.0), window=window, **kw)


def _h(h):
    return h.data.astype(np.float64) if isinstance(h, HeightMap) else np.asarray(h, dtype=np.float64)


def scaled_window(window, mm_per_pixel, order=3):
    """Odd window with the same physical length as ``window`` at 0.0077 mm/px."""
    w = int(round(window * MM_PER_PIXEL / mm_per_pixel))
    w = max(w, order + 2)
    return w if w % 2 else w + 1


def straight_sections(h, spacing_px=100, orientation="vertical"):
    """Cuts perpendicular to the channels, every ``spacing_px`` lines.

    ``orientation`` names the channel direction: vertical channels are cut
    along rows, horizontal channels along columns.
    """
    if spacing_px < 1:
        raise ValueError("spacing must be >= 1")
    a = _h(h)
    if orientation == "vertical":
        lines = a
    elif orientation == "horizontal":
        lines = a.T
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    pos = np.arange(lines.shape[1], dtype=np.float64)
    return [
        Profile(pos, lines[i].copy(), {"kind": "straight", "index": int(i), "orientation": orientation})
        for i in range(0, lines.shape[0], int(spacing_px))
    ]


def circular_sections(h, center_px, dtheta_deg=15.0):
    """Bilinear rays from ``center_px`` (row, col) out to the raster edge.

    Angle 0 points along +col, 90 along +row.
    """
    a = _h(h)
    rows, cols = a.shape
    r0, c0 = map(float, center_px)
    if not (0 <= r0 <= rows - 1 and 0 <= c0 <= cols - 1):
        raise ValueError("center must lie inside the raster")
    n = int(round(360.0 / dtheta_deg))
    out = []
    for i in range(n):
        theta = np.deg2rad(i * dtheta_deg)
        dr, dc = np.sin(theta), np.cos(theta)
        limits = []
        for d, p0, hi in ((dr, r0, rows - 1), (dc, c0, cols - 1)):
            if d > 1e-12:
                limits.append((hi - p0) / d)
            elif d < -1e-12:
                limits.append(-p0 / d)
        length = min(limits)
        t = np.arange(0.0, np.floor(length + 1e-9) + 1.0)
        rr = np.clip(r0 + t * dr, 0, rows - 1)
        cc = np.clip(c0 + t * dc, 0, cols - 1)
        vals = map_coordinates(a, [rr, cc], order=1, mode="nearest")
        out.append(Profile(t, vals, {"kind": "circular", "angle_deg": i * dtheta_deg,
                                     "origin": (r0, c0)}))
    return out


def smooth_profile(p, window=31, order=3):
    """Savitzky-Golay smoothing; edges get a polynomial fit over the last window.

    A profile shorter than ``window`` is smoothed with the largest odd window
    that fits, or returned unchanged if none does.
    """
    if window % 2 != 1 or window <= order:
        raise ValueError("window must be odd and larger than order")
    n = len(p)
    if n < window:
        window = n if n % 2 else n - 1
        if window <= order:
            return p
    y = savgol_filter(p.heights, window, order, mode="interp")
    return Profile(p.positions, y, dict(p.meta, smoothed=(window, order)))


def peaks_and_valleys(p, cfg=DetectorConfig()):
    heights = p.heights if isinstance(p, Profile) else np.asarray(p, dtype=np.float64)
    if heights.size < 3:
        raise ValueError("profile needs at least 3 samples")
    q75, q25 = np.percentile(heights, [75, 25])
    prom = cfg.prominence_frac * (q75 - q25)
    if prom <= 0:
        return np.array([], int), np.array([], int)
    dist = cfg.distance_px if cfg.distance_px is not None else 20
    kw = {"prominence": prom, "distance": max(dist, 1)}
    peaks, _ = find_peaks(heights, **kw)
    valleys, _ = find_peaks(-heights, **kw)
    return peaks, valleys


def pair_depths(heights, peaks, valleys):
    """|peak - valley| for every valley and each peak adjacent to it in index order."""
    events = sorted([(int(i), 1) for i in peaks] + [(int(i), 0) for i in valleys])
    out = []
    for j, (idx, is_peak) in enumerate(events):
        if is_peak:
            continue
        for k in (j - 1, j + 1):
            if 0 <= k < len(events) and events[k][1]:
                out.append(abs(heights[events[k][0]] - heights[idx]))
    return out


def profile_depths(profiles, cfg=DetectorConfig(), smooth=True):
    """Per-profile lists of peak-to-valley depths.

    Extrema are located on the smoothed profile. By default their heights
    are read from the unsmoothed profile, because a cubic Savitzky-Golay
    filter overshoots at step edges and would inflate square-wave depths.
    """
    rows = []
    for p in profiles:
        q = smooth_profile(p, cfg.window, cfg.order) if smooth else p
        pk, vl = peaks_and_valleys(q, cfg)
        src = p.heights if cfg.height_source == "raw" else q.heights
        rows.append(pair_depths(src, pk, vl))
    return rows


def depth_stats(profiles, cfg=DetectorConfig(), smooth=True):
    """Mean and (population) SD of all peak-to-valley depths over all profiles."""
    profiles = list(profiles)
    if not profiles:
        raise ValueError("need at least one profile")
    depths = [d for row in profile_depths(profiles, cfg, smooth) for d in row]
    if not depths:
        raise EmptyResultError("no peak/valley pairs found")
    d = np.asarray(depths)
    return DepthStats(float(d.mean()), float(d.std()), int(d.size), tuple(float(v) for v in d))


def icc_variants(x, y):
    """Single-measure ICC(1,1), ICC(2,1) and ICC(3,1) for two raters."""
    data = np.column_stack([np.asarray(x, float), np.asarray(y, float)])
    n, k = data.shape
    grand = data.mean()
    ss_rows = k * np.sum((data.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((data.mean(axis=0) - grand) ** 2)
    ss_tot = np.sum((data - grand) ** 2)
    ss_err = ss_tot - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    msw = (ss_cols + ss_err) / (n * (k - 1))

    def ratio(num, den):
        if den == 0:
            return 1.0 if num == 0 else float("nan")
        return float(num / den)

    return {
        "ICC(1,1)": ratio(msr - msw, msr + (k - 1) * msw),
        "ICC(2,1)": ratio(msr - mse, msr + (k - 1) * mse + k * (msc - mse) / n),
        "ICC(3,1)": ratio(msr - mse, msr + (k - 1) * mse),
    }


def agreement(x, y):
    """MAE, identity-line R², Pearson r² and ICC between paired measurements.

    ``r2`` measures scatter about y = x relative to the spread of ``x``;
    ``r2_fit`` is the squared correlation (R² of a free linear fit).
    ``icc`` is ICC(2,1), two-way random effects, absolute agreement.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    if x.size < 2:
        raise ValueError("need at least two pairs")
    res = np.sum((x - y) ** 2)
    tot = np.sum((x - x.mean()) ** 2)
    r2 = 1.0 - res / tot if tot > 0 else (1.0 if res == 0 else float("-inf"))
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        r2_fit = 1.0 if np.allclose(x, y) else 0.0
    else:
        r2_fit = float(np.corrcoef(x, y)[0, 1] ** 2)
    icc = icc_variants(x, y)
    return {
        "mae": float(np.mean(np.abs(x - y))),
        "r2": float(r2),
        "r2_fit": r2_fit,
        "icc": icc["ICC(2,1)"],
        "icc_variants": icc,
    }


def write_depths_csv(path, profiles_depths):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile_id", "pair_id", "depth_um"])
        for pid, row in enumerate(profiles_depths):
            for k, d in enumerate(row):
                w.writerow([pid, k, f"{d:.6f}"])


def write_stats_json(path, stats, **extra):
    with open(path, "w") as fh:
        json.dump(dict(stats.to_dict(), **extra), fh, indent=2)


def gel_object_means(rows, force_n=19.62, firmness="hard"):
    """Per-object mean depth from a gel table, keyed by (dataset, designed_um).

    Readings at ``force_n`` on ``firmness`` pieces are used; the horizontal
    and vertical readings of a validation object are averaged.
    """
    groups = {}
    for r in rows:
        if r["firmness"] != firmness or abs(float(r["force_n"]) - force_n) > 1e-6:
            continue
        key = (r["dataset"], float(r["designed_um"]))
        groups.setdefault(key, []).append(float(r["mean_um"]))
    if not groups:
        raise EmptyResultError(f"no {firmness} readings at {force_n} N")
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def gel_readings(rows, force_n=19.62, firmness="hard"):
    """Individual readings keyed by (dataset, configuration, designed_um)."""
    return {
        (r["dataset"], r["configuration"], float(r["designed_um"])): float(r["mean_um"])
        for r in rows
        if r["firmness"] == firmness and abs(float(r["force_n"]) - force_n) <= 1e-6
    }
