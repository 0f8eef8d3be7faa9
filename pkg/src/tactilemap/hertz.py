"""Hertzian sphere-on-half-space contact and Young's modulus fitting.

Units: displacement mm, force N, modulus kPa, radius mm. With those units
``E * sqrt(R) * d**1.5`` comes out in kPa * mm^2 = 1e-3 N.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

KPA_MM2_TO_N = 1e-3
DEFAULT_NU = 0.49


def _geometry_factor(d, nu, radius):
    d = np.asarray(d, dtype=np.float64)
    return (4.0 / 3.0) * np.sqrt(radius) * np.power(d, 1.5) / (1.0 - nu * nu) * KPA_MM2_TO_N


def hertz_force(d, E2, nu2=DEFAULT_NU, R=1.0):
    """Contact force (N) of a rigid sphere of radius ``R`` (mm) pressed ``d`` mm."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("indentation depth must be >= 0")
    f = E2 * _geometry_factor(d, nu2, R)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class ForceCurve:
    displacement: np.ndarray
    force: np.ndarray
    indenter_radius: float
    poisson_ratio: float = DEFAULT_NU

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=np.float64)
        f = np.asarray(self.force, dtype=np.float64)
        if d.ndim != 1 or d.shape != f.shape or d.size < 3:
            raise ValueError("need matching 1-D displacement/force with >= 3 points")
        if np.any(np.diff(d) < 0):
            raise ValueError("displacement must be non-decreasing")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(d)):
            raise ValueError("curve must be finite")
        if self.indenter_radius <= 0:
            raise ValueError("radius must be > 0")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson ratio must lie in (0, 0.5)")
        object.__setattr__(self, "displacement", d)
        object.__setattr__(self, "force", f)


@dataclass(frozen=True)
class HertzFit:
    E2: float
    residual_rms: float
    iterations: int = 0
    d0: float = 0.0

    def __post_init__(self):
        if not self.E2 > 0:
            raise ValueError("E2 must be positive")

    def to_dict(self):
        return {"E2_kPa": self.E2, "residual_rms_N": self.residual_rms,
                "iterations": self.iterations, "d0_mm": self.d0}


def _closed_form(d, f, nu, radius):
    g = _geometry_factor(np.clip(d, 0, None), nu, radius)
    gg = float(g @ g)
    if gg == 0:
        raise ValueError("ill-posed fit: no positive displacement")
    E = float(g @ f) / gg
    return E, float(np.sqrt(np.mean((f - E * g) ** 2)))


def fit_modulus(curve, fit_offset=False):
    """Least-squares E2 (kPa). The model is linear in E2, so the fit is closed form.

    With ``fit_offset`` a contact offset d0 is also fitted (d -> max(0, d - d0))
    by a bounded scalar search over d0 with E2 profiled out.
    """
    d, f = curve.displacement, curve.force
    if np.count_nonzero(d > 0) < 3:
        raise ValueError("ill-posed fit: need >= 3 points with d > 0")
    nu, radius = curve.poisson_ratio, curve.indenter_radius
    if not fit_offset:
        E, rms = _closed_form(d, f, nu, radius)
        if E <= 0:
            raise ValueError("fitted modulus is not positive")
        return HertzFit(E, rms, 0)

    positive = np.sort(d[d > 0])
    hi = positive[-3] if positive.size >= 3 else 0.0

    def cost(d0):
        return _closed_form(d - d0, f, nu, radius)[1]

    res = minimize_scalar(cost, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-9})
    E, rms = _closed_form(d - res.x, f, nu, radius)
    return HertzFit(E, rms, int(res.nfev), float(res.x))


def read_curve_csv(path, radius, nu=DEFAULT_NU):
    """Curve from a CSV with ``displacement_mm`` and ``force_N`` columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"displacement_mm", "force_N"} <= set(rows[0]):
        raise ValueError("CSV needs displacement_mm and force_N columns")
    d = [float(r["displacement_mm"]) for r in rows]
    f = [float(r["force_N"]) for r in rows]
    return ForceCurve(np.array(d), np.array(f), radius, nu)


def report(fits, path=None):
    """Per-trial moduli plus their mean; optionally written as JSON."""
    moduli = [ft.E2 for ft in fits]
    out = {"trials": [ft.to_dict() for ft in fits], "mean_E2_kPa": float(np.mean(moduli))}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2)
    return out
