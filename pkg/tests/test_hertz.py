import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import hertz_by_hand
from tactilemap import hertz
from tactilemap.hertz import ForceCurve, HertzFit

# hand evaluation in SI units, frozen as a regression constant
F_REF = hertz_by_hand(2.0, 128.91, 0.49, 1.5)


def curve(E, R=1.5, nu=0.49, n=50, dmax=2.0):
    d = np.linspace(0, dmax, n)
    return ForceCurve(d, hertz.hertz_force(d, E, nu, R), R, nu)


def test_force_examples():
    assert hertz.hertz_force(0.0, 100.0) == 0.0
    assert hertz.hertz_force(1.3, 200.0, R=2.0) == pytest.approx(2 * hertz.hertz_force(1.3, 100.0, R=2.0))
    assert hertz.hertz_force(2.0, 128.91, 0.49, 1.5) == pytest.approx(F_REF, rel=1e-12)
    assert F_REF == pytest.approx(0.78353703, rel=1e-7)
    with pytest.raises(ValueError):
        hertz.hertz_force(-0.1, 100.0)


@given(st.floats(0.001, 5.0), st.floats(0.001, 5.0))
def test_force_strictly_increasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert hertz.hertz_force(lo, 50.0) < hertz.hertz_force(hi, 50.0)


@given(st.floats(1.0, 1e4), st.floats(0.1, 10.0), st.floats(0.05, 0.49))
def test_noiseless_fit_recovers_modulus(E, R, nu):
    fit = hertz.fit_modulus(curve(E, R, nu))
    assert fit.E2 == pytest.approx(E, rel=1e-9)
    assert fit.residual_rms <= 1e-9 * hertz.hertz_force(2.0, E, nu, R)


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_fit_is_scale_equivariant(seed, alpha):
    rng = np.random.default_rng(seed)
    c = curve(120.0)
    f = c.force * (1 + 0.01 * rng.normal(size=c.force.size))
    base = hertz.fit_modulus(ForceCurve(c.displacement, f, 1.5))
    scaled = hertz.fit_modulus(ForceCurve(c.displacement, alpha * f, 1.5))
    assert scaled.E2 == pytest.approx(alpha * base.E2, rel=1e-10)


def test_noisy_fit_median_error_below_one_percent():
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        c = curve(100.0, n=200)
        f = c.force * (1 + 0.01 * rng.normal(size=200))
        errs.append(abs(hertz.fit_modulus(ForceCurve(c.displacement, f, 1.5)).E2 - 100.0) / 100.0)
    assert np.median(errs) < 0.01


def test_closed_form_matches_direct_least_squares():
    rng = np.random.default_rng(1)
    c = curve(90.0, n=30)
    f = c.force + rng.normal(scale=0.01, size=30)
    g = np.array([hertz_by_hand(d, 1.0, 0.49, 1.5) for d in c.displacement])
    E_ls = np.linalg.lstsq(g[:, None], f, rcond=None)[0][0]
    assert hertz.fit_modulus(ForceCurve(c.displacement, f, 1.5)).E2 == pytest.approx(E_ls, rel=1e-9)


def test_offset_fit_recovers_contact_point():
    d = np.linspace(0, 2.0, 120)
    f = hertz.hertz_force(np.clip(d - 0.3, 0, None), 140.0, 0.49, 1.5)
    fit = hertz.fit_modulus(ForceCurve(d, f, 1.5), fit_offset=True)
    assert fit.d0 == pytest.approx(0.3, abs=1e-5)
    assert fit.E2 == pytest.approx(140.0, rel=1e-4)
    assert fit.iterations > 0


def test_ill_posed_and_invalid_curves():
    with pytest.raises(ValueError):
        hertz.fit_modulus(ForceCurve(np.zeros(5), np.ones(5), 1.5))
    with pytest.raises(ValueError):
        ForceCurve([0, 1], [0, 1], 1.5)
    with pytest.raises(ValueError):
        ForceCurve([0, 2, 1], [0, 1, 2], 1.5)
    with pytest.raises(ValueError):
        ForceCurve([0, 1, 2], [0, np.nan, 2], 1.5)
    with pytest.raises(ValueError):
        ForceCurve([0, 1, 2], [0, 1, 2], 0.0)
    with pytest.raises(ValueError):
        ForceCurve([0, 1, 2], [0, 1, 2], 1.0, 0.5)
    with pytest.raises(ValueError):
        HertzFit(0.0, 0.0)
    with pytest.raises(ValueError):
        hertz.fit_modulus(ForceCurve([0, 1, 2, 3], [0, -1, -2, -3], 1.5))


def test_reporting_path_averages_published_trials(tmp_path):
    fits = [HertzFit(e, 0.0) for e in (124.44, 129.55, 132.74)]
    out = tmp_path / "fit.json"
    rep = hertz.report(fits, out)
    assert round(rep["mean_E2_kPa"], 2) == 128.91
    assert json.loads(out.read_text())["mean_E2_kPa"] == pytest.approx(rep["mean_E2_kPa"])


def test_csv_ingestion(tmp_path):
    c = curve(77.0)
    p = tmp_path / "c.csv"
    rows = ["displacement_mm,force_N"] + [f"{d:.17g},{f:.17g}" for d, f in zip(c.displacement, c.force)]
    p.write_text("\n".join(rows))
    assert hertz.fit_modulus(hertz.read_curve_csv(p, 1.5)).E2 == pytest.approx(77.0, rel=1e-9)
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        hertz.read_curve_csv(bad, 1.5)
