"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the package code: brute-force
enumeration, explicit loops, third-party libraries or closed forms.
"""

import itertools
import math
import statistics

import numpy as np


# ------------------------------------------------------------- statistics
def avg_ranks(values):
    """Average ranks (1-based) by sorting and scanning tie runs."""
    v = list(values)
    order = sorted(range(len(v)), key=lambda i: v[i])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_enumerate(a, b, null="untied"):
    """Two-sided exact Wilcoxon p by walking all 2^n sign vectors."""
    d = [round(x - y, 10) for x, y in zip(a, b)]
    d = [x for x in d if x != 0]
    n = len(d)
    r = avg_ranks([abs(x) for x in d])
    w_plus = sum(ri for ri, di in zip(r, d) if di > 0)
    base = list(range(1, n + 1)) if null == "untied" else r
    le = ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(ri for ri, s in zip(base, signs) if s)
        le += w <= w_plus + 1e-9
        ge += w >= w_plus - 1e-9
    total = 2 ** n
    return min(1.0, 2.0 * min(le, ge) / total), min(w_plus, sum(r) - w_plus)


def friedman_loops(rows):
    """Friedman chi-square with tie correction, from first principles."""
    n, k = len(rows), len(rows[0])
    sums = [0.0] * k
    ties = 0.0
    for row in rows:
        rk = avg_ranks(row)
        for j in range(k):
            sums[j] += rk[j]
        for val in set(row):
            t = row.count(val)
            ties += t ** 3 - t
    chi = 12.0 / (n * k * (k + 1)) * sum(s * s for s in sums) - 3.0 * n * (k + 1)
    return chi / (1.0 - ties / (n * (k ** 3 - k)))


def describe_stdlib(x):
    return {"mean": statistics.fmean(x), "sd": statistics.pstdev(x), "median": statistics.median(x),
            "min": min(x), "max": max(x)}


def icc_anova(x, y):
    """ICC(1,1), ICC(2,1), ICC(3,1) from a two-way ANOVA fitted by statsmodels."""
    import pandas as pd
    import statsmodels.api as sm
    from statsmodels.formula.api import ols

    n = len(x)
    df = pd.DataFrame({
        "score": list(x) + list(y),
        "target": [str(i) for i in range(n)] * 2,
        "rater": ["a"] * n + ["b"] * n,
    })
    table = sm.stats.anova_lm(ols("score ~ C(target) + C(rater)", df).fit(), typ=2)
    ms = table["sum_sq"] / table["df"]
    msr, msc, mse = ms["C(target)"], ms["C(rater)"], ms["Residual"]
    k = 2
    ss_w = table["sum_sq"]["C(rater)"] + table["sum_sq"]["Residual"]
    msw = ss_w / (n * (k - 1))
    return {
        "ICC(1,1)": (msr - msw) / (msr + (k - 1) * msw),
        "ICC(2,1)": (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n),
        "ICC(3,1)": (msr - mse) / (msr + (k - 1) * mse),
    }


# --------------------------------------------------------------- network
def conv_loops(x, w, b):
    """'same' zero-padded cross-correlation by explicit pixel loops."""
    h, wd, _ = x.shape
    k = w.shape[0]
    p = k // 2
    out = np.empty((h, wd, w.shape[-1]))
    xp = np.pad(x.astype(np.float64), ((p, p), (p, p), (0, 0)))
    for r in range(h):
        for c in range(wd):
            patch = xp[r:r + k, c:c + k, :]
            out[r, c] = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2])) + b
    return out


def central_difference(f, arr, idx, step=1e-3):
    old = arr[idx]
    arr[idx] = old + step
    fp = f()
    arr[idx] = old - step
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * step)


# ------------------------------------------------------------ geometry
def hertz_by_hand(d_mm, E_kpa, nu, R_mm):
    """F = (4/3) E/(1-nu^2) sqrt(R) d^1.5 in SI units, then back to N."""
    E = E_kpa * 1e3            # Pa
    R = R_mm * 1e-3            # m
    d = d_mm * 1e-3            # m
    return 4.0 / 3.0 * E / (1.0 - nu * nu) * math.sqrt(R) * d ** 1.5


def trig_field(shape, modes, rng):
    """Band-limited periodic field with its analytic gradient.

    ``modes`` integer wave pairs per axis; returns (h, dh/dcol, dh/drow)
    in height units per pixel.
    """
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    h = np.zeros(shape)
    gx = np.zeros(shape)
    gy = np.zeros(shape)
    for _ in range(modes):
        kx = 2 * np.pi * rng.integers(-6, 7) / cols
        ky = 2 * np.pi * rng.integers(-6, 7) / rows
        a = rng.uniform(0.2, 1.0)
        ph = rng.uniform(0, 2 * np.pi)
        arg = kx * xx + ky * yy + ph
        h += a * np.sin(arg)
        gx += a * kx * np.cos(arg)
        gy += a * ky * np.cos(arg)
    return h, gx, gy


def gradient_normals(gx, gy, pitch_um):
    """Unit normals for per-pixel gradients (height units per pixel)."""
    n = np.stack([-gx / pitch_um, -gy / pitch_um, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def lambert_loop(normals, dirs, gain, ambient):
    out = np.empty(normals.shape)
    for r in range(normals.shape[0]):
        for c in range(normals.shape[1]):
            for ch in range(3):
                out[r, c, ch] = gain[r, c, ch] * max(0.0, float(normals[r, c] @ dirs[ch])) + ambient[ch]
    return np.clip(out, 0, 1)


# --------------------------------------------------------------- profiles
def naive_extrema(y):
    """Indices of strict plateau-centred local maxima/minima of a sampled wave."""
    peaks, valleys = [], []
    n = len(y)
    i = 1
    while i < n - 1:
        j = i
        while j + 1 < n and y[j + 1] == y[i]:
            j += 1
        if j + 1 < n:
            mid = (i + j) // 2
            if y[i - 1] < y[i] > y[j + 1]:
                peaks.append(mid)
            elif y[i - 1] > y[i] < y[j + 1]:
                valleys.append(mid)
        i = j + 1
    return peaks, valleys


def zhang_suen_reference(img):
    """Textbook two-subiteration Zhang-Suen thinning in pure Python."""
    a = np.pad(np.asarray(img, dtype=np.uint8), 1)
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            kill = []
            for r in range(1, a.shape[0] - 1):
                for c in range(1, a.shape[1] - 1):
                    if not a[r, c]:
                        continue
                    p = [a[r - 1, c], a[r - 1, c + 1], a[r, c + 1], a[r + 1, c + 1],
                         a[r + 1, c], a[r + 1, c - 1], a[r, c - 1], a[r - 1, c - 1]]
                    b = sum(p)
                    t = sum(p[i] == 0 and p[(i + 1) % 8] == 1 for i in range(8))
                    if not (2 <= b <= 6 and t == 1):
                        continue
                    if step == 0:
                        ok = p[0] * p[2] * p[4] == 0 and p[2] * p[4] * p[6] == 0
                    else:
                        ok = p[0] * p[2] * p[6] == 0 and p[0] * p[4] * p[6] == 0
                    if ok:
                        kill.append((r, c))
            for r, c in kill:
                a[r, c] = 0
            changed |= bool(kill)
    return a[1:-1, 1:-1].astype(bool)
