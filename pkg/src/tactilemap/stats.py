"""Friedman, exact Wilcoxon signed-rank, Bonferroni and descriptive tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.stats import chi2, norm, rankdata

from . import kernels

EXACT_MAX_N = 25
# paired differences are rounded before ranking so that equal magnitudes
# stored as two-decimal values tie exactly despite float noise
DIFF_DECIMALS = 10

LOCATIONS = ("forehead", "upper_arm", "inside_elbow", "top_hand", "knuckle", "top_finger",
             "fingerprint")
TIMEPOINTS = ("pre1", "pre2", "post")
MOISTURIZER_SITES = ("palm", "wrist", "elbow")


@dataclass(frozen=True)
class RepeatedMeasures:
    values: np.ndarray          # n_subjects x k_conditions
    labels: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise ValueError("need an n x k matrix with n, k >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("missing or non-finite cells")
        if self.labels and len(self.labels) != v.shape[1]:
            raise ValueError("one label per condition")
        object.__setattr__(self, "values", v)


def friedman(data):
    """Friedman chi-square with average ranks and the usual tie correction."""
    v = data.values if isinstance(data, RepeatedMeasures) else RepeatedMeasures(data).values
    n, k = v.shape
    if k < 3:
        raise ValueError("Friedman needs k >= 3 conditions")
    ranks = np.apply_along_axis(rankdata, 1, v)
    rsum = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * np.sum(rsum ** 2) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in v:
        _, counts = np.unique(row, return_counts=True)
        ties += np.sum(counts ** 3 - counts)
    denom = 1.0 - ties / (n * (k ** 3 - k))
    if denom <= 0:
        return 0.0, 1.0
    stat = float(stat / denom)
    return stat, float(chi2.sf(stat, k - 1))


def _signed_ranks(a, b):
    d = np.round(np.asarray(a, float) - np.asarray(b, float), DIFF_DECIMALS)
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all paired differences are zero")
    return d, rankdata(np.abs(d))


def wilcoxon_exact_p(ranks, w_plus, null="untied"):
    """Two-sided exact p for an observed W+.

    ``null="untied"`` enumerates signs over the plain ranks 1..n (the
    classical table, and the convention behind the published values);
    ``null="tied"`` enumerates over the observed average ranks, i.e. the
    permutation distribution conditional on the ties.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    if null == "untied":
        ranks = np.arange(1, ranks.size + 1, dtype=np.float64)
    elif null != "tied":
        raise ValueError(f"unknown null {null!r}")
    r2 = np.rint(2 * ranks).astype(np.int64)
    counts = kernels.signed_rank_counts(r2)
    total = counts.sum()
    w2 = int(round(2 * w_plus))
    lower = counts[:w2 + 1].sum() / total
    upper = counts[w2:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_signed_rank(a, b, exact_max_n=EXACT_MAX_N, null="untied"):
    """Paired two-sided Wilcoxon test; returns (W, p) with W = min(W+, W-).

    Zero differences are dropped and tied magnitudes get average ranks.
    Exact enumeration for n <= ``exact_max_n`` (see :func:`wilcoxon_exact_p`
    for ``null``); otherwise a normal approximation with tie-corrected
    variance and continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be paired 1-D samples")
    d, r = _signed_ranks(a, b)
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    w = min(w_plus, w_minus)
    n = d.size
    if n <= exact_max_n:
        return w, wilcoxon_exact_p(r, w_plus, null)
    mean = n * (n + 1) / 4.0
    _, t = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(t ** 3 - t) / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    return w, float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))


def bonferroni(pvals, m=3):
    p = np.asarray(pvals, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    out = np.minimum(1.0, m * p)
    return float(out) if out.ndim == 0 else out


def describe(column, ddof=0):
    """mean, sd, median, min, max. ``ddof=0`` (population SD) reproduces the
    published summary tables; pass ``ddof=1`` for the sample SD."""
    x = np.asarray(column, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty column")
    sd = float(x.std(ddof=ddof)) if x.size > ddof else 0.0
    return {"mean": float(x.mean()), "sd": sd, "median": float(np.median(x)),
            "min": float(x.min()), "max": float(x.max()), "n": int(x.size)}


# ------------------------------------------------------------ bundled data
def data_path(name):
    return resources.files("tactilemap") / "data" / name


def read_table(name_or_path):
    """Read a bundled (by file name) or external CSV into a list of dicts."""
    p = data_path(name_or_path)
    path = p if p.is_file() else name_or_path
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def wrinkle_table(path="table_s6_wrinkle_p80.csv"):
    """{column name: np.array} of the per-participant 80th percentile depths."""
    rows = read_table(path)
    cols = [c for c in rows[0] if c != "participant"]
    return {c: np.array([float(r[c]) for r in rows]) for c in cols}


def moisturizer_report(table=None, m=3):
    """Table S3-shaped results for palm, wrist and elbow."""
    table = wrinkle_table() if table is None else table
    out = []
    for site in MOISTURIZER_SITES:
        cols = [table[f"{site}_{t}"] for t in TIMEPOINTS]
        stat, p = friedman(RepeatedMeasures(np.column_stack(cols), TIMEPOINTS))
        pairs = {"pre1_pre2": (0, 1), "pre1_post": (0, 2), "pre2_post": (1, 2)}
        row = {"location": site, "friedman_chi2": stat, "friedman_p": p}
        raw = {}
        for name, (i, j) in pairs.items():
            raw[name] = wilcoxon_signed_rank(cols[i], cols[j])[1]
            row[f"w_{name}"] = raw[name]
        for name in pairs:
            row[f"bonf_{name}"] = bonferroni(raw[name], m)
        out.append(row)
    return out


def describe_table(table=None, columns=None, ddof=0):
    table = wrinkle_table() if table is None else table
    columns = list(table) if columns is None else columns
    return {c: describe(table[c], ddof) for c in columns}


def write_report_csv(path, rows, decimals=4):
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([f"{r[k]:.{decimals}f}" if isinstance(r[k], float) else r[k] for k in keys])
