"""Hot loops, each with a numba kernel and a pure-numpy twin.

The public functions dispatch on :data:`tactilemap._accel.USE_NUMBA`; the
``*_numba`` / ``*_numpy`` names stay importable so tests and the benchmark
can compare both regardless of the flag.
"""

import numpy as np
from scipy import ndimage

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------- thinning
# Neighbour order P2..P9: N, NE, E, SE, S, SW, W, NW (clockwise from north).
_DR = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
_DC = np.array([0, 1, 1, 1, 0, -1, -1, -1])


@njit
def _zs_pass(img, step):
    rows, cols = img.shape
    kill = np.zeros((rows, cols), dtype=np.bool_)
    nb = np.zeros(8, dtype=np.uint8)
    changed = False
    for r in range(rows):
        for c in range(cols):
            if not img[r, c]:
                continue
            for k in range(8):
                rr = r + (-1, -1, 0, 1, 1, 1, 0, -1)[k]
                cc = c + (0, 1, 1, 1, 0, -1, -1, -1)[k]
                if 0 <= rr < rows and 0 <= cc < cols and img[rr, cc]:
                    nb[k] = 1
                else:
                    nb[k] = 0
            b = 0
            for k in range(8):
                b += nb[k]
            if b < 2 or b > 6:
                continue
            a = 0
            for k in range(8):
                if nb[k] == 0 and nb[(k + 1) % 8] == 1:
                    a += 1
            if a != 1:
                continue
            p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
            if step == 0:
                if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                    continue
            else:
                if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                    continue
            kill[r, c] = True
            changed = True
    for r in range(rows):
        for c in range(cols):
            if kill[r, c]:
                img[r, c] = False
    return changed


@njit
def zhang_suen_numba(mask):
    img = mask.copy()
    while True:
        a = _zs_pass(img, 0)
        b = _zs_pass(img, 1)
        if not (a or b):
            break
    return img


def _neighbours(img):
    p = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape
    return [p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in zip(_DR, _DC)]


def _zs_pass_numpy(img, step):
    nb = _neighbours(img)
    b = sum(n.astype(np.int16) for n in nb)
    a = sum(((nb[k] == 0) & (nb[(k + 1) % 8] == 1)).astype(np.int16) for k in range(8))
    p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
    if step == 0:
        c1 = (p2 & p4 & p6) == 0
        c2 = (p4 & p6 & p8) == 0
    else:
        c1 = (p2 & p4 & p8) == 0
        c2 = (p2 & p6 & p8) == 0
    kill = img & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
    img &= ~kill
    return bool(kill.any())


def zhang_suen_numpy(mask):
    img = np.array(mask, dtype=bool)
    while True:
        a = _zs_pass_numpy(img, 0)
        b = _zs_pass_numpy(img, 1)
        if not (a or b):
            return img


def zhang_suen(mask):
    """Zhang-Suen thinning of a boolean mask (two sub-iterations to fixpoint)."""
    mask = np.ascontiguousarray(mask, dtype=bool)
    if _accel.USE_NUMBA:
        return zhang_suen_numba(mask)
    return zhang_suen_numpy(mask)


# ---------------------------------------------------------------- disk max
def disk_offsets(radius):
    r = int(np.floor(radius))
    dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dr * dr + dc * dc <= radius * radius
    return dr[keep].astype(np.int64), dc[keep].astype(np.int64)


@njit
def disk_max_numba(h, rows, cols, dr, dc):
    nr, nc = h.shape
    out = np.empty(rows.size, dtype=np.float64)
    for i in range(rows.size):
        best = -np.inf
        for k in range(dr.size):
            r = rows[i] + dr[k]
            c = cols[i] + dc[k]
            if 0 <= r < nr and 0 <= c < nc:
                v = h[r, c]
                if v > best:
                    best = v
        out[i] = best
    return out


def disk_max_numpy(h, rows, cols, dr, dc, chunk=2048):
    nr, nc = h.shape
    out = np.empty(rows.size, dtype=np.float64)
    for s in range(0, rows.size, chunk):
        r = rows[s:s + chunk, None] + dr[None, :]
        c = cols[s:s + chunk, None] + dc[None, :]
        inside = (r >= 0) & (r < nr) & (c >= 0) & (c < nc)
        vals = h[np.clip(r, 0, nr - 1), np.clip(c, 0, nc - 1)]
        out[s:s + chunk] = np.where(inside, vals, -np.inf).max(axis=1)
    return out


def disk_max(h, rows, cols, radius):
    """Max of ``h`` over the disk of ``radius`` px around each (row, col)."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    dr, dc = disk_offsets(radius)
    if _accel.USE_NUMBA:
        return disk_max_numba(h, rows, cols, dr, dc)
    return disk_max_numpy(h, rows, cols, dr, dc)


# ------------------------------------------------- signed-rank null counts
@njit
def signed_rank_counts_numba(ranks2):
    """Counts of every doubled W+ over all 2^n sign vectors.

    Builds the coefficients of prod(1 + x^r) one rank at a time, walking
    downwards so each rank is used at most once.
    """
    n = ranks2.size
    total = 0
    for i in range(n):
        total += ranks2[i]
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    top = 0
    for i in range(n):
        r = ranks2[i]
        for s in range(top, -1, -1):
            counts[s + r] += counts[s]
        top += r
    return counts


def signed_rank_counts_numpy(ranks2):
    """Same distribution via the generating-function product (1 + x^r)."""
    ranks2 = np.asarray(ranks2, dtype=np.int64)
    counts = np.zeros(int(ranks2.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    top = 0
    for r in ranks2:
        r = int(r)
        counts[r:top + r + 1] += counts[:top + 1].copy()
        top += r
    return counts


def signed_rank_counts(ranks2):
    """Null distribution of doubled W+ for integer doubled ranks."""
    ranks2 = np.ascontiguousarray(ranks2, dtype=np.int64)
    if _accel.USE_NUMBA:
        return signed_rank_counts_numba(ranks2)
    return signed_rank_counts_numpy(ranks2)


# ------------------------------------------------------- 2x2 block cleanup
@njit
def _ring_groups(ring):
    """Number of 8-connected groups among set ring neighbours (order N..NW)."""
    parent = np.arange(8)
    for i in range(8):
        if not ring[i]:
            continue
        for step in (1, 2):
            j = (i + step) % 8
            if not ring[j]:
                continue
            if step == 2 and i % 2 == 1:
                continue  # corners two apart are not adjacent
            a, b = i, j
            while parent[a] != a:
                a = parent[a]
            while parent[b] != b:
                b = parent[b]
            if a != b:
                parent[b] = a
    groups = 0
    for i in range(8):
        if ring[i] and parent[i] == i:
            groups += 1
    return groups


@njit
def clear_blocks_numba(img):
    """Drop one simple pixel from every fully-set 2x2 block, in raster order."""
    rows, cols = img.shape
    ring = np.zeros(8, dtype=np.bool_)
    changed = False
    for r in range(rows - 1):
        for c in range(cols - 1):
            if not (img[r, c] and img[r, c + 1] and img[r + 1, c] and img[r + 1, c + 1]):
                continue
            for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                for k in range(8):
                    rr = pr + (-1, -1, 0, 1, 1, 1, 0, -1)[k]
                    cc = pc + (0, 1, 1, 1, 0, -1, -1, -1)[k]
                    ring[k] = 0 <= rr < rows and 0 <= cc < cols and img[rr, cc]
                if _ring_groups(ring) == 1:
                    img[pr, pc] = False
                    changed = True
                    break
            else:
                for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                    if _removable_global(img, pr, pc):
                        img[pr, pc] = False
                        changed = True
                        break
                else:
                    # an X-junction: thinness wins over keeping one branch attached
                    img[r, c] = False
                    changed = True
    return changed


@njit
def _removable_global(img, pr, pc):
    """True if clearing (pr, pc) keeps all its 8-neighbours in one component."""
    rows, cols = img.shape
    img[pr, pc] = False
    seen = np.zeros((rows, cols), dtype=np.bool_)
    stack = np.empty((rows * cols, 2), dtype=np.int64)
    top = 0
    first = True
    for k in range(8):
        rr = pr + (-1, -1, 0, 1, 1, 1, 0, -1)[k]
        cc = pc + (0, 1, 1, 1, 0, -1, -1, -1)[k]
        if 0 <= rr < rows and 0 <= cc < cols and img[rr, cc]:
            if first:
                seen[rr, cc] = True
                stack[0, 0] = rr
                stack[0, 1] = cc
                top = 1
                first = False
    while top > 0:
        top -= 1
        r0 = stack[top, 0]
        c0 = stack[top, 1]
        for k in range(8):
            rr = r0 + (-1, -1, 0, 1, 1, 1, 0, -1)[k]
            cc = c0 + (0, 1, 1, 1, 0, -1, -1, -1)[k]
            if 0 <= rr < rows and 0 <= cc < cols and img[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                stack[top, 0] = rr
                stack[top, 1] = cc
                top += 1
    ok = True
    for k in range(8):
        rr = pr + (-1, -1, 0, 1, 1, 1, 0, -1)[k]
        cc = pc + (0, 1, 1, 1, 0, -1, -1, -1)[k]
        if 0 <= rr < rows and 0 <= cc < cols and img[rr, cc] and not seen[rr, cc]:
            ok = False
    img[pr, pc] = True
    return ok


def _ring_groups_py(ring):
    parent = list(range(8))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i in range(8):
        if not ring[i]:
            continue
        for step in (1, 2):
            j = (i + step) % 8
            if ring[j] and not (step == 2 and i % 2 == 1):
                a, b = find(i), find(j)
                if a != b:
                    parent[b] = a
    return sum(1 for i in range(8) if ring[i] and parent[i] == i)


def clear_blocks_numpy(img):
    rows, cols = img.shape
    blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
    changed = False
    for r, c in np.argwhere(blocks):
        if not (img[r, c] and img[r, c + 1] and img[r + 1, c] and img[r + 1, c + 1]):
            continue
        for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
            rr, cc = pr + _DR, pc + _DC
            inside = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
            ring = np.zeros(8, dtype=bool)
            ring[inside] = img[rr[inside], cc[inside]]
            if _ring_groups_py(ring) == 1:
                img[pr, pc] = False
                changed = True
                break
        else:
            for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                if _removable_global_numpy(img, pr, pc):
                    img[pr, pc] = False
                    changed = True
                    break
            else:
                img[r, c] = False
                changed = True
    return changed


def _removable_global_numpy(img, pr, pc):
    rows, cols = img.shape
    rr, cc = pr + _DR, pc + _DC
    inside = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    rr, cc = rr[inside], cc[inside]
    on = img[rr, cc]
    test = img.copy()
    test[pr, pc] = False
    labels, _ = ndimage.label(test, structure=np.ones((3, 3)))
    return len(set(labels[rr[on], cc[on]].tolist())) <= 1


def clear_blocks(img):
    """In-place removal of 2x2 blocks left by thinning; True if anything changed.

    Each block loses its first pixel (raster order) whose removal keeps the
    local neighbourhood connected, else the first that keeps the whole
    component connected. Blocks at the centre of an X of four diagonal
    branches have no such pixel; their top-left pixel is removed anyway.
    """
    if _accel.USE_NUMBA:
        return clear_blocks_numba(img)
    return clear_blocks_numpy(img)
