"""Sample adaptive offset with occupancy-restricted statistics.

Offset statistics (sum of original-minus-reconstructed, count) accumulate
only over occupied pixels, so the derived offsets fit the pixels that matter
for the reconstructed cloud; the per-CTU RD selection then sees zero gain for
unoccupied regions and naturally signals "off" there.  The decoder applies
whatever was signaled uniformly across the CTU - the mask is encoder-side
only.  Classification always reads pre-SAO values.

Params are (kind, aux, offsets): kind "off" | "eo" | "band"; aux is the edge
class 0..3 (0, 90, 135, 45 degrees) or the band start 0..28; offsets are four
integers in [-7, 7] (edge categories 1,2 >= 0 and 3,4 <= 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# edge-offset neighbor steps per class: 0, 90, 135, 45 degrees
_DIRS = ((0, 1), (1, 0), (1, 1), (1, -1))

# sign(c-a) + sign(c-b) + 2  ->  SAO category
_CATMAP = np.array([1, 2, 0, 3, 4], dtype=np.int64)

MAX_OFFSET = 7
NUM_BANDS = 32
BAND_SPAN = 4


@dataclass
class SaoStats:
    eo_sum: np.ndarray   # (4 classes, 5 categories) int64, category 0 unused
    eo_cnt: np.ndarray
    band_sum: np.ndarray  # (32,) int64
    band_cnt: np.ndarray


def eo_category(left: int, center: int, right: int) -> int:
    """Edge-offset category along one direction."""
    s = (center > left) - (center < left) + (center > right) - (center < right)
    return int(_CATMAP[s + 2])


def _eo_fields(plane: np.ndarray, x: int, y: int, w: int, h: int, cls: int):
    """Per-pixel categories for one class, and which pixels have both neighbors."""
    H, W = plane.shape
    dy, dx = _DIRS[cls]
    c = plane[y:y + h, x:x + w].astype(np.int32)
    cats = np.zeros((h, w), dtype=np.int64)
    valid = np.ones((h, w), dtype=bool)
    ssum = np.zeros((h, w), dtype=np.int64)
    for sy, sx in ((-dy, -dx), (dy, dx)):
        nb = np.zeros((h, w), dtype=np.int32)
        ys0, xs0 = y + sy, x + sx
        oy0, ox0 = max(0, -ys0), max(0, -xs0)
        oy1 = h - max(0, ys0 + h - H)
        ox1 = w - max(0, xs0 + w - W)
        valid[:oy0, :] = False
        valid[oy1:, :] = False
        valid[:, :ox0] = False
        valid[:, ox1:] = False
        nb[oy0:oy1, ox0:ox1] = plane[ys0 + oy0:ys0 + oy1, xs0 + ox0:xs0 + ox1]
        d = c - nb
        ssum += np.sign(d)
    cats[valid] = _CATMAP[ssum[valid] + 2]
    return cats, valid


def collect_stats(orig: np.ndarray, recon: np.ndarray, mask: np.ndarray,
                  rect: tuple[int, int, int, int]) -> SaoStats:
    """Occupied-only offset statistics for every candidate SAO type."""
    x, y, w, h = rect
    H, W = recon.shape
    w = min(w, W - x)
    h = min(h, H - y)
    diff = (orig[y:y + h, x:x + w].astype(np.int64)
            - recon[y:y + h, x:x + w].astype(np.int64))
    occ = mask[y:y + h, x:x + w] != 0
    eo_sum = np.zeros((4, 5), dtype=np.int64)
    eo_cnt = np.zeros((4, 5), dtype=np.int64)
    for cls in range(4):
        cats, valid = _eo_fields(recon, x, y, w, h, cls)
        sel = occ & valid
        cs = cats[sel]
        eo_sum[cls] = np.bincount(cs, weights=diff[sel].astype(np.float64),
                                  minlength=5).astype(np.int64)
        eo_cnt[cls] = np.bincount(cs, minlength=5)
    bands = (recon[y:y + h, x:x + w].astype(np.int64) >> 3)[occ]
    band_sum = np.bincount(bands, weights=diff[occ].astype(np.float64),
                           minlength=NUM_BANDS).astype(np.int64)
    band_cnt = np.bincount(bands, minlength=NUM_BANDS)
    return SaoStats(eo_sum, eo_cnt, band_sum, band_cnt)


def _round_div(s: int, c: int) -> int:
    """round-half-away-from-zero of s/c for c > 0."""
    if s >= 0:
        return (2 * s + c) // (2 * c)
    return -((-2 * s + c) // (2 * c))


def derive_offsets(sums, counts, edge: bool) -> tuple[int, ...]:
    """Clip rounded mean offsets to [-7, 7]; edge categories are sign-clamped."""
    out = []
    for i, (s, c) in enumerate(zip(sums, counts)):
        if c == 0:
            out.append(0)
            continue
        o = max(-MAX_OFFSET, min(MAX_OFFSET, _round_div(int(s), int(c))))
        if edge:
            o = max(o, 0) if i < 2 else min(o, 0)
        out.append(o)
    return tuple(out)


def _delta(offsets, sums, counts) -> int:
    """Estimated masked-SSD change: sum(count*o^2 - 2*o*sum)."""
    d = 0
    for o, s, c in zip(offsets, sums, counts):
        d += int(c) * o * o - 2 * o * int(s)
    return d


def candidate_params(stats: SaoStats):
    """All candidate parameter sets in tie-break order: off, EO classes, bands."""
    out = [("off", 0, (0, 0, 0, 0))]
    for cls in range(4):
        offs = derive_offsets(stats.eo_sum[cls][1:5], stats.eo_cnt[cls][1:5], True)
        out.append(("eo", cls, offs))
    for start in range(NUM_BANDS - BAND_SPAN + 1):
        offs = derive_offsets(stats.band_sum[start:start + BAND_SPAN],
                              stats.band_cnt[start:start + BAND_SPAN], False)
        out.append(("band", start, offs))
    return out


def params_delta(params, stats: SaoStats) -> int:
    kind, aux, offs = params
    if kind == "off":
        return 0
    if kind == "eo":
        return _delta(offs, stats.eo_sum[aux][1:5], stats.eo_cnt[aux][1:5])
    return _delta(offs, stats.band_sum[aux:aux + BAND_SPAN],
                  stats.band_cnt[aux:aux + BAND_SPAN])


def select_sao(stats: SaoStats, lam: float, bits_fn):
    """Minimum of delta-D + lambda*bits over all candidates (strict order)."""
    best = None
    best_cost = None
    for params in candidate_params(stats):
        cost = params_delta(params, stats) + lam * bits_fn(params)
        if best_cost is None or cost < best_cost:
            best_cost = cost
            best = params
    return best


def apply_sao(plane: np.ndarray, params, rect: tuple[int, int, int, int],
              out: np.ndarray | None = None) -> np.ndarray:
    """Filter one CTU rectangle; reads pre-SAO `plane`, writes into `out`.

    Applied to every pixel of the CTU (decoder-uniform; no mask).
    """
    x, y, w, h = rect
    H, W = plane.shape
    w = min(w, W - x)
    h = min(h, H - y)
    if out is None:
        out = plane.copy()
    kind, aux, offs = params
    region = plane[y:y + h, x:x + w]
    if kind == "off":
        out[y:y + h, x:x + w] = region
        return out
    if kind == "eo":
        cats, _ = _eo_fields(plane, x, y, w, h, aux)
        lut = np.array([0, offs[0], offs[1], offs[2], offs[3]], dtype=np.int64)
        filt = region.astype(np.int64) + lut[cats]
    else:
        lut = np.zeros(NUM_BANDS, dtype=np.int64)
        lut[aux:aux + BAND_SPAN] = offs
        filt = region.astype(np.int64) + lut[region.astype(np.int64) >> 3]
    out[y:y + h, x:x + w] = np.clip(filt, 0, 255)
    return out
