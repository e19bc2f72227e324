"""Block video codec with occupancy-masked rate-distortion optimization.

Quadtree CTUs (64 down to 8) with intra (planar/DC/8 angular), inter
merge/skip, AMVP motion search and an intra fallback, residual transform
quadtree, and in-loop SAO.  Mode decisions minimize masked distortion plus
lambda times *exact* bits: every candidate is trial-encoded on the real
arithmetic coder from a snapshot, and the winner's captured bits are spliced
back in, so predicted and written bits are identical by construction.

Staging rules for the mask: SATD/SAD prediction stages (rough intra mode
selection, integer and half-pel motion search) are never masked - their
distortion stands in for residual rate.  Full-RDO stages (mode decision,
residual quadtree, merge/skip selection, SAO statistics) use the occupancy
mask, so unoccupied pixels contribute rate only.  With masking disabled the
mask is all-ones, which reproduces the unmasked encoder bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import intra as intra_pred
from . import sao as sao_mod
from . import transform as tf
from .rangecoder import Decoder, DecodeError, Encoder, signed_eg_bits

CTU = 64
MIN_CU = 8
MAX_MV = 32          # half-pel units; +-16 luma samples
SEARCH_RANGE = 16    # integer samples

# context indices
CTX_SPLIT0, CTX_SPLIT1, CTX_SPLIT2 = 0, 1, 2
CTX_SKIP = 3
CTX_INTRA = 4
CTX_MERGE = 5
CTX_MIDX0, CTX_MIDX1 = 6, 7
CTX_MVD_GT0, CTX_MVD_GT1 = 8, 9
CTX_IMODE_ANG = 10
CTX_IMODE_PL = 11
CTX_TUSPLIT = 12
CTX_CBF_L, CTX_CBF_C = 13, 14
CTX_SIG_L = 15       # 15,16,17
CTX_SIG_C = 18       # 18,19,20
CTX_GT1_L, CTX_GT1_C = 21, 22
CTX_SAO_ON, CTX_SAO_TYPE, CTX_SAO_MAG = 23, 24, 25
N_CTX = 26

_CBRT2 = (1.0, 1.2599210498948732, 1.5874010519681994)


def lambda_full(qp: int) -> float:
    """0.57 * 2^((qp-12)/3)."""
    k = qp - 12
    return 0.57 * _CBRT2[k % 3] * 2.0 ** (k // 3)


@dataclass
class RdoContext:
    qp: int
    lambda_full: float
    lambda_pred: float
    mask: np.ndarray           # (H, W) uint8 block-precision occupancy
    masking_enabled: bool

    @classmethod
    def create(cls, qp: int, mask: np.ndarray, masking_enabled: bool) -> "RdoContext":
        if not 0 <= qp <= 51:
            raise ValueError(f"qp {qp} out of range")
        lf = lambda_full(qp)
        return cls(qp, lf, lf ** 0.5, np.asarray(mask, dtype=np.uint8), masking_enabled)


@dataclass
class CodingDecision:
    x: int
    y: int
    size: int
    split: bool = False
    mode: str = ""             # intra | skip | merge | amvp
    intra_dir: int = -1
    merge_idx: int = -1
    mv: tuple[int, int] = (0, 0)
    tu_split: bool = False
    dist: int = 0
    bits: float = 0.0
    cost: float = 0.0
    candidates: list = field(default_factory=list)  # (label, dist, bits, cost)
    children: list = field(default_factory=list)


def masked_ssd(orig: np.ndarray, recon: np.ndarray, mask: np.ndarray) -> int:
    """Sum of squared differences over mask=1 pixels."""
    if orig.shape != recon.shape or orig.shape != mask.shape:
        raise ValueError("masked_ssd operands must share dimensions")
    d = orig.astype(np.int32) - recon.astype(np.int32)
    return int((d * d * mask).sum(dtype=np.int64))


def rd_cost(distortion: float, bits: float, lam: float) -> float:
    """J = D + lambda * R."""
    if bits < 0:
        raise ValueError("bits must be non-negative")
    return distortion + lam * bits


# ---------------------------------------------------------------------------
# scan order and coefficient coding

_SCAN: dict[int, np.ndarray] = {}
_SIG_CTX_REV: dict[tuple[int, bool], list[int]] = {}

for _n in tf.TRANSFORM_SIZES:
    _pos = sorted(((i + j, i, i * _n + j) for i in range(_n) for j in range(_n)))
    _flat = np.array([p[2] for p in _pos], dtype=np.int64)
    _SCAN[_n] = _flat
    _buckets = [0 if p[0] == 0 else (1 if p[0] < 3 else 2) for p in _pos]
    for _chroma, _base in ((False, CTX_SIG_L), (True, CTX_SIG_C)):
        # context per scan position, stored reversed (coding runs high to low)
        _SIG_CTX_REV[(_n, _chroma)] = [_base + b for b in _buckets[::-1]]


def _eg0_bins(value: int, out: list) -> None:
    t = value + 1
    n = t.bit_length()
    for _ in range(n - 1):
        out.append((-1, 0))
    for k in range(n - 1, -1, -1):
        out.append((-1, (t >> k) & 1))


def encode_coeff_bins(levels: np.ndarray, size: int, chroma: bool, out: list) -> None:
    """Append the coefficient bins for one TU (caller already coded cbf=1).

    Syntax: EG0 of the last significant scan position, significance flags from
    last-1 down to 0, then per significant position (descending) the level:
    greater-1 flag, EG0 remainder, bypass sign.
    """
    flat = levels.ravel()[_SCAN[size]]
    nz = np.flatnonzero(flat)
    last = int(nz[-1])
    _eg0_bins(last, out)
    n2 = flat.shape[0]
    if last:
        sig = (flat[last - 1::-1] != 0).astype(np.int8).tolist()
        out.extend(zip(_SIG_CTX_REV[(size, chroma)][n2 - last:], sig))
    gt1_ctx = CTX_GT1_C if chroma else CTX_GT1_L
    vals = flat[nz].tolist()
    for v in reversed(vals):
        a = -v if v < 0 else v
        if a > 1:
            out.append((gt1_ctx, 1))
            _eg0_bins(a - 2, out)
        else:
            out.append((gt1_ctx, 0))
        out.append((-1, 1 if v < 0 else 0))


def decode_coeffs(dec: Decoder, size: int, chroma: bool) -> np.ndarray:
    last = dec.decode_eg0()
    n2 = size * size
    if last >= n2:
        raise DecodeError("coefficient scan position out of range")
    sig_base = CTX_SIG_C if chroma else CTX_SIG_L
    buckets = _SIG_CTX_REV[(size, chroma)]
    gt1_ctx = CTX_GT1_C if chroma else CTX_GT1_L
    sig_pos = [last]
    for pos in range(last - 1, -1, -1):
        if dec.decode(buckets[n2 - 1 - pos]):
            sig_pos.append(pos)
    flat = [0] * n2
    for pos in sig_pos:
        mag = 1
        if dec.decode(gt1_ctx):
            mag = 2 + dec.decode_eg0()
        if dec.decode_bypass():
            mag = -mag
        flat[pos] = mag
    levels = np.zeros(n2, dtype=np.int64)
    levels[_SCAN[size]] = flat
    return levels.reshape(size, size)


def _merge_idx_bins(idx: int, count: int, out: list) -> None:
    for k in range(idx):
        out.append((CTX_MIDX0 if k == 0 else CTX_MIDX1, 1))
    if idx < count - 1:
        out.append((CTX_MIDX0 if idx == 0 else CTX_MIDX1, 0))


def _decode_merge_idx(dec: Decoder, count: int) -> int:
    idx = 0
    while idx < count - 1 and dec.decode(CTX_MIDX0 if idx == 0 else CTX_MIDX1):
        idx += 1
    return idx


def _mvd_bins(d: int, out: list) -> None:
    a = abs(d)
    out.append((CTX_MVD_GT0, 1 if a else 0))
    if a:
        if a > 1:
            out.append((CTX_MVD_GT1, 1))
            _eg0_bins(a - 2, out)
        else:
            out.append((CTX_MVD_GT1, 0))
        out.append((-1, 1 if d < 0 else 0))


def _decode_mvd(dec: Decoder) -> int:
    if not dec.decode(CTX_MVD_GT0):
        return 0
    mag = 1
    if dec.decode(CTX_MVD_GT1):
        mag = 2 + dec.decode_eg0()
    return -mag if dec.decode_bypass() else mag


def _intra_mode_bins(mode: int, out: list) -> None:
    if mode < 2:
        out.append((CTX_IMODE_ANG, 0))
        out.append((CTX_IMODE_PL, mode))
    else:
        out.append((CTX_IMODE_ANG, 1))
        v = mode - 2
        out.append((-1, (v >> 2) & 1))
        out.append((-1, (v >> 1) & 1))
        out.append((-1, v & 1))


def _decode_intra_mode(dec: Decoder) -> int:
    if not dec.decode(CTX_IMODE_ANG):
        return dec.decode(CTX_IMODE_PL)
    v = dec.decode_bypass() << 2
    v |= dec.decode_bypass() << 1
    v |= dec.decode_bypass()
    return 2 + v


# ---------------------------------------------------------------------------
# motion

_PAD = 40


class ReferenceFrame:
    """Reconstructed frame with edge padding and half-pel interpolations."""

    def __init__(self, planes: list[np.ndarray], mv_grid: np.ndarray,
                 inter_grid: np.ndarray):
        self.planes = planes
        self.mv_grid = mv_grid
        self.inter_grid = inter_grid
        self.hpel: list[list[np.ndarray]] = []
        for p in planes:
            # origin of every interpolated plane sits at (_PAD, _PAD)
            full = np.pad(p.astype(np.int16), ((_PAD, _PAD + 1), (_PAD, _PAD + 1)),
                          mode="edge")
            ii = full[:-1, :-1]
            hh = (full[:-1, :-1] + full[:-1, 1:] + 1) >> 1
            vv = (full[:-1, :-1] + full[1:, :-1] + 1) >> 1
            dd = (full[:-1, :-1] + full[:-1, 1:] + full[1:, :-1] + full[1:, 1:] + 2) >> 2
            self.hpel.append([ii, hh, vv, dd])

    def mc(self, plane: int, x: int, y: int, size: int, mv: tuple[int, int]) -> np.ndarray:
        dy, dx = mv
        sub = ((dy & 1) << 1) | (dx & 1)
        oy = _PAD + y + (dy >> 1)
        ox = _PAD + x + (dx >> 1)
        return self.hpel[plane][sub][oy:oy + size, ox:ox + size]


def build_merge_list(x: int, y: int, inter_grid: np.ndarray, mv_grid: np.ndarray,
                     ref: ReferenceFrame | None) -> list[tuple[int, int]]:
    """Ordered merge candidates: left, above, collocated, zero; deduplicated."""
    cands: list[tuple[int, int]] = []
    if x > 0 and inter_grid[y >> 3, (x - 1) >> 3]:
        c = mv_grid[y >> 3, (x - 1) >> 3]
        cands.append((int(c[0]), int(c[1])))
    if y > 0 and inter_grid[(y - 1) >> 3, x >> 3]:
        c = mv_grid[(y - 1) >> 3, x >> 3]
        cands.append((int(c[0]), int(c[1])))
    if ref is not None and ref.inter_grid is not None and ref.inter_grid[y >> 3, x >> 3]:
        c = ref.mv_grid[y >> 3, x >> 3]
        cands.append((int(c[0]), int(c[1])))
    cands.append((0, 0))
    out: list[tuple[int, int]] = []
    for c in cands:
        if c not in out:
            out.append(c)
    return out[:4]


_STEPS = np.arange(-SEARCH_RANGE, SEARCH_RANGE + 1)
_NSTEP = len(_STEPS)
_BITS_CACHE: dict[int, np.ndarray] = {}


def _mv_bits_row(pred_comp: int) -> np.ndarray:
    out = _BITS_CACHE.get(pred_comp)
    if out is None:
        out = np.array([signed_eg_bits(2 * int(p) - pred_comp) for p in _STEPS],
                       dtype=np.float64)
        _BITS_CACHE[pred_comp] = out
    return out


def sad_universe(orig: np.ndarray, ref: ReferenceFrame, x: int, y: int,
                 plane: int = 0) -> np.ndarray:
    """SAD of `orig` against every integer displacement in [-16, 16]^2."""
    size = orig.shape[0]
    pad = ref.hpel[plane][0]
    area = pad[_PAD + y - SEARCH_RANGE:_PAD + y + SEARCH_RANGE + size,
               _PAD + x - SEARCH_RANGE:_PAD + x + SEARCH_RANGE + size]
    win = np.lib.stride_tricks.sliding_window_view(area, (size, size))
    d = win.astype(np.int32) - orig.astype(np.int32)
    np.abs(d, out=d)
    return d.reshape(_NSTEP, _NSTEP, -1).sum(axis=2, dtype=np.int64)


def motion_search(orig: np.ndarray, ref: ReferenceFrame, x: int, y: int,
                  predictor: tuple[int, int], lambda_pred: float,
                  universe: np.ndarray | None = None) -> tuple[int, int]:
    """Integer full search (SAD + lambda*mvbits) then half-pel SATD refine.

    Both stages are unmasked by design.  The integer stage searches +-16
    samples around the predictor, clamped to the global +-16 MV bound.  Ties
    prefer smaller |mv| (L1), then raster scan order.
    """
    size = orig.shape[0]
    if universe is None:
        universe = sad_universe(orig, ref, x, y)
    cy = predictor[0] >> 1
    cx = predictor[1] >> 1
    costs = universe + lambda_pred * (_mv_bits_row(predictor[0])[:, None]
                                      + _mv_bits_row(predictor[1])[None, :])
    if cy or cx:
        bad_y = np.abs(_STEPS - cy) > SEARCH_RANGE
        bad_x = np.abs(_STEPS - cx) > SEARCH_RANGE
        costs[bad_y, :] = np.inf
        costs[:, bad_x] = np.inf
    m = costs.min()
    ties = np.argwhere(costs == m)
    best = min(
        (abs(int(_STEPS[iy])) + abs(int(_STEPS[ix])), k, (int(_STEPS[iy]), int(_STEPS[ix])))
        for k, (iy, ix) in enumerate(ties.tolist())
    )[2]
    mv = (2 * best[0], 2 * best[1])
    # half-pel refinement around the integer winner
    best_cost = None
    best_mv = mv
    for ddy in (-1, 0, 1):
        for ddx in (-1, 0, 1):
            cand = (mv[0] + ddy, mv[1] + ddx)
            if abs(cand[0]) > MAX_MV or abs(cand[1]) > MAX_MV:
                continue
            pred = ref.mc(0, x, y, size, cand)
            c = tf.satd(orig, pred) + lambda_pred * (
                signed_eg_bits(cand[0] - predictor[0]) + signed_eg_bits(cand[1] - predictor[1]))
            key = (c, abs(cand[0]) + abs(cand[1]))
            if best_cost is None or key < best_cost:
                best_cost = key
                best_mv = cand
    return best_mv


# ---------------------------------------------------------------------------
# frame encoder

def _tu_layout(x: int, y: int, size: int, tu_split: bool):
    if size == CTU:
        h = size >> 1
        return ((x, y, h), (x + h, y, h), (x, y + h, h), (x + h, y + h, h))
    if tu_split:
        h = size >> 1
        return ((x, y, h), (x + h, y, h), (x, y + h, h), (x + h, y + h, h))
    return ((x, y, size),)


class FrameEncoder:
    def __init__(self, planes: list[np.ndarray], rdo: RdoContext,
                 ref: ReferenceFrame | None = None, collect: bool = False):
        h, w = planes[0].shape
        if h % CTU or w % CTU:
            raise ValueError(f"frame dims {w}x{h} must be multiples of {CTU}")
        self.w, self.h = w, h
        self.orig = [p.astype(np.int32) for p in planes]
        self.np_ = len(planes)
        self.rdo = rdo
        if rdo.masking_enabled:
            self.mask = rdo.mask.astype(np.int32)
        else:
            self.mask = np.ones((h, w), dtype=np.int32)
        self.recon = [np.zeros((h, w), dtype=np.int32) for _ in planes]
        self.coded = np.zeros((h >> 2, w >> 2), dtype=np.uint8)
        self.mv_grid = np.zeros((h >> 3, w >> 3, 2), dtype=np.int32)
        self.inter_grid = np.zeros((h >> 3, w >> 3), dtype=np.uint8)
        self.ref = ref
        self.is_intra = ref is None
        self.enc = Encoder(N_CTX)
        self.collect = collect
        self.decisions: list[CodingDecision] = []
        self.sao_params: list = []
        self._sat = None
        self._sat_org = (0, 0)

    # one abs-difference pass per CTU serves every quadtree motion search:
    # CU origins and sizes are multiples of 8, so 8x8 tile SADs per shift
    # are enough to assemble any CU's full-search grid
    def _prepare_ctu_sads(self, x, y):
        pad = self.ref.hpel[0][0]
        orig = self.orig[0][y:y + CTU, x:x + CTU].astype(np.int16)
        area = np.ascontiguousarray(
            pad[_PAD + y - SEARCH_RANGE:_PAD + y + SEARCH_RANGE + CTU,
                _PAD + x - SEARCH_RANGE:_PAD + x + SEARCH_RANGE + CTU])
        tiles = np.empty((_NSTEP, _NSTEP, 8, 8), dtype=np.int32)
        for i in range(_NSTEP):
            sw = np.lib.stride_tricks.sliding_window_view(area[i:i + CTU], CTU, axis=1)
            d = np.abs(sw - orig[:, None, :])
            t = d.reshape(8, 8, _NSTEP, 8, 8).sum(axis=(1, 4), dtype=np.int32)
            tiles[i] = t.transpose(1, 0, 2)
        self._sat = tiles
        self._sat_org = (x, y)

    def _sad_grid(self, x, y, s) -> np.ndarray:
        bx = (x - self._sat_org[0]) >> 3
        by = (y - self._sat_org[1]) >> 3
        t = s >> 3
        sub = self._sat[:, :, by:by + t, bx:bx + t]
        if t == 1:
            return sub[:, :, 0, 0].astype(np.int64)
        return sub.sum(axis=(2, 3), dtype=np.int64)

    # -- state tiles ---------------------------------------------------------

    def _save_tile(self, x, y, s):
        return (
            [p[y:y + s, x:x + s].copy() for p in self.recon],
            self.coded[y >> 2:(y + s) >> 2, x >> 2:(x + s) >> 2].copy(),
            self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3].copy(),
            self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3].copy(),
        )

    def _restore_tile(self, x, y, s, tile):
        rec, coded, mv, ig = tile
        for p, t in zip(self.recon, rec):
            p[y:y + s, x:x + s] = t
        self.coded[y >> 2:(y + s) >> 2, x >> 2:(x + s) >> 2] = coded
        self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = mv
        self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = ig

    def _mark_coded(self, x, y, s):
        self.coded[y >> 2:(y + s) >> 2, x >> 2:(x + s) >> 2] = 1

    def _set_inter(self, x, y, s, mv):
        self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = mv
        self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 1

    def _set_intra(self, x, y, s):
        self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 0
        self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 0

    def _dist(self, x, y, s) -> int:
        msk = self.mask[y:y + s, x:x + s]
        total = 0
        for pl in range(self.np_):
            d = self.orig[pl][y:y + s, x:x + s] - self.recon[pl][y:y + s, x:x + s]
            total += int((d * d * msk).sum(dtype=np.int64))
        return total

    # -- shared coding paths (encoder side) ----------------------------------

    def _code_tu_plane(self, pl, tx, ty, ts, pred, intra: bool) -> int:
        """Code one TU for one plane with the zero-block RD decision.

        Coding the quantized residual competes against forcing cbf=0; both
        use exact trial bits and masked distortion.  Returns the TU's masked
        distortion and leaves recon/coder at the winning state.
        """
        enc = self.enc
        qp = self.rdo.qp
        lam = self.rdo.lambda_full
        orig = self.orig[pl][ty:ty + ts, tx:tx + ts]
        msk = self.mask[ty:ty + ts, tx:tx + ts]
        resid = orig - pred
        levels = tf.quantize_block(tf.forward_transform(resid, ts), qp, intra, ts)
        ctx = CTX_CBF_C if pl else CTX_CBF_L
        if not levels.any():
            enc.encode(ctx, 0)
            self.recon[pl][ty:ty + ts, tx:tx + ts] = pred
            return int((resid * resid * msk).sum(dtype=np.int64))
        d_zero = int((resid * resid * msk).sum(dtype=np.int64))
        if d_zero == 0 and enc.c1[ctx] <= 4 * enc.c0[ctx]:
            # zero distortion either way and the cbf=0 bin costs at most
            # 2 bits more than cbf=1, while coefficient bins cost >= 2 bits:
            # forcing the zero block is guaranteed to win the RD trial
            enc.encode(ctx, 0)
            self.recon[pl][ty:ty + ts, tx:tx + ts] = pred
            return 0
        snap = enc.save()
        f0 = enc.frac_bits()
        enc.encode(ctx, 0)
        bits_zero = enc.frac_bits() - f0
        enc.restore(snap)
        bins = [(ctx, 1)]
        encode_coeff_bins(levels, ts, pl > 0, bins)
        enc.encode_list(bins)
        rec = pred + tf.inverse_transform(tf.dequantize_block(levels, qp, ts), ts)
        np.clip(rec, 0, 255, out=rec)
        err = orig - rec
        d_coded = int((err * err * msk).sum(dtype=np.int64))
        if d_zero + lam * bits_zero <= d_coded + lam * (enc.frac_bits() - f0):
            enc.restore(snap)
            enc.encode(ctx, 0)
            self.recon[pl][ty:ty + ts, tx:tx + ts] = pred
            return d_zero
        self.recon[pl][ty:ty + ts, tx:tx + ts] = rec
        return d_coded

    def _code_intra_payload(self, x, y, s, mode, tu_split, luma_pred=None,
                            f0=0.0, abort_above=np.inf):
        """Code TUs, reconstruct, return accumulated masked distortion.

        Returns None when the partial cost already exceeds abort_above - the
        caller discards such candidates without measuring further.
        """
        enc = self.enc
        lam = self.rdo.lambda_full
        dist = 0
        for tx, ty, ts in _tu_layout(x, y, s, tu_split):
            for pl in range(self.np_):
                if pl == 0 and luma_pred is not None and ts == s:
                    pred = luma_pred
                else:
                    pred = intra_pred.predict(self.recon[pl], self.coded, tx, ty, ts, mode)
                dist += self._code_tu_plane(pl, tx, ty, ts, pred, True)
            if dist + lam * (enc.frac_bits() - f0) > abort_above:
                return None
            self._mark_coded(tx, ty, ts)
        return dist

    def _code_inter_residual(self, x, y, s, mv, tu_split, f0=0.0, abort_above=np.inf):
        enc = self.enc
        lam = self.rdo.lambda_full
        preds = [self.ref.mc(pl, x, y, s, mv) for pl in range(self.np_)]
        dist = 0
        for tx, ty, ts in _tu_layout(x, y, s, tu_split):
            for pl in range(self.np_):
                pred = preds[pl][ty - y:ty - y + ts, tx - x:tx - x + ts].astype(np.int32)
                dist += self._code_tu_plane(pl, tx, ty, ts, pred, False)
            if dist + lam * (enc.frac_bits() - f0) > abort_above:
                return None
        self._mark_coded(x, y, s)
        self._set_inter(x, y, s, mv)
        return dist

    def _rough_intra(self, x, y, s):
        """Top-3 modes by unmasked SATD + lambda_pred * mode bits.

        Returns (modes, cached luma predictions) - the cache is valid for
        whole-CU prediction because every candidate trial restores the
        reconstruction to the same entry state the predictions were made from.
        """
        orig = self.orig[0][y:y + s, x:x + s]
        lam = self.rdo.lambda_pred
        above, left = intra_pred.gather_refs(self.recon[0], self.coded, x, y, s)
        preds = [intra_pred.predict_from_refs(above, left, s, m)
                 for m in range(intra_pred.NUM_MODES)]
        diffs = np.stack(preds) - orig[None]
        satds = tf.satd_many(diffs)
        scored = sorted((int(satds[m]) + lam * intra_pred.mode_bit_length(m), m)
                        for m in range(intra_pred.NUM_MODES))
        return [m for _, m in scored[:3]], preds

    # -- leaf RDO -------------------------------------------------------------

    def _rdo_leaf(self, x, y, s, prefix) -> tuple[int, CodingDecision | None]:
        enc = self.enc
        lam = self.rdo.lambda_full
        entry = enc.save()
        tile0 = self._save_tile(x, y, s)
        f0 = enc.frac_bits()
        best = None  # (cost, order, capture, tile, dist, info)
        cand_log = [] if self.collect else None

        def consider(dist, info):
            nonlocal best
            bits = enc.frac_bits() - f0
            cost = dist + lam * bits
            if cand_log is not None:
                cand_log.append((info, dist, bits, cost))
            if best is None or cost < best[0]:
                best = (cost, enc.capture(entry), self._save_tile(x, y, s), dist, bits, info)
            return dist == 0

        tu_opts = (False,) if s == CTU else (False, True)
        perfect = False

        if not self.is_intra:
            mlist = build_merge_list(x, y, self.inter_grid, self.mv_grid, self.ref)
            n_m = len(mlist)
            zero_resid = []
            # skip: motion-compensated copy, no residual
            for i, mv in enumerate(mlist):
                enc.restore(entry)
                self._restore_tile(x, y, s, tile0)
                bins = list(prefix)
                bins.append((CTX_SKIP, 1))
                _merge_idx_bins(i, n_m, bins)
                enc.encode_list(bins)
                exact = True
                for pl in range(self.np_):
                    pred = self.ref.mc(pl, x, y, s, mv)
                    self.recon[pl][y:y + s, x:x + s] = pred
                    if exact and not np.array_equal(pred, self.orig[pl][y:y + s, x:x + s]):
                        exact = False
                zero_resid.append(exact)
                self._mark_coded(x, y, s)
                self._set_inter(x, y, s, mv)
                perfect |= consider(self._dist(x, y, s), ("skip", i, mv, False))
            # merge with coded residual; a candidate whose prediction is
            # already exact reconstructs identically to its skip variant
            for i, mv in enumerate(mlist):
                if perfect:
                    break
                if zero_resid[i]:
                    continue
                for tsp in tu_opts:
                    enc.restore(entry)
                    self._restore_tile(x, y, s, tile0)
                    bins = list(prefix)
                    bins.append((CTX_SKIP, 0))
                    bins.append((CTX_INTRA, 0))
                    bins.append((CTX_MERGE, 1))
                    _merge_idx_bins(i, n_m, bins)
                    if s < CTU:
                        bins.append((CTX_TUSPLIT, 1 if tsp else 0))
                    enc.encode_list(bins)
                    d = self._code_inter_residual(x, y, s, mv, tsp, f0,
                                                  best[0] if best else np.inf)
                    if d is None:
                        continue
                    if consider(d, ("merge", i, mv, tsp)):
                        perfect = True
                        break
            # AMVP
            if not perfect:
                mvp = mlist[0]
                mv = motion_search(self.orig[0][y:y + s, x:x + s], self.ref, x, y,
                                   mvp, self.rdo.lambda_pred,
                                   universe=self._sad_grid(x, y, s))
                for tsp in tu_opts:
                    enc.restore(entry)
                    self._restore_tile(x, y, s, tile0)
                    bins = list(prefix)
                    bins.append((CTX_SKIP, 0))
                    bins.append((CTX_INTRA, 0))
                    bins.append((CTX_MERGE, 0))
                    _mvd_bins(mv[0] - mvp[0], bins)
                    _mvd_bins(mv[1] - mvp[1], bins)
                    if s < CTU:
                        bins.append((CTX_TUSPLIT, 1 if tsp else 0))
                    enc.encode_list(bins)
                    d = self._code_inter_residual(x, y, s, mv, tsp, f0,
                                                  best[0] if best else np.inf)
                    if d is None:
                        continue
                    if consider(d, ("amvp", -1, mv, tsp)):
                        perfect = True
                        break

        # intra (the only path in I frames, fallback in P frames)
        if not perfect:
            enc.restore(entry)
            self._restore_tile(x, y, s, tile0)
            cands, rough_preds = self._rough_intra(x, y, s)
            for mode in cands:
                for tsp in tu_opts:
                    enc.restore(entry)
                    self._restore_tile(x, y, s, tile0)
                    bins = list(prefix)
                    if not self.is_intra:
                        bins.append((CTX_SKIP, 0))
                        bins.append((CTX_INTRA, 1))
                    _intra_mode_bins(mode, bins)
                    if s < CTU:
                        bins.append((CTX_TUSPLIT, 1 if tsp else 0))
                    enc.encode_list(bins)
                    d = self._code_intra_payload(x, y, s, mode, tsp,
                                                 None if tsp else rough_preds[mode],
                                                 f0, best[0] if best else np.inf)
                    if d is None:
                        continue
                    self._set_intra(x, y, s)
                    if consider(d, ("intra", mode, (0, 0), tsp)):
                        perfect = True
                        break
                if perfect:
                    break

        cost, cap, tile, dist, bits, info = best
        enc.restore(entry)
        enc.commit(entry, cap)
        self._restore_tile(x, y, s, tile)
        dec = None
        if self.collect:
            kind, aux, mv, tsp = info
            dec = CodingDecision(x, y, s, mode=kind, tu_split=tsp, dist=dist,
                                 bits=bits, cost=cost, mv=tuple(mv))
            if kind == "intra":
                dec.intra_dir = aux
            elif kind != "amvp":
                dec.merge_idx = aux
            dec.candidates = cand_log
        return dist, cost, dec

    # -- quadtree -------------------------------------------------------------

    def _rdo_cu(self, x, y, s, depth) -> tuple[int, float, CodingDecision | None]:
        enc = self.enc
        lam = self.rdo.lambda_full
        f0 = enc.frac_bits()
        entry = enc.save()
        tile0 = self._save_tile(x, y, s)
        prefix = [(CTX_SPLIT0 + depth, 0)] if s > MIN_CU else []
        dist_a, _, dec_a = self._rdo_leaf(x, y, s, prefix)
        cost_a = dist_a + lam * (enc.frac_bits() - f0)
        # a zero-distortion leaf is already essentially bits-minimal:
        # splitting can only add syntax, so the recursion stops here
        if s == MIN_CU or dist_a == 0:
            return dist_a, cost_a, dec_a
        cap_a = enc.capture(entry)
        tile_a = self._save_tile(x, y, s)
        enc.restore(entry)
        self._restore_tile(x, y, s, tile0)
        enc.encode(CTX_SPLIT0 + depth, 1)
        h = s >> 1
        dist_b = 0
        kids = []
        for cx, cy in ((x, y), (x + h, y), (x, y + h), (x + h, y + h)):
            d, _, kd = self._rdo_cu(cx, cy, h, depth + 1)
            dist_b += d
            kids.append(kd)
        cost_b = dist_b + lam * (enc.frac_bits() - f0)
        if cost_b < cost_a:
            if self.collect:
                node = CodingDecision(x, y, s, split=True, dist=dist_b,
                                      bits=enc.frac_bits() - f0, cost=cost_b)
                node.children = kids
                return dist_b, cost_b, node
            return dist_b, cost_b, None
        enc.restore(entry)
        enc.commit(entry, cap_a)
        self._restore_tile(x, y, s, tile_a)
        return dist_a, cost_a, dec_a

    # -- SAO ------------------------------------------------------------------

    def _sao_stage(self) -> None:
        enc = self.enc
        lam = self.rdo.lambda_full
        pre = [p.copy() for p in self.recon]
        params_all = []
        for y in range(0, self.h, CTU):
            for x in range(0, self.w, CTU):
                rect = (x, y, CTU, CTU)
                for pl in range(self.np_):
                    stats = sao_mod.collect_stats(self.orig[pl], pre[pl], self.mask, rect)

                    def bits_fn(params):
                        snap = enc.save()
                        f0 = enc.frac_bits()
                        encode_sao_params(enc, params)
                        b = enc.frac_bits() - f0
                        enc.restore(snap)
                        return b

                    params = sao_mod.select_sao(stats, lam, bits_fn)
                    encode_sao_params(enc, params)
                    params_all.append(params)
                    sao_mod.apply_sao(pre[pl], params, rect, out=self.recon[pl])
        self.sao_params = params_all

    # -- top level -------------------------------------------------------------

    def encode(self):
        for y in range(0, self.h, CTU):
            for x in range(0, self.w, CTU):
                if not self.is_intra:
                    self._prepare_ctu_sads(x, y)
                _, _, dec = self._rdo_cu(x, y, CTU, 0)
                if self.collect:
                    self.decisions.append(dec)
        self._sao_stage()
        return self.enc.finish()


@dataclass
class EncodedFrame:
    payload: bytes
    recon: list[np.ndarray]          # uint8 planes
    mv_grid: np.ndarray
    inter_grid: np.ndarray
    decisions: list[CodingDecision]
    sao_params: list


def encode_frame(planes: list[np.ndarray], rdo: RdoContext,
                 ref: ReferenceFrame | None = None,
                 collect_decisions: bool = False) -> EncodedFrame:
    fe = FrameEncoder(planes, rdo, ref, collect_decisions)
    payload = fe.encode()
    recon = [p.astype(np.uint8) for p in fe.recon]
    return EncodedFrame(payload, recon, fe.mv_grid, fe.inter_grid,
                        fe.decisions, fe.sao_params)


def encode_sao_params(enc: Encoder, params) -> None:
    kind, aux, offsets = params
    if kind == "off":
        enc.encode(CTX_SAO_ON, 0)
        return
    bins = [(CTX_SAO_ON, 1), (CTX_SAO_TYPE, 0 if kind == "eo" else 1)]
    if kind == "eo":
        bins.append((-1, (aux >> 1) & 1))
        bins.append((-1, aux & 1))
    else:
        for k in range(4, -1, -1):
            bins.append((-1, (aux >> k) & 1))
    for i, off in enumerate(offsets):
        mag = abs(off)
        for _ in range(mag):
            bins.append((CTX_SAO_MAG, 1))
        if mag < 7:
            bins.append((CTX_SAO_MAG, 0))
        if kind == "band" and mag:
            bins.append((-1, 1 if off < 0 else 0))
    enc.encode_list(bins)


def decode_sao_params(dec: Decoder):
    if not dec.decode(CTX_SAO_ON):
        return ("off", 0, (0, 0, 0, 0))
    is_band = dec.decode(CTX_SAO_TYPE)
    if is_band:
        aux = dec.decode_bypass_bits(5)
        if aux > 28:
            raise DecodeError(f"band start {aux} out of range")
    else:
        aux = dec.decode_bypass_bits(2)
    offsets = []
    for i in range(4):
        mag = 0
        while mag < 7 and dec.decode(CTX_SAO_MAG):
            mag += 1
        if is_band:
            if mag and dec.decode_bypass():
                mag = -mag
            offsets.append(mag)
        else:
            # edge categories 1,2 are non-negative; 3,4 non-positive
            offsets.append(mag if i < 2 else -mag)
    return ("band" if is_band else "eo", aux, tuple(offsets))


# ---------------------------------------------------------------------------
# frame decoder


class FrameDecoder:
    def __init__(self, payload: bytes, qp: int, shape: tuple[int, int],
                 n_planes: int, ref: ReferenceFrame | None = None):
        self.h, self.w = shape
        self.qp = qp
        self.np_ = n_planes
        self.ref = ref
        self.is_intra = ref is None
        self.dec = Decoder(payload, N_CTX)
        self.recon = [np.zeros(shape, dtype=np.int32) for _ in range(n_planes)]
        self.coded = np.zeros((self.h >> 2, self.w >> 2), dtype=np.uint8)
        self.mv_grid = np.zeros((self.h >> 3, self.w >> 3, 2), dtype=np.int32)
        self.inter_grid = np.zeros((self.h >> 3, self.w >> 3), dtype=np.uint8)

    def _intra_payload(self, x, y, s, mode, tu_split):
        dec = self.dec
        for tx, ty, ts in _tu_layout(x, y, s, tu_split):
            for pl in range(self.np_):
                pred = intra_pred.predict(self.recon[pl], self.coded, tx, ty, ts, mode)
                if dec.decode(CTX_CBF_C if pl else CTX_CBF_L):
                    levels = decode_coeffs(dec, ts, pl > 0)
                    rec = pred + tf.inverse_transform(
                        tf.dequantize_block(levels, self.qp, ts), ts)
                    np.clip(rec, 0, 255, out=rec)
                else:
                    rec = pred
                self.recon[pl][ty:ty + ts, tx:tx + ts] = rec
            self.coded[ty >> 2:(ty + ts) >> 2, tx >> 2:(tx + ts) >> 2] = 1
        self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 0
        self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 0

    def _inter_residual(self, x, y, s, mv, tu_split):
        dec = self.dec
        preds = [self.ref.mc(pl, x, y, s, mv) for pl in range(self.np_)]
        for tx, ty, ts in _tu_layout(x, y, s, tu_split):
            for pl in range(self.np_):
                pred = preds[pl][ty - y:ty - y + ts, tx - x:tx - x + ts].astype(np.int32)
                if dec.decode(CTX_CBF_C if pl else CTX_CBF_L):
                    levels = decode_coeffs(dec, ts, pl > 0)
                    rec = pred + tf.inverse_transform(
                        tf.dequantize_block(levels, self.qp, ts), ts)
                    np.clip(rec, 0, 255, out=rec)
                else:
                    rec = pred
                self.recon[pl][ty:ty + ts, tx:tx + ts] = rec
        self.coded[y >> 2:(y + s) >> 2, x >> 2:(x + s) >> 2] = 1
        self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = mv
        self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 1

    def _leaf(self, x, y, s):
        dec = self.dec
        if not self.is_intra:
            if dec.decode(CTX_SKIP):
                mlist = build_merge_list(x, y, self.inter_grid, self.mv_grid, self.ref)
                mv = mlist[_decode_merge_idx(dec, len(mlist))]
                for pl in range(self.np_):
                    self.recon[pl][y:y + s, x:x + s] = self.ref.mc(pl, x, y, s, mv)
                self.coded[y >> 2:(y + s) >> 2, x >> 2:(x + s) >> 2] = 1
                self.mv_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = mv
                self.inter_grid[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = 1
                return
            if not dec.decode(CTX_INTRA):
                mlist = build_merge_list(x, y, self.inter_grid, self.mv_grid, self.ref)
                if dec.decode(CTX_MERGE):
                    mv = mlist[_decode_merge_idx(dec, len(mlist))]
                else:
                    mvp = mlist[0]
                    mv = (mvp[0] + _decode_mvd(dec), mvp[1] + _decode_mvd(dec))
                    if abs(mv[0]) > MAX_MV or abs(mv[1]) > MAX_MV:
                        raise DecodeError("motion vector out of range")
                tsp = bool(dec.decode(CTX_TUSPLIT)) if s < CTU else False
                self._inter_residual(x, y, s, mv, tsp)
                return
        mode = _decode_intra_mode(self.dec)
        tsp = bool(self.dec.decode(CTX_TUSPLIT)) if s < CTU else False
        self._intra_payload(x, y, s, mode, tsp)

    def _cu(self, x, y, s, depth):
        if s > MIN_CU and self.dec.decode(CTX_SPLIT0 + depth):
            h = s >> 1
            for cx, cy in ((x, y), (x + h, y), (x, y + h), (x + h, y + h)):
                self._cu(cx, cy, h, depth + 1)
            return
        self._leaf(x, y, s)

    def decode(self):
        for y in range(0, self.h, CTU):
            for x in range(0, self.w, CTU):
                self._cu(x, y, CTU, 0)
        # SAO parameters then uniform application
        pre = [p.copy() for p in self.recon]
        sao_params = []
        for y in range(0, self.h, CTU):
            for x in range(0, self.w, CTU):
                for pl in range(self.np_):
                    params = decode_sao_params(self.dec)
                    sao_params.append(params)
                    sao_mod.apply_sao(pre[pl], params, (x, y, CTU, CTU),
                                      out=self.recon[pl])
        self.dec.check_sentinel()
        return [p.astype(np.uint8) for p in self.recon], self.mv_grid, self.inter_grid, sao_params


def decode_frame(payload: bytes, qp: int, shape: tuple[int, int], n_planes: int,
                 ref: ReferenceFrame | None = None):
    return FrameDecoder(payload, qp, shape, n_planes, ref).decode()
