"""Intra prediction: planar, DC and eight angular modes.

Angular modes use HEVC-style 1/32-sample interpolation at angles
{+-32, +-13, 0} in both the horizontal and vertical families.  Reference
samples come from the reconstructed frame; samples that are outside the frame
or not yet coded (per the 4x4 coded-cell map) are padded with 128, so encoder
and decoder derive identical predictions from identical state.
"""

from __future__ import annotations

import numpy as np

PLANAR, DC = 0, 1
NUM_MODES = 10

# modes 2..9: (vertical_family, angle in 1/32 samples)
_ANGLES = {
    2: (False, 32),
    3: (False, 13),
    4: (False, 0),    # pure horizontal
    5: (False, -13),
    6: (True, -32),   # down-left diagonal
    7: (True, -13),
    8: (True, 0),     # pure vertical
    9: (True, 13),
}
_INV_ANGLE = {-13: -630, -32: -256}

VERTICAL_MODE = 8
HORIZONTAL_MODE = 4


def mode_bit_length(mode: int) -> int:
    """Binarization length: 2 bins for planar/DC, 4 for angular."""
    return 2 if mode < 2 else 4


def gather_refs(recon: np.ndarray, coded: np.ndarray, x: int, y: int, size: int):
    """Above/left reference arrays of length 2*size+1 (index 0 = corner).

    Availability is geometric plus the coded-cell map; unavailable samples are
    padded with the last available one, or 128 when nothing is available.
    """
    h, w = recon.shape
    above = np.full(2 * size + 1, 128, dtype=np.int32)
    left = np.full(2 * size + 1, 128, dtype=np.int32)
    if y > 0:
        n_avail = min(2 * size, w - x)
        if n_avail > size:
            lim = size
            cy = (y - 1) >> 2
            for xx in range(x + size, x + n_avail):
                if coded[cy, xx >> 2]:
                    lim = xx - x + 1
                else:
                    break
            n_avail = lim
        above[1:1 + n_avail] = recon[y - 1, x:x + n_avail]
        if n_avail < 2 * size:
            above[1 + n_avail:] = above[n_avail]
    if x > 0:
        n_avail = min(2 * size, h - y)
        if n_avail > size:
            lim = size
            cx = (x - 1) >> 2
            for yy in range(y + size, y + n_avail):
                if coded[yy >> 2, cx]:
                    lim = yy - y + 1
                else:
                    break
            n_avail = lim
        left[1:1 + n_avail] = recon[y:y + n_avail, x - 1]
        if n_avail < 2 * size:
            left[1 + n_avail:] = left[n_avail]
    if x > 0 and y > 0:
        corner = int(recon[y - 1, x - 1])
        above[0] = corner
        left[0] = corner
    elif y > 0:
        above[0] = left[0] = int(above[1])
    elif x > 0:
        above[0] = left[0] = int(left[1])
    return above, left


def _angular(above: np.ndarray, left: np.ndarray, size: int, vertical: bool,
             angle: int) -> np.ndarray:
    main, side = (above, left) if vertical else (left, above)
    # ref[size + i] holds main reference position i (0 = corner sample)
    ref = np.zeros(3 * size + 2, dtype=np.int32)
    ref[size:] = np.append(main, main[-1])
    if angle < 0:
        inv = _INV_ANGLE[angle]
        last = (size * angle) >> 5
        for i in range(-1, last - 1, -1):
            ref[size + i] = side[min((i * inv + 128) >> 8, 2 * size)]
    pos = np.arange(1, size + 1, dtype=np.int64) * angle
    idx = pos >> 5
    frac = (pos & 31)[:, None]
    cols = np.arange(size, dtype=np.int64)[None, :]
    base = size + 1 + idx[:, None] + cols
    lo = ref[base]
    hi = ref[base + 1]
    pred = ((32 - frac) * lo + frac * hi + 16) >> 5
    return pred if vertical else pred.T


def predict_from_refs(above: np.ndarray, left: np.ndarray, size: int,
                      mode: int) -> np.ndarray:
    shift = size.bit_length()  # log2(size) + 1
    if mode == DC:
        dc = (int(above[1:size + 1].sum()) + int(left[1:size + 1].sum()) + size) >> shift
        return np.full((size, size), dc, dtype=np.int32)
    if mode == PLANAR:
        tr = int(above[size + 1])
        bl = int(left[size + 1])
        xs = np.arange(size, dtype=np.int32)
        ys = xs[:, None]
        hor = (size - 1 - xs)[None, :] * left[1:size + 1][:, None] + (xs + 1)[None, :] * tr
        ver = (size - 1 - ys) * above[1:size + 1][None, :] + (ys + 1) * bl
        return (hor + ver + size) >> shift
    vertical, angle = _ANGLES[mode]
    return _angular(above, left, size, vertical, angle)


def predict(recon: np.ndarray, coded: np.ndarray, x: int, y: int, size: int,
            mode: int) -> np.ndarray:
    """Prediction block for one mode from reconstructed neighbors."""
    above, left = gather_refs(recon, coded, x, y, size)
    return predict_from_refs(above, left, size, mode)
