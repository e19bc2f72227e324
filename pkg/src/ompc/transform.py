"""Integer transforms and quantization for the block codec.

The 2-D transforms are separable integer DCT-II approximations whose rows are
exactly orthogonal by construction, so the inverse (transpose with exact
per-axis division by the row norms) reproduces any residual bit-exactly when
no quantization intervenes.  A plainly rounded cosine basis cannot do this:
its Gram matrix is only approximately diagonal and the reconstruction error
exceeds half a pixel step in the worst case.

Construction: the 4-point kernels are integer vectors shaped like the scaled
cosine basis; the recursion L_{2N} = interleave([L_N | mirror], [L_N | -mirror])
over sum/difference halves keeps every pair of rows exactly orthogonal.  The
odd 4-point kernel (60, 51, 34, 12) satisfies the single orthogonality
constraint a*(b-c) == d*(b+c).

Row norms are unequal, so the quantizer folds the per-coefficient scale
sqrt(nu_k * nu_l) into its divisor (same idea as H.264's dequant matrices).
"""

from __future__ import annotations

import numpy as np

TRANSFORM_SIZES = (4, 8, 16, 32)

# Qstep = 2**((qp-4)/6), stored as round(2**(i/6) * 2**20) mantissas.
_QSTEP_M20 = (1048576, 1176987, 1321123, 1482910, 1664511, 1868350)

_DEADZONE = {True: (1, 3), False: (1, 6)}  # intra: 1/3, inter: 1/6


def _build_bases() -> dict[int, np.ndarray]:
    L4 = np.array(
        [
            [32, 32, 32, 32],
            [48, 20, -20, -48],
            [32, -32, -32, 32],
            [20, -48, 48, -20],
        ],
        dtype=np.int64,
    )
    a, b, c, d = 60, 51, 34, 12
    O4 = np.array(
        [
            [a, b, c, d],
            [b, -d, -a, -c],
            [c, -a, d, b],
            [d, -c, b, -a],
        ],
        dtype=np.int64,
    )
    L8 = np.zeros((8, 8), dtype=np.int64)
    for k in range(4):
        L8[2 * k, :4] = L4[k]
        L8[2 * k, 4:] = L4[k][::-1]
        L8[2 * k + 1, :4] = O4[k]
        L8[2 * k + 1, 4:] = -O4[k][::-1]

    def extend(half: np.ndarray) -> np.ndarray:
        m = half.shape[0]
        full = np.zeros((2 * m, 2 * m), dtype=np.int64)
        for k in range(m):
            full[2 * k, :m] = half[k]
            full[2 * k, m:] = half[k][::-1]
            full[2 * k + 1, :m] = half[k]
            full[2 * k + 1, m:] = -half[k][::-1]
        return full

    L16 = extend(L8)
    return {4: L4, 8: L8, 16: L16, 32: extend(L16)}


BASIS = _build_bases()

# Row norms nu_k = ||row_k||^2 and the per-axis exact-inverse machinery:
# x = (INV @ y) // LCM with INV[i, k] = L[k, i] * (LCM // nu_k).
ROW_NORMS: dict[int, np.ndarray] = {}
_INV: dict[int, np.ndarray] = {}
_LCM: dict[int, int] = {}

for _n, _L in BASIS.items():
    _nu = np.einsum("ij,ij->i", _L, _L)
    assert not (_L @ _L.T - np.diag(_nu)).any(), "transform rows must be orthogonal"
    _m = 1
    for _v in _nu.tolist():
        _g, _a, _b = np.gcd(_m, _v), _m, _v
        _m = _a // _g * _b
    ROW_NORMS[_n] = _nu
    _LCM[_n] = int(_m)
    _INV[_n] = _L.T * (_m // _nu)[None, :]


def forward_transform(residual: np.ndarray, size: int) -> np.ndarray:
    """2-D analysis transform, exact in int64 (no intermediate rounding)."""
    if size not in BASIS:
        raise ValueError(f"unsupported transform size {size}")
    L = BASIS[size]
    return L @ residual.astype(np.int64) @ L.T


def inverse_transform(coeffs: np.ndarray, size: int) -> np.ndarray:
    """Exact inverse of forward_transform; rounds when coeffs were quantized."""
    if size not in BASIS:
        raise ValueError(f"unsupported transform size {size}")
    inv = _INV[size]
    m = _LCM[size]
    half = m >> 1
    x = (inv @ coeffs.astype(np.int64) + half) // m
    x = (x @ inv.T + half) // m
    return x


# ---------------------------------------------------------------------------
# quantization


def qstep(qp: int) -> float:
    """Quantizer step size 2**((qp-4)/6) (dyadic-rational approximation)."""
    e = qp - 4
    return _QSTEP_M20[e % 6] * 2.0 ** (e // 6) / (1 << 20)


def _qnum(qp: int) -> int:
    """Qstep * 2**20 as an integer (exact for power-of-two steps)."""
    e = qp - 4
    m = _QSTEP_M20[e % 6]
    k = e // 6
    return m << k if k >= 0 else (m + (1 << (-k - 1))) >> -k


def quantize(coeffs: np.ndarray, qp: int, intra: bool) -> np.ndarray:
    """Deadzone quantizer: level = sign * floor(|c|/Qstep + f)."""
    if not 0 <= qp <= 51:
        raise ValueError(f"qp {qp} out of range 0..51")
    c = np.asarray(coeffs, dtype=np.int64)
    fn, fd = _DEADZONE[bool(intra)]
    q = _qnum(qp)
    mag = (np.abs(c) * ((1 << 20) * fd) + fn * q) // (fd * q)
    return np.sign(c) * mag


def dequantize(levels: np.ndarray, qp: int) -> np.ndarray:
    """c' = level * Qstep rounded half away from zero."""
    if not 0 <= qp <= 51:
        raise ValueError(f"qp {qp} out of range 0..51")
    lv = np.asarray(levels, dtype=np.int64)
    q = _qnum(qp)
    return np.sign(lv) * ((np.abs(lv) * q + (1 << 19)) >> 20)


# codec-internal variants: fold the per-coefficient transform row-norm scale
# sqrt(nu_k * nu_l) into the divisor, at 2**-12 resolution.

_QDIV_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _qdiv(qp: int, size: int) -> np.ndarray:
    key = (qp, size)
    out = _QDIV_CACHE.get(key)
    if out is None:
        nu = ROW_NORMS[size].astype(np.float64)
        scale8 = np.rint(np.sqrt(np.outer(nu, nu)) * 256.0).astype(np.int64)
        out = (_qnum(qp) * scale8) >> 16  # Qstep * scale * 2**12
        _QDIV_CACHE[key] = out
    return out


def quantize_block(coeffs: np.ndarray, qp: int, intra: bool, size: int) -> np.ndarray:
    fn, fd = _DEADZONE[bool(intra)]
    d = _qdiv(qp, size)
    mag = (np.abs(coeffs) * ((1 << 12) * fd) + fn * d) // (fd * d)
    return np.sign(coeffs) * mag


def dequantize_block(levels: np.ndarray, qp: int, size: int) -> np.ndarray:
    d = _qdiv(qp, size)
    return np.sign(levels) * ((np.abs(levels) * d + (1 << 11)) >> 12)


# ---------------------------------------------------------------------------
# SATD


def _hadamard(n: int) -> np.ndarray:
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


_H4 = _hadamard(4)
_H8 = _hadamard(8)


def satd(a: np.ndarray, b: np.ndarray) -> int:
    """Sum of absolute Hadamard-transformed differences, halved per tile.

    4x4 blocks use the 4-point transform; anything larger is tiled by 8x8.
    """
    d = a.astype(np.int64) - b.astype(np.int64)
    n = d.shape[0]
    if n == 4:
        return int(np.abs(_H4 @ d @ _H4.T).sum()) // 2
    if n % 8:
        raise ValueError(f"satd needs size 4 or a multiple of 8, got {n}")
    t = d.reshape(n // 8, 8, d.shape[1] // 8, 8).transpose(0, 2, 1, 3)
    coefs = np.abs(_H8 @ t @ _H8.T)
    return int((coefs.sum(axis=(2, 3)) // 2).sum())


def satd_many(diffs: np.ndarray) -> np.ndarray:
    """SATD of a stack of difference blocks (m, n, n); n a multiple of 8."""
    m, n, _ = diffs.shape
    t = diffs.astype(np.int64).reshape(m, n // 8, 8, n // 8, 8).transpose(0, 1, 3, 2, 4)
    coefs = np.abs(_H8 @ t @ _H8.T)
    return (coefs.sum(axis=(3, 4)) // 2).sum(axis=(1, 2))


def sad(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())
