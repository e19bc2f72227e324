"""Block occupancy maps: 4x4 downsampling and lossless entropy coding.

The per-pixel occupancy is reduced to 4x4 blocks (a block is occupied when
any of its 16 pixels is) and coded losslessly with the adaptive binary range
coder, one context per (left, above) neighbor pair.  The upsampled block map
is both the decoder's reconstruction mask and the encoder's RDO mask, so the
encoder never consults finer occupancy than the decoder will have.
"""

from __future__ import annotations

import numpy as np

from .rangecoder import Decoder, DecodeError, Encoder

BLOCK = 4
_NCTX = 4
_MAX_DIM = 16384


class BlockOccupancy:
    def __init__(self, blocks: np.ndarray):
        self.blocks = np.asarray(blocks, dtype=np.uint8)
        if self.blocks.ndim != 2:
            raise ValueError("block map must be 2-D")

    @property
    def shape(self):
        return self.blocks.shape

    def __eq__(self, other):
        return isinstance(other, BlockOccupancy) and np.array_equal(self.blocks, other.blocks)


def downsample(mask: np.ndarray) -> BlockOccupancy:
    """Per-pixel mask (H, W) -> block map; block = OR of its 16 pixels."""
    m = np.asarray(mask)
    h, w = m.shape
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"mask dims {w}x{h} must be multiples of {BLOCK}")
    b = m.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).any(axis=(1, 3))
    return BlockOccupancy(b.astype(np.uint8))


def upsample(blocks: BlockOccupancy) -> np.ndarray:
    """Replicate each block value to its 16 pixels."""
    return np.repeat(np.repeat(blocks.blocks, BLOCK, axis=0), BLOCK, axis=1)


def encode_blocks(blocks: BlockOccupancy) -> bytes:
    """u16 dims prefix + range-coded bits, context = (left, above)."""
    b = blocks.blocks
    bh, bw = b.shape
    enc = Encoder(_NCTX)
    left = np.zeros_like(b)
    left[:, 1:] = b[:, :-1]
    above = np.zeros_like(b)
    above[1:, :] = b[:-1, :]
    ctxs = (left * 2 + above).astype(np.int64).ravel().tolist()
    bits = b.astype(np.int64).ravel().tolist()
    enc.encode_list(list(zip(ctxs, bits)))
    payload = enc.finish()
    return bw.to_bytes(2, "little") + bh.to_bytes(2, "little") + payload


def decode_blocks(data: bytes) -> BlockOccupancy:
    """Exact inverse of encode_blocks; truncated input raises DecodeError."""
    if len(data) < 4:
        raise DecodeError("occupancy payload too short")
    bw = int.from_bytes(data[0:2], "little")
    bh = int.from_bytes(data[2:4], "little")
    if not (0 < bw <= _MAX_DIM and 0 < bh <= _MAX_DIM):
        raise DecodeError(f"implausible block dims {bw}x{bh}")
    dec = Decoder(data[4:], _NCTX)
    out = np.zeros((bh, bw), dtype=np.uint8)
    row_left = 0
    prev = np.zeros(bw, dtype=np.uint8)
    for y in range(bh):
        row_left = 0
        for x in range(bw):
            ctx = row_left * 2 + int(prev[x])
            v = dec.decode(ctx)
            out[y, x] = v
            row_left = v
        prev = out[y]
    dec.check_sentinel()
    return BlockOccupancy(out)
