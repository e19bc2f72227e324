"""Adaptive binary arithmetic coder with exact snapshot/restore.

Classic low/high interval coder with underflow handling.  Each context is a
pair of symbol counts; probabilities adapt by incrementing and halving at a
cap.  The encoder exposes a fractional-bit position measure so rate-distortion
decisions can use exact bits: the measure is emitted bits + pending underflow
bits + the information still held in the interval registers, and it is a
deterministic function of coder state, so a trial encode and the committed
encode of the same symbols always agree.

Snapshots capture registers, context counts and the output length; restoring
truncates the output, which is what the encoder's mode-decision trials rely
on.  Decoding past the end of the payload is tracked so callers can reject
truncated streams (segments end with a 16-bit bypass sentinel).
"""

from __future__ import annotations

from math import log2

_MASK = (1 << 32) - 1
_TOP = 1 << 31
_SECOND = 1 << 30
_HALF_MASK = _MASK >> 1
_CAP = 256

SENTINEL = 0xA53C


class DecodeError(Exception):
    """Corrupt or truncated arithmetic-coded payload."""


class Encoder:
    def __init__(self, num_contexts: int):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.bits: list[int] = []
        self.c0 = [1] * num_contexts
        self.c1 = [1] * num_contexts

    # -- rate accounting ---------------------------------------------------

    def frac_bits(self) -> float:
        return len(self.bits) + self.pending + (32.0 - log2(self.high - self.low + 1))

    # -- snapshots ----------------------------------------------------------

    def save(self):
        return (self.low, self.high, self.pending, len(self.bits),
                self.c0.copy(), self.c1.copy())

    def restore(self, snap) -> None:
        self.low, self.high, self.pending, n, c0, c1 = snap
        del self.bits[n:]
        self.c0 = c0.copy()
        self.c1 = c1.copy()

    def capture(self, entry_snap):
        """Heavy snapshot: current state plus the bits written since entry."""
        n0 = entry_snap[3]
        return (self.save(), self.bits[n0:])

    def commit(self, entry_snap, captured) -> None:
        """Rewind to entry, then splice in a previously captured segment."""
        snap, seg = captured
        del self.bits[entry_snap[3]:]
        self.bits.extend(seg)
        self.low, self.high, self.pending = snap[0], snap[1], snap[2]
        self.c0 = snap[4].copy()
        self.c1 = snap[5].copy()

    # -- coding -------------------------------------------------------------

    def encode(self, ctx: int, bit: int) -> None:
        c0 = self.c0[ctx]
        total = c0 + self.c1[ctx]
        low = self.low
        high = self.high
        rng = high - low + 1
        split = low + rng * c0 // total - 1
        if bit:
            low = split + 1
            self.c1[ctx] += 1
        else:
            high = split
            self.c0[ctx] += 1
        if total + 1 >= _CAP:
            self.c0[ctx] = (self.c0[ctx] + 1) >> 1
            self.c1[ctx] = (self.c1[ctx] + 1) >> 1
        bits = self.bits
        while True:
            if (low ^ high) & _TOP == 0:
                b = low >> 31
                bits.append(b)
                if self.pending:
                    bits.extend([b ^ 1] * self.pending)
                    self.pending = 0
            elif low & ~high & _SECOND:
                self.pending += 1
                low ^= _SECOND
                high ^= _SECOND
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        self.low = low
        self.high = high

    def encode_bypass(self, bit: int) -> None:
        low = self.low
        high = self.high
        split = low + ((high - low) >> 1)
        if bit:
            low = split + 1
        else:
            high = split
        bits = self.bits
        while True:
            if (low ^ high) & _TOP == 0:
                b = low >> 31
                bits.append(b)
                if self.pending:
                    bits.extend([b ^ 1] * self.pending)
                    self.pending = 0
            elif low & ~high & _SECOND:
                self.pending += 1
                low ^= _SECOND
                high ^= _SECOND
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        self.low = low
        self.high = high

    def encode_bypass_bits(self, value: int, n: int) -> None:
        for k in range(n - 1, -1, -1):
            self.encode_bypass((value >> k) & 1)

    def encode_eg0(self, value: int) -> None:
        """Order-0 exp-Golomb of a non-negative integer, in bypass bins."""
        t = value + 1
        n = t.bit_length()
        for _ in range(n - 1):
            self.encode_bypass(0)
        self.encode_bypass_bits(t, n)

    def encode_list(self, bins) -> None:
        """Encode (ctx, bit) pairs in one call; ctx < 0 means bypass."""
        low = self.low
        high = self.high
        pending = self.pending
        bits = self.bits
        c0s = self.c0
        c1s = self.c1
        for ctx, bit in bins:
            if ctx >= 0:
                c0 = c0s[ctx]
                total = c0 + c1s[ctx]
                split = low + (high - low + 1) * c0 // total - 1
                if bit:
                    low = split + 1
                    c1s[ctx] += 1
                else:
                    high = split
                    c0s[ctx] += 1
                if total + 1 >= _CAP:
                    c0s[ctx] = (c0s[ctx] + 1) >> 1
                    c1s[ctx] = (c1s[ctx] + 1) >> 1
            else:
                split = low + ((high - low) >> 1)
                if bit:
                    low = split + 1
                else:
                    high = split
            while True:
                if (low ^ high) & _TOP == 0:
                    b = low >> 31
                    bits.append(b)
                    if pending:
                        bits.extend([b ^ 1] * pending)
                        pending = 0
                elif low & ~high & _SECOND:
                    pending += 1
                    low ^= _SECOND
                    high ^= _SECOND
                else:
                    break
                low = (low << 1) & _MASK
                high = ((high << 1) & _MASK) | 1
        self.low = low
        self.high = high
        self.pending = pending

    def finish(self) -> bytes:
        self.encode_bypass_bits(SENTINEL, 16)
        # classic termination: one disambiguating bit plus pending underflow
        self.pending += 1
        b = 1 if self.low >= _SECOND else 0
        self.bits.append(b)
        self.bits.extend([b ^ 1] * self.pending)
        self.pending = 0
        bits = self.bits
        out = bytearray(((len(bits) + 7) >> 3) + 4)
        for i, bit in enumerate(bits):
            if bit:
                out[i >> 3] |= 0x80 >> (i & 7)
        # self-describing length makes any truncation detectable; the zero
        # tail covers the decoder's 32-bit lookahead within the payload
        return (len(out) + 4).to_bytes(4, "little") + bytes(out)


def eg0_bits(value: int) -> int:
    return 2 * (value + 1).bit_length() - 1


def signed_eg_bits(v: int) -> int:
    """Bit cost of a signed exp-Golomb mapping, for motion-vector rate."""
    u = 2 * v - 1 if v > 0 else -2 * v
    return eg0_bits(u)


class Decoder:
    def __init__(self, data: bytes, num_contexts: int):
        if len(data) < 8:
            raise DecodeError("payload too short")
        declared = int.from_bytes(data[:4], "little")
        if declared != len(data):
            raise DecodeError(f"payload length {len(data)} != declared {declared}")
        self.data = data[4:]
        self.nbits = (len(data) - 4) * 8
        self.pos = 0
        self.overrun = False
        self.low = 0
        self.high = _MASK
        self.c0 = [1] * num_contexts
        self.c1 = [1] * num_contexts
        code = 0
        for _ in range(32):
            code = (code << 1) | self._bit()
        self.code = code

    def _bit(self) -> int:
        p = self.pos
        if p >= self.nbits:
            self.overrun = True
            return 0
        self.pos = p + 1
        return (self.data[p >> 3] >> (7 - (p & 7))) & 1

    def decode(self, ctx: int) -> int:
        c0 = self.c0[ctx]
        total = c0 + self.c1[ctx]
        low = self.low
        high = self.high
        rng = high - low + 1
        split = low + rng * c0 // total - 1
        if self.code > split:
            bit = 1
            low = split + 1
            self.c1[ctx] += 1
        else:
            bit = 0
            high = split
            self.c0[ctx] += 1
        if total + 1 >= _CAP:
            self.c0[ctx] = (self.c0[ctx] + 1) >> 1
            self.c1[ctx] = (self.c1[ctx] + 1) >> 1
        code = self.code
        while True:
            if (low ^ high) & _TOP == 0:
                pass
            elif low & ~high & _SECOND:
                low ^= _SECOND
                high ^= _SECOND
                code ^= _SECOND
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
            code = ((code << 1) & _MASK) | self._bit()
        self.low = low
        self.high = high
        self.code = code
        return bit

    def decode_bypass(self) -> int:
        low = self.low
        high = self.high
        split = low + ((high - low) >> 1)
        if self.code > split:
            bit = 1
            low = split + 1
        else:
            bit = 0
            high = split
        code = self.code
        while True:
            if (low ^ high) & _TOP == 0:
                pass
            elif low & ~high & _SECOND:
                low ^= _SECOND
                high ^= _SECOND
                code ^= _SECOND
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
            code = ((code << 1) & _MASK) | self._bit()
        self.low = low
        self.high = high
        self.code = code
        return bit

    def decode_bypass_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.decode_bypass()
        return v

    def decode_eg0(self, max_prefix: int = 48) -> int:
        n = 0
        while not self.decode_bypass():
            n += 1
            if n > max_prefix:
                raise DecodeError("exp-Golomb prefix overrun")
        v = 1
        for _ in range(n):
            v = (v << 1) | self.decode_bypass()
        return v - 1

    def check_sentinel(self) -> None:
        got = self.decode_bypass_bits(16)
        if got != SENTINEL:
            raise DecodeError(f"segment sentinel mismatch: {got:#06x}")
        if self.overrun:
            raise DecodeError("payload truncated")
