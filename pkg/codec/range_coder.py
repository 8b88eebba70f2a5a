"""
Integer range coder over PMF tables.

64-bit state, 16-bit frequency totals and byte-wise renormalization with
carry propagation through a cached byte plus a run of pending 0xFF bytes.
All arithmetic is on Python ints, so output is identical on every platform.
"""
import bisect
import logging
import struct
import zlib
from typing import List

import numpy as np

from entropy_model.pmf import PRECISION, TOTAL, PmfTable
from utils.errors import ChecksumError, CodecError, TruncatedPayloadError

logger = logging.getLogger(__name__)

STATE_BITS = 64
MASK = (1 << STATE_BITS) - 1
TOP = 1 << (STATE_BITS - 8)
SHIFT = STATE_BITS - 8
CRC_BYTES = 4


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self) -> None:
        if (self.low & MASK) < (0xFF << SHIFT) or (self.low >> STATE_BITS):
            carry = self.low >> STATE_BITS
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> SHIFT) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & MASK

    def encode(self, cum: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += r * cum
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        # smallest byte-aligned value inside [low, low + range)
        self.low = -(-self.low // TOP) * TOP
        self._shift_low()
        self._shift_low()
        # the first byte is the initial cache and always zero
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK
        self.code = 0
        for _ in range(STATE_BITS // 8):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        # reads past the end see zeros, matching the encoder's flush
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    def decode_freq(self) -> int:
        self._r = self.range >> PRECISION
        return min(self.code // self._r, TOTAL - 1)

    def consume(self, cum: int, freq: int) -> None:
        self.code -= self._r * cum
        self.range = self._r * freq
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & MASK


def _check_dims(symbols: np.ndarray, table: PmfTable) -> None:
    if symbols.size and (symbols.ndim != 2 or symbols.shape[1] != table.dims):
        raise CodecError(f"tensor with rows of {symbols.shape[-1]} cannot use a {table.dims}-dimension table")


def encode_tensor(symbols: np.ndarray, table: PmfTable) -> bytes:
    """
    Encode an integer latent matrix row by row.

    Out-of-support values emit the tail symbol and then 32 raw bits as two
    uniform 16-bit symbols. A CRC32 of the coded bytes is appended.

    Args:
        symbols: (rows, l) integer-valued array
        table: Frozen table with table.dims == l

    Returns:
        Payload bytes; empty for an empty tensor
    """
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        return b""
    _check_dims(symbols, table)
    enc = RangeEncoder()
    freqs = [f.tolist() for f in table.frequencies]
    cums = [c.tolist() for c in (table.cumulative(i) for i in range(table.dims))]
    offsets = table.offsets.tolist()
    tails = [table.tail_index(i) for i in range(table.dims)]
    flat = symbols.astype(np.int64).ravel().tolist()
    dims = table.dims
    for n, value in enumerate(flat):
        i = n % dims
        idx = value - offsets[i]
        if 0 <= idx < tails[i]:
            enc.encode(cums[i][idx], freqs[i][idx])
        else:
            t = tails[i]
            enc.encode(cums[i][t], freqs[i][t])
            raw = value & 0xFFFFFFFF
            enc.encode(raw >> 16, 1)
            enc.encode(raw & 0xFFFF, 1)
    coded = enc.finish()
    return coded + struct.pack("<I", zlib.crc32(coded))


def decode_tensor(payload: bytes, table: PmfTable, shape) -> np.ndarray:
    """
    Decode a payload produced by encode_tensor with the same table.

    Args:
        payload: Bytes including the CRC32 trailer
        table: The table used for encoding
        shape: (rows, l) of the coded matrix

    Raises:
        TruncatedPayloadError: payload too short to hold its checksum
        ChecksumError: payload bytes were altered or cut
    """
    shape = tuple(int(v) for v in shape)
    count = int(np.prod(shape))
    if count == 0:
        if payload:
            raise CodecError("non-empty payload for an empty tensor")
        return np.zeros(shape, dtype=np.int64)
    if len(shape) != 2 or shape[1] != table.dims:
        raise CodecError(f"shape {shape} does not match a {table.dims}-dimension table")
    if len(payload) < CRC_BYTES:
        raise TruncatedPayloadError(f"payload of {len(payload)} bytes cannot hold a checksum")
    coded, trailer = payload[:-CRC_BYTES], payload[-CRC_BYTES:]
    if zlib.crc32(coded) != struct.unpack("<I", trailer)[0]:
        raise ChecksumError("payload checksum mismatch")

    dec = RangeDecoder(coded)
    freqs = [f.tolist() for f in table.frequencies]
    cums: List[list] = [table.cumulative(i).tolist() for i in range(table.dims)]
    offsets = table.offsets.tolist()
    tails = [table.tail_index(i) for i in range(table.dims)]
    out = [0] * count
    dims = table.dims
    for n in range(count):
        i = n % dims
        target = dec.decode_freq()
        idx = bisect.bisect_right(cums[i], target) - 1
        dec.consume(cums[i][idx], freqs[i][idx])
        if idx != tails[i]:
            out[n] = idx + offsets[i]
            continue
        hi = dec.decode_freq()
        dec.consume(hi, 1)
        lo = dec.decode_freq()
        dec.consume(lo, 1)
        raw = (hi << 16) | lo
        out[n] = raw - (1 << 32) if raw & 0x80000000 else raw
    if dec.pos > len(coded) + STATE_BITS // 8:
        raise TruncatedPayloadError("decoder ran past the end of the payload")
    return np.array(out, dtype=np.int64).reshape(shape)
