"""
Discrete probability tables frozen from a trained density for the range coder.

Each dimension has an integer support [s_min, s_max] followed by one tail
symbol that carries the remaining mass and escapes out-of-support values.
"""
import logging
import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from entropy_model.density import FactorizedDensity

logger = logging.getLogger(__name__)

PRECISION = 16
TOTAL = 1 << PRECISION
ESCAPE_BITS = 32
# widest support is 2 * SUPPORT_HALF_WIDTH + 1 symbols plus the tail
SUPPORT_HALF_WIDTH = 1024


def quantize_frequencies(probs, total: int = TOTAL) -> np.ndarray:
    """
    Integer frequencies summing exactly to total, each at least 1.

    Rounds probs * total, floors at 1 and gives the residual to the most
    probable symbols.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, None)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need at least two symbols")
    if p.size > total:
        raise ValueError(f"{p.size} symbols do not fit in total {total}")
    mass = p.sum()
    p = p / mass if mass > 0 else np.full(p.size, 1.0 / p.size)
    freqs = np.maximum(np.round(p * total).astype(np.int64), 1)
    residual = total - int(freqs.sum())
    while residual != 0:
        top = int(np.argmax(freqs))
        if residual > 0:
            freqs[top] += residual
            residual = 0
        else:
            take = min(-residual, int(freqs[top]) - 1)
            freqs[top] -= take
            residual += take
    return freqs


@dataclass
class PmfTable:
    offsets: np.ndarray
    frequencies: List[np.ndarray]

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.frequencies = [np.asarray(f, dtype=np.int64) for f in self.frequencies]
        if len(self.offsets) != len(self.frequencies):
            raise ValueError("one offset per dimension required")
        for i, f in enumerate(self.frequencies):
            if f.size < 2 or f.min() < 1 or f.max() >= TOTAL or int(f.sum()) != TOTAL:
                raise ValueError(f"dimension {i}: frequencies must be in [1, {TOTAL}) and sum to {TOTAL}")
        self._cumulative = [np.concatenate([[0], np.cumsum(f)]) for f in self.frequencies]

    @property
    def dims(self) -> int:
        return len(self.offsets)

    def support(self, i: int) -> Tuple[int, int]:
        """Inclusive integer support of dimension i (tail excluded)"""
        return int(self.offsets[i]), int(self.offsets[i] + self.frequencies[i].size - 2)

    def tail_index(self, i: int) -> int:
        return self.frequencies[i].size - 1

    def cumulative(self, i: int) -> np.ndarray:
        return self._cumulative[i]

    def to_bytes(self) -> bytes:
        """<u32 dims> then per dimension <i32 offset><u32 count><count x u16>"""
        parts = [struct.pack("<I", self.dims)]
        for off, f in zip(self.offsets, self.frequencies):
            parts.append(struct.pack("<iI", int(off), f.size))
            parts.append(f.astype("<u2").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, pos: int = 0) -> Tuple["PmfTable", int]:
        """Parse a table starting at pos; returns (table, position after it)"""
        (dims,) = struct.unpack_from("<I", data, pos)
        pos += 4
        offsets, freqs = [], []
        for _ in range(dims):
            off, count = struct.unpack_from("<iI", data, pos)
            pos += 8
            end = pos + 2 * count
            if end > len(data):
                raise struct.error("table truncated")
            freqs.append(np.frombuffer(data[pos:end], dtype="<u2").astype(np.int64))
            offsets.append(off)
            pos = end
        return cls(np.array(offsets, dtype=np.int64), freqs), pos

    def __eq__(self, other) -> bool:
        if not isinstance(other, PmfTable):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


def build_pmf_table(density: FactorizedDensity, symbols: np.ndarray) -> PmfTable:
    """
    Freeze the density over [min - 1, max + 1] of the observed symbols, per dimension.

    The support is clipped to SUPPORT_HALF_WIDTH around the per-dimension
    median; symbols outside it are coded through the tail escape.

    Args:
        density: Trained density with density.channels == symbols.shape[1]
        symbols: (N, l) integer-valued latents

    Raises:
        ValueError: if there are no symbols to cover
    """
    symbols = np.asarray(symbols)
    if symbols.ndim != 2 or symbols.shape[0] == 0:
        raise ValueError("cannot build a table over an empty support")
    if symbols.shape[1] != density.channels:
        raise ValueError(f"density has {density.channels} dimensions, symbols have {symbols.shape[1]}")
    center = np.round(np.median(symbols, axis=0)).astype(np.int64)
    lo = np.maximum(symbols.min(axis=0).astype(np.int64) - 1, center - SUPPORT_HALF_WIDTH)
    hi = np.minimum(symbols.max(axis=0).astype(np.int64) + 1, center + SUPPORT_HALF_WIDTH)
    clipped = int(np.sum((symbols < lo) | (symbols > hi)))
    if clipped:
        logger.debug(f"{clipped} symbols fall outside the table support and will be escaped")
    width = int((hi - lo).max()) + 1
    # evaluate every dimension on a common grid of relative positions
    grid = lo[None, :] + np.arange(width)[:, None]
    q = density.likelihood(grid)
    freqs = []
    for i in range(density.channels):
        n = int(hi[i] - lo[i]) + 1
        probs = q[:n, i]
        tail = max(1.0 - float(probs.sum()), 0.0)
        freqs.append(quantize_frequencies(np.append(probs, tail)))
    return PmfTable(lo, freqs)


def table_ideal_bits(table: PmfTable, symbols: np.ndarray) -> float:
    """Sum of -log2(freq / 2^16) over coded symbols; escapes add their raw bits"""
    symbols = np.asarray(symbols).reshape(-1, table.dims).astype(np.int64)
    bits = 0.0
    for i in range(table.dims):
        col = symbols[:, i] - table.offsets[i]
        tail = table.tail_index(i)
        idx = np.where((col >= 0) & (col < tail), col, tail)
        f = table.frequencies[i][idx]
        bits += float(-np.log2(f / TOTAL).sum())
        bits += ESCAPE_BITS * int((idx == tail).sum())
    return bits
