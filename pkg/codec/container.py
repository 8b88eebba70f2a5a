"""
The .lnx compressed model container.

Layout (all integers little-endian):
    magic "LNX1", u16 version, u32 descriptor length, UTF-8 JSON descriptor
    u32 group count, then per group: u16 name length, name, u16 l,
        l*l float32 decoder, PMF table
    u32 tensor count, then per tensor: u16 name length, name, u16 group index,
        u8 ndim, ndim x u32 shape, u32 payload length, payload
    u32 raw count, then per array: u16 name length, name, u8 ndim,
        ndim x u32 shape, float32 data
    u32 CRC32 of everything before it
"""
import json
import logging
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from entropy_model.pmf import PmfTable
from utils.errors import ChecksumError, CodecError, FormatVersionError, TruncatedPayloadError

logger = logging.getLogger(__name__)

MAGIC = b"LNX1"
FORMAT_VERSION = 1

SECTIONS = ("header", "pmf_tables", "decoders", "coded_latents", "raw")


@dataclass
class GroupRecord:
    name: str
    l: int
    psi: np.ndarray
    table: PmfTable


@dataclass
class TensorRecord:
    name: str
    group: int
    shape: Tuple[int, ...]
    payload: bytes


@dataclass
class CompressedModel:
    descriptor: Dict[str, Any]
    groups: List[GroupRecord] = field(default_factory=list)
    tensors: List[TensorRecord] = field(default_factory=list)
    raw: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    version: int = FORMAT_VERSION

    def weight_count(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.tensors)

    def raw_count(self) -> int:
        return sum(int(a.size) for a in self.raw.values())


class _SectionWriter:
    """Byte sink that attributes every write to one size category"""

    def __init__(self):
        self.parts: List[bytes] = []
        self.sizes = {name: 0 for name in SECTIONS}

    def write(self, section: str, data: bytes) -> None:
        self.parts.append(data)
        self.sizes[section] += len(data)

    def name(self, section: str, text: str) -> None:
        raw = text.encode("utf-8")
        self.write(section, struct.pack("<H", len(raw)) + raw)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


def _encode_model(model: CompressedModel) -> Tuple[bytes, Dict[str, int]]:
    w = _SectionWriter()
    desc = json.dumps(model.descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    w.write("header", MAGIC + struct.pack("<HI", model.version, len(desc)) + desc)

    w.write("header", struct.pack("<I", len(model.groups)))
    for g in model.groups:
        w.name("header", g.name)
        w.write("header", struct.pack("<H", g.l))
        w.write("decoders", np.ascontiguousarray(g.psi, dtype="<f4").tobytes())
        w.write("pmf_tables", g.table.to_bytes())

    w.write("header", struct.pack("<I", len(model.tensors)))
    for t in model.tensors:
        w.name("header", t.name)
        w.write("header", struct.pack("<HB", t.group, len(t.shape)))
        w.write("header", struct.pack(f"<{len(t.shape)}I", *t.shape))
        w.write("header", struct.pack("<I", len(t.payload)))
        w.write("coded_latents", t.payload)

    w.write("header", struct.pack("<I", len(model.raw)))
    for name, arr in model.raw.items():
        w.name("header", name)
        w.write("header", struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        w.write("raw", np.ascontiguousarray(arr, dtype="<f4").tobytes())

    body = w.getvalue()
    w.write("header", struct.pack("<I", zlib.crc32(body)))
    return w.getvalue(), w.sizes


def serialize_model(model: CompressedModel) -> bytes:
    return _encode_model(model)[0]


def section_sizes(model: CompressedModel) -> Dict[str, int]:
    """Bytes per category; the values sum to the serialized length"""
    return _encode_model(model)[1]


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedPayloadError(f"need {n} bytes at offset {self.pos}, file body ends at {self.end}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def shape(self, ndim: int) -> Tuple[int, ...]:
        return tuple(self.unpack(f"<{ndim}I")) if ndim else ()


def deserialize_model(data: bytes) -> CompressedModel:
    """
    Parse and verify a .lnx file.

    Raises:
        FormatVersionError: bad magic or unsupported version
        ChecksumError: whole-file CRC mismatch
        TruncatedPayloadError: a declared length runs past the end
    """
    if len(data) < len(MAGIC) + 2 or data[:len(MAGIC)] != MAGIC:
        raise FormatVersionError("not a LilNetX model file (bad magic)")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format version {version}")
    if len(data) < len(MAGIC) + 10:
        raise TruncatedPayloadError("file too short")
    body_end = len(data) - 4
    if zlib.crc32(data[:body_end]) != struct.unpack_from("<I", data, body_end)[0]:
        raise ChecksumError("file checksum mismatch")

    r = _Reader(data, body_end)
    r.take(len(MAGIC) + 2)
    (desc_len,) = r.unpack("<I")
    descriptor = json.loads(r.take(desc_len).decode("utf-8"))
    model = CompressedModel(descriptor=descriptor, version=version)

    (n_groups,) = r.unpack("<I")
    for _ in range(n_groups):
        name = r.name()
        (l,) = r.unpack("<H")
        psi = np.frombuffer(r.take(4 * l * l), dtype="<f4").astype(np.float32).reshape(l, l)
        try:
            table, end = PmfTable.from_bytes(data[:body_end], r.pos)
        except (struct.error, ValueError) as e:
            raise TruncatedPayloadError(f"bad PMF table for group {name}: {e}") from e
        r.pos = end
        model.groups.append(GroupRecord(name, l, psi, table))

    (n_tensors,) = r.unpack("<I")
    for _ in range(n_tensors):
        name = r.name()
        group, ndim = r.unpack("<HB")
        shape = r.shape(ndim)
        (length,) = r.unpack("<I")
        if group >= n_groups:
            raise CodecError(f"tensor {name} refers to missing group {group}")
        model.tensors.append(TensorRecord(name, group, shape, r.take(length)))

    (n_raw,) = r.unpack("<I")
    for _ in range(n_raw):
        name = r.name()
        (ndim,) = r.unpack("<B")
        shape = r.shape(ndim)
        count = int(np.prod(shape)) if shape else 1
        model.raw[name] = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)

    if r.pos != body_end:
        raise CodecError(f"{body_end - r.pos} unexpected trailing bytes")
    return model


def write_model(path: str, model: CompressedModel) -> int:
    data = serialize_model(model)
    with open(path, "wb") as fh:
        fh.write(data)
    logger.info(f"Wrote {path} ({len(data)} bytes)")
    return len(data)


def read_model(path: str) -> CompressedModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
