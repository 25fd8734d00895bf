"""Binary attention-dump format.

A dump file holds every cross-attention array recorded while generating one
image, plus the metadata needed to interpret them. The layout is fixed so
that any language can parse it with nothing but integer/float reads:

    magic "DAMX"            4 bytes
    format version          u32
    image_width             u32
    image_height            u32
    n_tokens                u32
    record_count            u32
    seed                    u64
    model_id                u16 byte length + UTF-8 bytes
    records                 record_count times:
        layer_id            u32
        timestep            u32
        head                u32
        height              u32
        width               u32
        payload             height*width*n_tokens f32, row-major,
                            token index fastest-varying

All integers and floats are little-endian. Values are attention weights
already normalized to [0, 1] by the producer; this module rejects anything
outside that range.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"DAMX"
FORMAT_VERSION = 1

_HEADER_FIXED = struct.Struct("<4sIIIIIQ")  # magic..seed, before model_id
_RECORD_HEADER = struct.Struct("<IIIII")


class DumpFormatError(Exception):
    """Base class for dump read/write failures.

    ``offset`` is the byte position in the stream the problem was detected
    at (best effort on write, exact on read).
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadMagicError(DumpFormatError):
    pass


class UnsupportedVersionError(DumpFormatError):
    pass


class TruncatedDumpError(DumpFormatError):
    def __init__(self, message: str, offset: int, expected: int, actual: int):
        super().__init__(message, offset)
        self.expected = expected
        self.actual = actual


class TrailingDataError(DumpFormatError):
    pass


class ValueOutOfRangeError(DumpFormatError):
    """A payload value is non-finite or outside [0, 1]."""

    def __init__(self, message: str, offset: int | None, layer_id: int,
                 timestep: int, head: int, flat_index: int):
        super().__init__(message, offset)
        self.layer_id = layer_id
        self.timestep = timestep
        self.head = head
        self.flat_index = flat_index


class DuplicateRecordError(DumpFormatError):
    pass


class InvalidDimensionError(DumpFormatError):
    pass


@dataclass
class AttentionRecord:
    """One cross-attention array: a single (layer, timestep, head) slice."""

    layer_id: int
    timestep: int
    head: int
    values: np.ndarray  # float32, shape (height, width, n_tokens)

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise InvalidDimensionError(
                f"record values must be 3-D (h, w, n_tokens), got shape {arr.shape}")
        self.values = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.values.shape[2]

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layer_id, self.timestep, self.head)

    def token_slice(self, token_index: int) -> np.ndarray:
        return self.values[:, :, token_index]


@dataclass
class AttentionDump:
    """All attention records captured for one generated image."""

    records: list[AttentionRecord]
    image_width: int
    image_height: int
    model_id: str = ""
    seed: int = 0

    @property
    def n_tokens(self) -> int:
        return self.records[0].n_tokens

    def bitwise_equal(self, other: "AttentionDump") -> bool:
        if (self.image_width, self.image_height, self.model_id, self.seed) != (
                other.image_width, other.image_height, other.model_id, other.seed):
            return False
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if a.key != b.key or a.values.shape != b.values.shape:
                return False
            if not np.array_equal(a.values.view(np.uint32), b.values.view(np.uint32)):
                return False
        return True


@dataclass
class _Cursor:
    """Byte-counting wrapper so errors can report exact offsets."""

    stream: BinaryIO
    offset: int = 0

    def read_exact(self, n: int, what: str) -> bytes:
        data = self.stream.read(n)
        got = len(data) if data else 0
        if got != n:
            raise TruncatedDumpError(
                f"truncated while reading {what}: expected {n} bytes at offset "
                f"{self.offset}, got {got}",
                offset=self.offset, expected=n, actual=got)
        self.offset += n
        return data


def validate_dump(dump: AttentionDump) -> None:
    """Raise the first invariant violation found, or return silently."""
    if not dump.records:
        raise InvalidDimensionError("dump must contain at least one record")
    if dump.image_width < 1 or dump.image_height < 1:
        raise InvalidDimensionError(
            f"image dims must be >= 1, got {dump.image_width}x{dump.image_height}")
    if not (0 <= dump.seed < 2 ** 64):
        raise InvalidDimensionError(f"seed {dump.seed} does not fit in u64")
    if len(dump.model_id.encode("utf-8")) > 0xFFFF:
        raise InvalidDimensionError("model_id longer than 65535 UTF-8 bytes")

    n_tokens = dump.records[0].n_tokens
    seen: set[tuple[int, int, int]] = set()
    for rec in dump.records:
        if rec.height < 1 or rec.width < 1 or rec.n_tokens < 1:
            raise InvalidDimensionError(
                f"record {rec.key} has degenerate shape "
                f"{rec.height}x{rec.width}x{rec.n_tokens}")
        if rec.n_tokens != n_tokens:
            raise InvalidDimensionError(
                f"record {rec.key} has n_tokens={rec.n_tokens}, "
                f"dump-wide n_tokens={n_tokens}")
        if min(rec.layer_id, rec.timestep, rec.head) < 0:
            raise InvalidDimensionError(
                f"record identifiers must be non-negative, got {rec.key}")
        if rec.key in seen:
            raise DuplicateRecordError(
                f"duplicate (layer_id, timestep, head) = {rec.key}")
        seen.add(rec.key)
        _check_values(rec)


def _check_values(rec: AttentionRecord, payload_offset: int | None = None) -> None:
    vals = rec.values
    bad = ~np.isfinite(vals) | (vals < 0.0) | (vals > 1.0)
    if bad.any():
        flat = int(np.flatnonzero(bad.ravel())[0])
        v = vals.ravel()[flat]
        off = None if payload_offset is None else payload_offset + flat * 4
        raise ValueOutOfRangeError(
            f"value {v!r} at flat index {flat} of record "
            f"(layer={rec.layer_id}, timestep={rec.timestep}, head={rec.head}) "
            f"is not a finite number in [0, 1]",
            offset=off, layer_id=rec.layer_id, timestep=rec.timestep,
            head=rec.head, flat_index=flat)


def dump_byte_size(dump: AttentionDump) -> int:
    """Exact file size write_dump will produce."""
    size = _HEADER_FIXED.size + 2 + len(dump.model_id.encode("utf-8"))
    for rec in dump.records:
        size += _RECORD_HEADER.size + rec.values.size * 4
    return size


def write_dump(dump: AttentionDump, destination: BinaryIO) -> int:
    """Serialize ``dump`` to ``destination``; returns bytes written.

    The dump is validated first, so a partially-written file can only result
    from an I/O failure, never from bad data.
    """
    validate_dump(dump)
    model_bytes = dump.model_id.encode("utf-8")
    written = 0

    header = _HEADER_FIXED.pack(
        MAGIC, FORMAT_VERSION, dump.image_width, dump.image_height,
        dump.n_tokens, len(dump.records), dump.seed)
    destination.write(header)
    written += len(header)
    destination.write(struct.pack("<H", len(model_bytes)))
    destination.write(model_bytes)
    written += 2 + len(model_bytes)

    for rec in dump.records:
        destination.write(_RECORD_HEADER.pack(
            rec.layer_id, rec.timestep, rec.head, rec.height, rec.width))
        payload = np.ascontiguousarray(rec.values, dtype="<f4").tobytes()
        destination.write(payload)
        written += _RECORD_HEADER.size + len(payload)
    return written


def read_dump(source: BinaryIO) -> AttentionDump:
    """Parse a dump file, validating every invariant.

    Raises a DumpFormatError subclass describing the first problem found,
    with the byte offset it was detected at.
    """
    cur = _Cursor(source)

    magic = cur.read_exact(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", cur.read_exact(4, "format version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}",
            offset=4)
    image_width, image_height, n_tokens, record_count = struct.unpack(
        "<IIII", cur.read_exact(16, "header dims"))
    (seed,) = struct.unpack("<Q", cur.read_exact(8, "seed"))
    (model_len,) = struct.unpack("<H", cur.read_exact(2, "model_id length"))
    model_id = cur.read_exact(model_len, "model_id").decode("utf-8")

    if image_width < 1 or image_height < 1:
        raise InvalidDimensionError(
            f"image dims must be >= 1, got {image_width}x{image_height}", offset=8)
    if n_tokens < 1:
        raise InvalidDimensionError(f"n_tokens must be >= 1, got {n_tokens}", offset=16)
    if record_count < 1:
        raise InvalidDimensionError("record_count must be >= 1", offset=20)

    records: list[AttentionRecord] = []
    seen: set[tuple[int, int, int]] = set()
    for i in range(record_count):
        rec_off = cur.offset
        layer_id, timestep, head, height, width = _RECORD_HEADER.unpack(
            cur.read_exact(_RECORD_HEADER.size, f"record {i} header"))
        if height < 1 or width < 1:
            raise InvalidDimensionError(
                f"record {i} has degenerate shape {height}x{width}", offset=rec_off)
        key = (layer_id, timestep, head)
        if key in seen:
            raise DuplicateRecordError(
                f"duplicate (layer_id, timestep, head) = {key} at record {i}",
                offset=rec_off)
        seen.add(key)

        payload_off = cur.offset
        payload = cur.read_exact(height * width * n_tokens * 4, f"record {i} payload")
        values = np.frombuffer(payload, dtype="<f4").reshape(height, width, n_tokens)
        values = values.astype(np.float32, copy=True)
        values.flags.writeable = False
        rec = AttentionRecord.__new__(AttentionRecord)
        rec.layer_id, rec.timestep, rec.head = layer_id, timestep, head
        rec.values = values
        _check_values(rec, payload_offset=payload_off)
        records.append(rec)

    extra = source.read(1)
    if extra:
        raise TrailingDataError(
            f"file continues past the declared {record_count} records",
            offset=cur.offset)

    return AttentionDump(records=records, image_width=image_width,
                         image_height=image_height, model_id=model_id, seed=seed)


def write_dump_file(dump: AttentionDump, path) -> int:
    with open(path, "wb") as fh:
        return write_dump(dump, fh)


def read_dump_file(path) -> AttentionDump:
    with open(path, "rb") as fh:
        return read_dump(fh)
