"""Little-endian record-table files: checkpoints, ranking artifacts, packed data.

Layout::

    magic                     ASCII, e.g. b"SNAPVIT1"
    u32 record count
    per record:
        u32 name length, utf-8 name
        u8  dtype code
        u8  rank
        u32 dims[rank]
        raw little-endian payload

JSON metadata travels as a uint8 record holding utf-8 text. JSON is dumped
with sorted keys and compact separators so that write -> read -> write is
byte-identical.
"""

import json
import struct

import numpy as np

from .errors import FormatError
from .vit import ModelWeights, ViTConfig

CHECKPOINT_MAGIC = b"SNAPVIT1"
RANKING_MAGIC = b"SNAPRANK1"
DATA_MAGIC = b"SNAPDATA1"

_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
    np.dtype("bool"): 5,
}
_DTYPES = {v: k for k, v in _CODES.items()}


def dumps_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def json_record(obj):
    return np.frombuffer(dumps_json(obj).encode("utf-8"), dtype=np.uint8)


def record_json(arr):
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))


def encode(magic, records):
    """Serialise ``[(name, array), ...]`` after ``magic``; returns bytes."""
    out = [magic, struct.pack("<I", len(records))]
    for name, arr in records:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt not in _CODES:
            raise FormatError(f"unsupported dtype {arr.dtype} for record {name!r}")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)))
        out.append(key)
        out.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def decode(magic, blob):
    """Inverse of :func:`encode`; returns an ordered list of (name, array)."""
    if blob[:len(magic)] != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {bytes(blob[:len(magic)])!r}")
    pos = len(magic)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError("truncated file")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (count,) = take("<I")
    records = []
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(blob):
            raise FormatError("truncated record name")
        name = bytes(blob[pos:pos + n]).decode("utf-8")
        pos += n
        code, rank = take("<BB")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} in record {name!r}")
        dims = take(f"<{rank}I")
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated payload for record {name!r}")
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(dims, dtype=np.int64)), offset=pos)
        records.append((name, arr.reshape(dims).copy()))
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after last record")
    return records


def write_file(path, magic, records):
    with open(path, "wb") as fh:
        fh.write(encode(magic, records))


def read_file(path, magic):
    with open(path, "rb") as fh:
        return decode(magic, fh.read())


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, weights, meta=None):
    """Write SNAPVIT1: config JSON record first, then every named tensor."""
    header = {"config": weights.config.to_dict(), "meta": meta or {}}
    records = [("__config__", json_record(header))]
    records += [(k, v) for k, v in weights.params.items()]
    write_file(path, CHECKPOINT_MAGIC, records)


def load_checkpoint(path):
    records = read_file(path, CHECKPOINT_MAGIC)
    if not records or records[0][0] != "__config__":
        raise FormatError("checkpoint is missing its leading config record")
    header = record_json(records[0][1])
    cfg = ViTConfig.from_dict(header["config"])
    return ModelWeights(cfg, dict(records[1:]))


def checkpoint_meta(path):
    records = read_file(path, CHECKPOINT_MAGIC)
    return record_json(records[0][1]).get("meta", {})
