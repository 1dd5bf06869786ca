"""Shared plumbing for the binary asset containers (.btpl / .gam / .wvol).

Layout: ASCII magic, little-endian u64 header byte length, UTF-8 JSON header,
zero padding so the data section starts on a 16-byte file offset, then raw
little-endian buffers, each padded so the next one is again 16-byte aligned.
Buffer offsets are relative to the start of the data section.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import BadMagic, CountMismatch

ALIGN = 16


def _padding(n: int) -> int:
    return (-n) % ALIGN


def layout_buffers(arrays) -> list[dict]:
    """Compute the buffer table for a list of (name, ndarray) pairs."""
    table = []
    cursor = 0
    for name, arr in arrays:
        nbytes = arr.nbytes
        table.append({"name": name, "offset": cursor, "len": nbytes, "dtype": arr.dtype.str})
        cursor += nbytes + _padding(nbytes)
    return table


def write(path, magic: bytes, header: dict, arrays) -> None:
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(b"\x00" * _padding(f.tell()))
        for _, arr in arrays:
            raw = np.ascontiguousarray(arr).tobytes()
            f.write(raw)
            f.write(b"\x00" * _padding(len(raw)))


def read(path, magic: bytes) -> tuple[dict, bytes]:
    """Return (header, data_section_bytes); raises BadMagic / CountMismatch."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(magic):
        raise BadMagic(f"{path}: expected magic {magic!r}")
    pos = len(magic)
    if len(blob) < pos + 8:
        raise CountMismatch(f"{path}: truncated before header length")
    hlen = int.from_bytes(blob[pos : pos + 8], "little")
    pos += 8
    if len(blob) < pos + hlen:
        raise CountMismatch(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CountMismatch(f"{path}: unreadable header: {exc}") from exc
    pos += hlen
    pos += _padding(pos)
    return header, blob[pos:]


def read_buffer(data: bytes, entry: dict, count: int, what: str) -> np.ndarray:
    """Slice one buffer out of the data section, checking its declared size."""
    dtype = np.dtype(entry["dtype"])
    expected = count * dtype.itemsize
    if entry["len"] != expected:
        raise CountMismatch(f"{what}: header says {entry['len']} bytes, counts imply {expected}")
    start, end = entry["offset"], entry["offset"] + entry["len"]
    if end > len(data):
        raise CountMismatch(f"{what}: buffer overruns file ({end} > {len(data)})")
    return np.frombuffer(data[start:end], dtype=dtype).copy()
