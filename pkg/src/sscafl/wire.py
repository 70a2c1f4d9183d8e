"""Byte-exact message codec for the server/client round protocol.

A connection starts with the 8-byte magic "SSCAFL01"; after that each message
is one frame:

    [kind: 1 byte][round t: 4-byte LE unsigned][sender: 2-byte LE unsigned]
    [payload length in bytes: 4-byte LE unsigned][payload]

For every kind except BatchAnnounce the payload is a 2-byte LE count of
dimension entries, that many 4-byte LE dims, then the concatenated sequences
as packed 8-byte LE IEEE-754 reals (one flat sequence per dim, in order).
BatchAnnounce instead carries raw 4-byte LE unsigned sample indices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import DecodeError

MAGIC = b"SSCAFL01"
SERVER_SENDER = 0xFFFF

_HEADER = struct.Struct("<BIHI")


class MessageKind(IntEnum):
    MODEL_BROADCAST = 1
    BATCH_ANNOUNCE = 2
    Q_OBJECTIVE = 3
    Q_CONSTRAINT = 4
    H_EXCHANGE = 5
    Q_AGGREGATE = 6


@dataclass
class RoundMessage:
    """One protocol frame: kind, round index, sender id, and payload sequences.

    The payload is a tuple of 1-D arrays: float64 sequences for every kind
    except BatchAnnounce, which carries exactly one uint32 index array.
    """

    kind: MessageKind
    round_t: int
    sender: int
    payload: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.kind = MessageKind(self.kind)
        if not 0 <= self.round_t < 2**32:
            raise ValueError(f"round_t must fit in 4 bytes, got {self.round_t}")
        if not 0 <= self.sender < 2**16:
            raise ValueError(f"sender must fit in 2 bytes, got {self.sender}")
        if self.kind == MessageKind.BATCH_ANNOUNCE:
            if len(self.payload) > 1:
                raise ValueError("batch announce carries at most one index sequence")
            arrays = tuple(np.ascontiguousarray(seq, dtype=np.uint32) for seq in self.payload)
            if arrays and arrays[0].size == 0:
                arrays = ()
        else:
            arrays = tuple(np.ascontiguousarray(seq, dtype=np.float64) for seq in self.payload)
        for seq in arrays:
            if seq.ndim != 1:
                raise ValueError("payload sequences must be 1-D")
            if seq.dtype == np.float64 and not np.all(np.isfinite(seq)):
                raise ValueError("payload sequences must be finite")
        if self.kind == MessageKind.MODEL_BROADCAST:
            if sum(seq.size for seq in arrays) < 1:
                raise ValueError("model broadcast payload must contain at least one value")
        self.payload = arrays


def encode_message(msg: RoundMessage) -> bytes:
    """Serialize one frame (the connection magic is not included)."""
    if msg.kind == MessageKind.BATCH_ANNOUNCE:
        body = msg.payload[0].astype("<u4").tobytes() if msg.payload else b""
    else:
        dims = struct.pack(
            f"<H{len(msg.payload)}I", len(msg.payload), *(seq.size for seq in msg.payload)
        )
        floats = b"".join(seq.astype("<f8").tobytes() for seq in msg.payload)
        body = dims + floats
    return _HEADER.pack(int(msg.kind), msg.round_t, msg.sender, len(body)) + body


def decode_message(data: bytes) -> RoundMessage:
    """Decode exactly one frame; trailing bytes are an error."""
    msg, consumed = decode_frame(data)
    if consumed != len(data):
        raise DecodeError(
            f"trailing bytes after frame: {len(data) - consumed}", offset=consumed
        )
    return msg


def decode_frame(data: bytes, start: int = 0) -> tuple[RoundMessage, int]:
    """Decode one frame beginning at `start`; returns (message, next offset)."""
    if len(data) - start < _HEADER.size:
        raise DecodeError("truncated frame header", offset=len(data))
    kind_byte, round_t, sender, body_len = _HEADER.unpack_from(data, start)
    try:
        kind = MessageKind(kind_byte)
    except ValueError:
        raise DecodeError(f"unknown kind tag {kind_byte}", offset=start) from None
    body_start = start + _HEADER.size
    if len(data) - body_start < body_len:
        raise DecodeError("truncated payload", offset=len(data))
    end = body_start + body_len

    if kind == MessageKind.BATCH_ANNOUNCE:
        if body_len % 4 != 0:
            raise DecodeError(
                f"batch announce payload length {body_len} not a multiple of 4", offset=body_start
            )
        indices = np.frombuffer(data, "<u4", body_len // 4, body_start)
        payload = (indices.copy(),) if body_len else ()
        return RoundMessage(kind, round_t, sender, payload), end

    if body_len < 2:
        raise DecodeError("payload too short for dimension count", offset=body_start)
    (dim_count,) = struct.unpack_from("<H", data, body_start)
    dims_end = body_start + 2 + 4 * dim_count
    if dims_end > end:
        raise DecodeError(
            f"payload too short for {dim_count} dimension entries", offset=body_start
        )
    dims = struct.unpack_from(f"<{dim_count}I", data, body_start + 2)
    expect = 2 + 4 * dim_count + 8 * sum(dims)
    if body_len != expect:
        raise DecodeError(
            f"payload length {body_len} does not match declared dims (expected {expect})",
            offset=body_start,
        )
    payload = []
    cursor = dims_end
    for dim in dims:
        payload.append(np.frombuffer(data, "<f8", dim, cursor).copy())
        cursor += 8 * dim
    try:
        msg = RoundMessage(kind, round_t, sender, tuple(payload))
    except ValueError as exc:
        raise DecodeError(str(exc), offset=body_start) from None
    return msg, end


def read_exact(reader, n: int) -> bytes:
    """Read exactly n bytes from a socket-like object; DecodeError on EOF."""
    chunks = []
    got = 0
    while got < n:
        chunk = reader.recv(n - got)
        if not chunk:
            raise DecodeError(f"connection closed mid-frame after {got} of {n} bytes", offset=got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame_from(reader) -> RoundMessage:
    """Read one length-delimited frame from a socket-like object."""
    header = read_exact(reader, _HEADER.size)
    _, _, _, body_len = _HEADER.unpack(header)
    body = read_exact(reader, body_len) if body_len else b""
    return decode_message(header + body)
