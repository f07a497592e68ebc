"""Length-prefixed binary frames exchanged with the storage service.

Frame: ``u32 length | u8 type | payload`` where ``length`` counts the type
byte plus payload. All integers are little-endian.

Payloads:

* ENROLL (request)   ``u32 L | u32 count | count x (pos bitmap | neg bitmap)``
* ENROLL (reply)     ``u32 first_id | u32 count | u32 M``
* QUERY_POSITIONS    ``u32 count | count x u32 position``
* QUERY_FULL         ``u32 L | f64 gamma | pos bitmap | neg bitmap``
* LISTS              ``u32 count`` then per position
  ``u32 position | u32 n_plus | u32 n_minus | u32 nbytes | nbytes varint deltas``
  (plus ids first, then minus ids, each delta-coded from 0)
* SHORTLIST          ``u32 count | count x (u32 id | u32 sq_distance)``
* ERROR              UTF-8 message
"""
from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .coding import TernaryCode, pack_code, unpack_code
from .identification import PositionLists

__all__ = [
    "MessageType",
    "ProtocolError",
    "WireMessage",
    "varint_encode",
    "varint_decode",
    "delta_encode",
    "delta_decode",
    "enroll_request",
    "parse_enroll_request",
    "enroll_reply",
    "parse_enroll_reply",
    "query_positions",
    "parse_query_positions",
    "query_full",
    "parse_query_full",
    "lists_message",
    "parse_lists",
    "shortlist_message",
    "parse_shortlist",
    "error_message",
    "read_frame",
    "send_frame",
]

MAX_FRAME = 1 << 30


class MessageType(enum.IntEnum):
    ENROLL = 1
    QUERY_POSITIONS = 2
    QUERY_FULL = 3
    LISTS = 4
    SHORTLIST = 5
    ERROR = 6


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: MessageType
    payload: bytes = b""

    def encode(self) -> bytes:
        return struct.pack("<IB", len(self.payload) + 1, int(self.type)) + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "WireMessage":
        if len(frame) < 5:
            raise ProtocolError("frame too short")
        (length, tag) = struct.unpack_from("<IB", frame)
        if length != len(frame) - 4:
            raise ProtocolError(f"frame length {length} does not match {len(frame) - 4} received bytes")
        try:
            mtype = MessageType(tag)
        except ValueError:
            raise ProtocolError(f"unknown message type {tag}") from None
        return cls(mtype, bytes(frame[5:]))

    def text(self) -> str:
        return self.payload.decode("utf-8", errors="replace")


# -- varints -----------------------------------------------------------------

def varint_encode(values) -> bytes:
    """LEB128 encoding of non-negative integers (< 2**35)."""
    v = np.asarray(values, dtype=np.uint64).ravel()
    if v.size == 0:
        return b""
    nbytes = np.ones(v.size, dtype=np.int64)
    for k in range(1, 5):
        nbytes += (v >> np.uint64(7 * k)) > 0
    width = int(nbytes.max())
    k = np.arange(width, dtype=np.uint64)
    groups = ((v[:, None] >> (np.uint64(7) * k)) & np.uint64(0x7F)).astype(np.uint8)
    cont = k[None, :].astype(np.int64) < (nbytes[:, None] - 1)
    groups |= (cont * 0x80).astype(np.uint8)
    valid = k[None, :].astype(np.int64) < nbytes[:, None]
    return groups[valid].tobytes()


def varint_decode(data: bytes, count: int | None = None) -> np.ndarray:
    b = np.frombuffer(data, dtype=np.uint8)
    if b.size == 0:
        out = np.zeros(0, dtype=np.uint64)
    else:
        if b[-1] & 0x80:
            raise ProtocolError("truncated varint")
        ends = np.flatnonzero((b & 0x80) == 0)
        starts = np.concatenate([[0], ends[:-1] + 1])
        pos = np.arange(b.size) - np.repeat(starts, ends - starts + 1)
        if pos.max() > 4:
            raise ProtocolError("varint too long")
        shifted = (b & 0x7F).astype(np.uint64) << (np.uint64(7) * pos.astype(np.uint64))
        out = np.add.reduceat(shifted, starts)
    if count is not None and out.size != count:
        raise ProtocolError(f"expected {count} varints, found {out.size}")
    return out


def delta_encode(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    return np.diff(ids, prepend=0) if ids.size else ids


def delta_decode(deltas: np.ndarray) -> np.ndarray:
    return np.cumsum(np.asarray(deltas, dtype=np.int64)).astype(np.uint32)


# -- payload builders / parsers ---------------------------------------------

def enroll_request(codes: np.ndarray) -> WireMessage:
    """``codes`` is an ``L x M`` ternary matrix."""
    P = np.asarray(codes)
    L, M = P.shape
    body = b"".join(pack_code(P[:, m]) for m in range(M))
    return WireMessage(MessageType.ENROLL, struct.pack("<II", L, M) + body)


def parse_enroll_request(msg: WireMessage) -> np.ndarray:
    p = msg.payload
    if len(p) < 8:
        raise ProtocolError("malformed enroll payload")
    L, M = struct.unpack_from("<II", p)
    step = 2 * ((L + 7) // 8)
    if len(p) != 8 + step * M:
        raise ProtocolError("dimension mismatch: enroll payload size inconsistent with L and count")
    P = np.zeros((L, M), dtype=np.int8)
    for m in range(M):
        try:
            P[:, m] = unpack_code(p[8 + m * step: 8 + (m + 1) * step], L).values
        except ValueError as e:
            raise ProtocolError(str(e)) from None
    return P


def enroll_reply(first_id: int, count: int, M: int) -> WireMessage:
    return WireMessage(MessageType.ENROLL, struct.pack("<III", first_id, count, M))


def parse_enroll_reply(msg: WireMessage) -> tuple[int, int, int]:
    return struct.unpack("<III", msg.payload)


def query_positions(positions) -> WireMessage:
    pos = np.asarray(positions, dtype="<u4").ravel()
    return WireMessage(MessageType.QUERY_POSITIONS, struct.pack("<I", pos.size) + pos.tobytes())


def parse_query_positions(msg: WireMessage) -> np.ndarray:
    p = msg.payload
    if len(p) < 4:
        raise ProtocolError("malformed position query")
    (n,) = struct.unpack_from("<I", p)
    if len(p) != 4 + 4 * n:
        raise ProtocolError("malformed position query: length mismatch")
    return np.frombuffer(p, dtype="<u4", count=n, offset=4).astype(np.int64)


def query_full(code, gamma: float) -> WireMessage:
    v = code.values if isinstance(code, TernaryCode) else np.asarray(code)
    return WireMessage(MessageType.QUERY_FULL, struct.pack("<Id", v.shape[0], gamma) + pack_code(v))


def parse_query_full(msg: WireMessage) -> tuple[TernaryCode, float]:
    p = msg.payload
    if len(p) < 12:
        raise ProtocolError("malformed code: payload too short")
    L, gamma = struct.unpack_from("<Id", p)
    try:
        code = unpack_code(p[12:], L)
    except ValueError as e:
        raise ProtocolError(f"malformed code: {e}") from None
    if not np.isfinite(gamma) or gamma < 0:
        raise ProtocolError("malformed code: gamma must be a finite non-negative number")
    return code, gamma


def lists_message(lists: PositionLists) -> WireMessage:
    parts = [struct.pack("<I", len(lists))]
    for l, (plus, minus) in lists.lists.items():
        block = varint_encode(delta_encode(plus)) + varint_encode(delta_encode(minus))
        parts.append(struct.pack("<IIII", l, len(plus), len(minus), len(block)))
        parts.append(block)
    return WireMessage(MessageType.LISTS, b"".join(parts))


def parse_lists(msg: WireMessage) -> PositionLists:
    p = msg.payload
    (n,) = struct.unpack_from("<I", p)
    off = 4
    out = PositionLists()
    for _ in range(n):
        l, n_plus, n_minus, nbytes = struct.unpack_from("<IIII", p, off)
        off += 16
        vals = varint_decode(p[off: off + nbytes], n_plus + n_minus)
        off += nbytes
        out.lists[int(l)] = (delta_decode(vals[:n_plus]), delta_decode(vals[n_plus:]))
    if off != len(p):
        raise ProtocolError("trailing bytes in LISTS payload")
    return out


def shortlist_message(entries) -> WireMessage:
    arr = np.array([(i, int(round(d))) for i, d in entries], dtype="<u4").reshape(-1, 2)
    return WireMessage(MessageType.SHORTLIST, struct.pack("<I", arr.shape[0]) + arr.tobytes())


def parse_shortlist(msg: WireMessage) -> list[tuple[int, float]]:
    (n,) = struct.unpack_from("<I", msg.payload)
    arr = np.frombuffer(msg.payload, dtype="<u4", count=2 * n, offset=4).reshape(n, 2)
    return [(int(i), float(d)) for i, d in arr]


def error_message(text: str) -> WireMessage:
    return WireMessage(MessageType.ERROR, text.encode("utf-8"))


# -- socket helpers ----------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else _short(n, len(buf))
        buf += chunk
    return bytes(buf)


def _short(n, got):
    raise ProtocolError(f"connection closed after {got} of {n} bytes")


def read_frame(sock: socket.socket) -> bytes | None:
    """Read one whole frame; ``None`` on clean EOF before a frame starts."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    if not 1 <= length <= MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return head + body


def send_frame(sock: socket.socket, msg: WireMessage) -> bytes:
    data = msg.encode()
    sock.sendall(data)
    return data
