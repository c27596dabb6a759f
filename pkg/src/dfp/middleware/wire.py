"""DFP1 wire framing for the loopback transport and the discovery plane.

Every frame starts with a fixed 32-byte big-endian header::

    magic           4 bytes     0x44 0x46 0x50 0x31 ("DFP1")
    version         u8          0x01
    msg_type        u8          see MsgType
    flags           u8          bit0 = reliable, bit1 = transient_local,
                                remaining bits reserved, must be 0
    reserved        u8          0x00
    participant_id  u64         sender participant
    entity_id       u32         sender endpoint, 0 for participant-level frames
    seq             u64         sample sequence / request id / 0
    payload_len     u32         number of payload bytes that follow

The framing is DFP-specific. It borrows the header-then-payload shape of
automotive service middlewares but is not conformant to any of them.

Payload conventions by message type (above the framing layer):

- DATA: raw application payload bytes.
- ANNOUNCE / HEARTBEAT / SUBSCRIBE / NACK: UTF-8 JSON control documents.
- REQUEST: u16 service-name length, service name bytes, request bytes.
- RESPONSE: u64 caller participant id, u8 status (0 ok, 1 fault),
  then response bytes (ok) or u32 fault code + UTF-8 message (fault).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from dfp import DfpError

MAGIC = b"DFP1"
VERSION = 0x01

_HEADER = struct.Struct(">4sBBBBQIQI")
HEADER_LEN = _HEADER.size  # 32

FLAG_RELIABLE = 0x01
FLAG_TRANSIENT_LOCAL = 0x02
_KNOWN_FLAGS = FLAG_RELIABLE | FLAG_TRANSIENT_LOCAL

MAX_WIRE_PAYLOAD = 2**32 - 1


class MsgType(enum.IntEnum):
    DATA = 0
    ANNOUNCE = 1
    SUBSCRIBE = 2
    REQUEST = 3
    RESPONSE = 4
    HEARTBEAT = 5
    NACK = 6


class FrameError(DfpError):
    """Malformed frame: bad magic, version, length or field range."""


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    flags: int
    participant_id: int
    entity_id: int
    seq: int
    payload: bytes

    def __post_init__(self):
        if not 0 <= self.flags <= 0xFF:
            raise FrameError(f"flags out of range: {self.flags}")
        if not 0 <= self.participant_id < 2**64:
            raise FrameError(f"participant_id out of range: {self.participant_id}")
        if not 0 <= self.entity_id < 2**32:
            raise FrameError(f"entity_id out of range: {self.entity_id}")
        if not 0 <= self.seq < 2**64:
            raise FrameError(f"seq out of range: {self.seq}")
        if len(self.payload) > MAX_WIRE_PAYLOAD:
            raise FrameError("payload exceeds u32 length field")


def encode_frame(frame: Frame) -> bytes:
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        int(frame.msg_type),
        frame.flags,
        0,
        frame.participant_id,
        frame.entity_id,
        frame.seq,
        len(frame.payload),
    )
    return header + frame.payload


def decode_frame(buf: bytes) -> Frame:
    if len(buf) < HEADER_LEN:
        raise FrameError(f"frame truncated: {len(buf)} bytes, header needs {HEADER_LEN}")
    magic, version, msg_type, flags, reserved, pid, eid, seq, plen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version:#x}")
    if reserved != 0:
        raise FrameError(f"reserved byte must be 0, got {reserved:#x}")
    if flags & ~_KNOWN_FLAGS:
        raise FrameError(f"reserved flag bits set: {flags:#04x}")
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown msg_type {msg_type}") from None
    if len(buf) != HEADER_LEN + plen:
        raise FrameError(f"length mismatch: payload_len={plen}, frame has {len(buf) - HEADER_LEN}")
    return Frame(mt, flags, pid, eid, seq, bytes(buf[HEADER_LEN:]))
