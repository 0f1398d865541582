"""Binary frame layout shared by every transport backend.

All frames are little-endian. A write-notify frame is a fixed header
followed by the raw payload bytes:

    magic               u32   0x47574E54 ("GWNT")
    version             u8    1
    msg_type            u8    0 = write_notify, 255 = hello
    reserved            u16   0
    dest_segment        u16
    reserved            u16   0
    dest_offset         u64
    payload_size        u64
    notification_id     u32
    notification_value  u32

A hello frame is sent once per connection right after dialing and carries
only magic, version, msg_type=255 and the sender's rank as a u32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import FormatError

FRAME_MAGIC = 0x47574E54
WIRE_VERSION = 1
MSG_WRITE_NOTIFY = 0
MSG_HELLO = 255

_HEADER = struct.Struct("<IBBHHHQQII")
_HELLO = struct.Struct("<IBBI")

HEADER_SIZE = _HEADER.size
HELLO_SIZE = _HELLO.size


@dataclass(frozen=True)
class FrameHeader:
    dest_segment: int
    dest_offset: int
    payload_size: int
    notification_id: int
    notification_value: int


def pack_write_notify(
    dest_segment: int,
    dest_offset: int,
    payload_size: int,
    notification_id: int,
    notification_value: int,
) -> bytes:
    return _HEADER.pack(
        FRAME_MAGIC,
        WIRE_VERSION,
        MSG_WRITE_NOTIFY,
        0,
        dest_segment,
        0,
        dest_offset,
        payload_size,
        notification_id,
        notification_value,
    )


def unpack_write_notify(buf: bytes) -> FrameHeader:
    if len(buf) != HEADER_SIZE:
        raise FormatError(f"frame header must be {HEADER_SIZE} bytes, got {len(buf)}")
    magic, version, msg_type, _r0, dest_segment, _r1, offset, size, nid, value = _HEADER.unpack(buf)
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad frame magic 0x{magic:08X}")
    if version != WIRE_VERSION:
        raise FormatError(f"unsupported wire version {version}")
    if msg_type != MSG_WRITE_NOTIFY:
        raise FormatError(f"expected write_notify frame, got msg_type {msg_type}")
    return FrameHeader(dest_segment, offset, size, nid, value)


def pack_hello(rank: int) -> bytes:
    return _HELLO.pack(FRAME_MAGIC, WIRE_VERSION, MSG_HELLO, rank)


def unpack_hello(buf: bytes) -> int:
    if len(buf) != HELLO_SIZE:
        raise FormatError(f"hello frame must be {HELLO_SIZE} bytes, got {len(buf)}")
    magic, version, msg_type, rank = _HELLO.unpack(buf)
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad hello magic 0x{magic:08X}")
    if version != WIRE_VERSION:
        raise FormatError(f"unsupported wire version {version}")
    if msg_type != MSG_HELLO:
        raise FormatError(f"expected hello frame, got msg_type {msg_type}")
    return rank
