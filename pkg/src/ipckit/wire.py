"""Framed binary wire protocol and payload layouts.

Frame layout, all integers big-endian:

    magic   4 bytes  "IPC1"
    version 1 byte   0x01
    type    1 byte   0x01 seed+ciphertext | 0x02 announce | 0x03 control | 0x04 log
    length  4 bytes  payload byte count, at most 2^24
    payload

The decoder is incremental: feed() arbitrary chunks, frames() yields
complete frames in order.  Malformed input raises a distinct error per
failure mode so peers can tell corruption from version skew.

Channel-use payloads carry {n, l, seed r, ciphertext c} so a receiver can
reconstruct the transcript object without out-of-band parameter agreement.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .errors import (
    FrameLengthError,
    FrameMagicError,
    FrameTruncatedError,
    FrameTypeError,
    FrameVersionError,
    ParameterError,
)
from .ipchannel import ChannelParams, ChannelTranscript

MAGIC = b"IPC1"
VERSION = 0x01
MAX_PAYLOAD = 1 << 24

TYPE_CHANNEL = 0x01  # a channel use: fresh seed + ciphertext
TYPE_ANNOUNCE = 0x02  # public announcements: bases, sample positions
TYPE_CONTROL = 0x03  # round bookkeeping: index, public per-round seed
TYPE_LOG = 0x04  # session-level transcript commitment
_VALID_TYPES = (TYPE_CHANNEL, TYPE_ANNOUNCE, TYPE_CONTROL, TYPE_LOG)

_HEADER = struct.Struct(">4sBBI")


def encode_frame(ftype: int, payload: bytes) -> bytes:
    if ftype not in _VALID_TYPES:
        raise FrameTypeError(f"unknown frame type 0x{ftype:02x}")
    if len(payload) > MAX_PAYLOAD:
        raise FrameLengthError(f"payload of {len(payload)} bytes exceeds 2^24")
    return _HEADER.pack(MAGIC, VERSION, ftype, len(payload)) + payload


class FrameDecoder:
    """Incremental decoder; tolerates arbitrary chunk boundaries."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def frames(self) -> Iterator[tuple[int, bytes]]:
        while True:
            if len(self._buf) < _HEADER.size:
                return
            magic, version, ftype, length = _HEADER.unpack_from(self._buf)
            if magic != MAGIC:
                raise FrameMagicError(f"bad magic {bytes(magic)!r}")
            if version != VERSION:
                raise FrameVersionError(f"unsupported version 0x{version:02x}")
            if ftype not in _VALID_TYPES:
                raise FrameTypeError(f"unknown frame type 0x{ftype:02x}")
            if length > MAX_PAYLOAD:
                raise FrameLengthError(f"declared length {length} exceeds 2^24")
            if len(self._buf) < _HEADER.size + length:
                return
            payload = bytes(self._buf[_HEADER.size : _HEADER.size + length])
            del self._buf[: _HEADER.size + length]
            yield ftype, payload

    def pending_bytes(self) -> int:
        return len(self._buf)

    def finish(self) -> None:
        """Assert no partial frame is left in the buffer."""
        if self._buf:
            raise FrameTruncatedError(f"{len(self._buf)} trailing bytes")


def decode_frames(data: bytes) -> list[tuple[int, bytes]]:
    dec = FrameDecoder()
    dec.feed(data)
    out = list(dec.frames())
    dec.finish()
    return out


# ---------------------------------------------------------------------------
# bit packing (most significant bit of each byte first, matching key pools)


def pack_bits(value: int, nbits: int) -> bytes:
    if nbits < 0 or value < 0 or (nbits == 0 and value) or value >> nbits:
        raise ParameterError("value does not fit the declared bit width")
    return value.to_bytes((nbits + 7) // 8, "big") if nbits else b""


def unpack_bits(data: bytes, nbits: int) -> int:
    if len(data) != (nbits + 7) // 8:
        raise ParameterError(f"expected {(nbits + 7) // 8} bytes for {nbits} bits")
    value = int.from_bytes(data, "big")
    if value >> nbits:
        raise ParameterError("padding bits above the declared width are set")
    return value


def pack_bit_array(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


def unpack_bit_array(data: bytes, count: int) -> np.ndarray:
    if len(data) != (count + 7) // 8:
        raise ParameterError(f"expected {(count + 7) // 8} bytes for {count} bits")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if count < bits.size and bits[count:].any():
        raise ParameterError("padding bits above the declared width are set")
    return bits[:count]


# ---------------------------------------------------------------------------
# channel-use payload: {n: u32, l: u32, r: n bits, c: l bits}


def encode_channel_payload(t: ChannelTranscript) -> bytes:
    n, l = t.params.n, t.params.l
    return struct.pack(">II", n, l) + pack_bits(t.r, n) + pack_bits(t.c, l)


def decode_channel_payload(payload: bytes) -> ChannelTranscript:
    if len(payload) < 8:
        raise ParameterError("channel payload shorter than its fixed header")
    n, l = struct.unpack_from(">II", payload)
    rbytes = (n + 7) // 8
    cbytes = (l + 7) // 8
    if len(payload) != 8 + rbytes + cbytes:
        raise ParameterError(
            f"channel payload is {len(payload)} bytes, expected {8 + rbytes + cbytes}"
        )
    r = unpack_bits(payload[8 : 8 + rbytes], n)
    c = unpack_bits(payload[8 + rbytes :], l)
    return ChannelTranscript(c, r, ChannelParams(n, l))


def channel_payload_size(n: int, l: int) -> int:
    return 8 + (n + 7) // 8 + (l + 7) // 8


# ---------------------------------------------------------------------------
# transcript log serialization (one frame per line, shared with the
# distinguisher's battery)


def frames_to_log(frames: list[tuple[int, bytes]]) -> str:
    lines = [f"{t:02x} {len(p)} {p.hex()}" if p else f"{t:02x} 0" for t, p in frames]
    return "\n".join(lines) + "\n"
