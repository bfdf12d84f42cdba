"""Insider-proof one-time channel and consumable key pools.

The channel hides an ℓ-bit message `a` even from an eavesdropper who chose
`a` as a function of the shared key k: the sender draws a fresh public
seed r (after the message is fixed, never before), broadcasts

    c = a XOR truncate(k * r, ℓ)        (multiplication in GF(2^n))

together with r, and discards k.  With n > 2ℓ the pair (c, r) is within
total-variation distance eps = sqrt(2^(2ℓ-n)) of uniform regardless of how
the message was correlated with the key, so a one-bit secret (such as
"did the run abort?") cannot be signalled through the ciphertext.

Key material comes from a KeyPool: an append-only store of one-time bits
with a monotonically increasing consumed offset.  File-backed pools
persist the new offset (and zeroize the consumed bytes) before dispensed
bits are handed to the caller, so a crash can lose key but never reuse it.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ParameterError, PoolExhaustedError, PoolFormatError
from .gf2n import FieldSpec, gf_mul, standard_field, supported_degree_at_least, truncate


class ChannelEpsilon(NamedTuple):
    """Channel distinguishing bound, with log2 carried separately.

    For large n - 2ℓ the real value underflows a double to 0.0; log2 is
    exact (a half-integer) and is what budget comparisons should use when
    `value` underflows.
    """

    value: float
    log2: float


def channel_epsilon(n: int, l: int) -> ChannelEpsilon:
    """eps = sqrt(2^(2ℓ-n)) for key length n, message length ℓ.

    Requires n > 2ℓ >= 2; equality n = 2ℓ would give the vacuous bound 1.
    """
    if l < 1:
        raise ParameterError(f"message length must be >= 1, got {l}")
    if n <= 2 * l:
        raise ParameterError(
            f"insecure parameters: key length {n} must exceed twice the "
            f"message length ({2 * l})"
        )
    log2 = (2 * l - n) / 2
    return ChannelEpsilon(2.0**log2 if log2 > -1074 else 0.0, log2)


def required_key_length(l: int, eps_target: float) -> int:
    """Smallest n with sqrt(2^(2ℓ-n)) <= eps_target: n = 2ℓ + ceil(2·log2(1/eps))."""
    if l < 1:
        raise ParameterError(f"message length must be >= 1, got {l}")
    if not 0.0 < eps_target < 1.0:
        raise ParameterError(f"eps_target must be in (0, 1), got {eps_target}")
    margin = math.ceil(2 * math.log2(1.0 / eps_target))
    # guard the ceil against float error at exact-power-of-two targets
    while margin > 1 and 2.0 ** (-(margin - 1) / 2) <= eps_target:
        margin -= 1
    while 2.0 ** (-margin / 2) > eps_target:
        margin += 1
    return 2 * l + max(margin, 1)


@dataclass(frozen=True)
class ChannelParams:
    """Key/seed length n and message length ℓ for one channel use."""

    n: int
    l: int
    field: FieldSpec = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        channel_epsilon(self.n, self.l)  # validates n > 2l >= 2
        object.__setattr__(self, "field", standard_field(self.n))

    @property
    def epsilon(self) -> ChannelEpsilon:
        return channel_epsilon(self.n, self.l)


def params_for_message(l: int, eps_target: float) -> ChannelParams:
    """Channel parameters for an ℓ-bit message, snapping the key length up
    to the nearest built-in field degree (which can only improve eps)."""
    return ChannelParams(supported_degree_at_least(required_key_length(l, eps_target)), l)


@dataclass(frozen=True)
class ChannelTranscript:
    """The public broadcast of one channel use: ciphertext and hash seed."""

    c: int
    r: int
    params: ChannelParams

    def __post_init__(self):
        if not 0 <= self.c < (1 << self.params.l):
            raise ParameterError("ciphertext does not fit the message length")
        if not 0 <= self.r < (1 << self.params.n):
            raise ParameterError("seed does not fit the key length")


def encrypt(a: int, k: int, params: ChannelParams, rng) -> ChannelTranscript:
    """One channel use: draw r fresh, return (c = a XOR hash(k, r), r).

    The seed is drawn from `rng` only after `a` is fixed by the caller;
    this argument order is the API's way of enforcing the message-first
    contract.  The caller must have dispensed k from a pool and must not
    reuse it.  (Python ints cannot be zeroized in place; pools zeroize
    their own buffers, and callers should drop references to k promptly.)
    """
    if not 0 <= a < (1 << params.l):
        raise ParameterError(f"message does not fit {params.l} bits")
    if not 0 <= k < (1 << params.n):
        raise ParameterError(f"key does not fit {params.n} bits")
    r = rng.getrandbits(params.n)
    pad = truncate(gf_mul(k, r, params.field), params.l, params.n)
    return ChannelTranscript(a ^ pad, r, params)


def decrypt(t: ChannelTranscript, k: int) -> int:
    """Recover a = c XOR hash(k, r) from a channel transcript."""
    params = t.params
    if not 0 <= k < (1 << params.n):
        raise ParameterError(f"key does not fit {params.n} bits")
    pad = truncate(gf_mul(k, t.r, params.field), params.l, params.n)
    return t.c ^ pad


# ---------------------------------------------------------------------------
# key pool

_POOL_MAGIC = "IPCPOOL"
_POOL_VERSION = "v1"
_HEX_WRAP = 64


class KeyPool:
    """Ordered store of one-time key bits with a consumed-bit offset.

    Bit i of the pool is bit (7 - i%8) of byte i//8, i.e. bytes are read
    most significant bit first, matching the hex serialization in the pool
    file.  dispense() returns the next bits as an int, first bit most
    significant.

    Single-writer: concurrent dispensers must serialize externally.  When
    `path` is set, every dispense/append atomically rewrites the file with
    the new offset before the bits are returned, and consumed bytes are
    zeroized both in memory and on disk.
    """

    def __init__(self, material: bytes | bytearray, total_bits: int | None = None,
                 consumed_bits: int = 0, origin: str = "initial",
                 path: str | os.PathLike | None = None):
        self._buf = bytearray(material)
        self.total_bits = 8 * len(self._buf) if total_bits is None else total_bits
        if self.total_bits > 8 * len(self._buf):
            raise ParameterError("total_bits exceeds the supplied material")
        self.consumed_bits = consumed_bits
        if not 0 <= consumed_bits <= self.total_bits:
            raise ParameterError("consumed offset outside pool")
        self.path = os.fspath(path) if path is not None else None
        # (start_bit, end_bit, label) provenance segments
        self.segments: list[tuple[int, int, str]] = (
            [(0, self.total_bits, origin)] if self.total_bits else []
        )
        self._zeroize_consumed()

    # -- construction helpers

    @classmethod
    def from_random(cls, nbits: int, rng, origin: str = "initial",
                    path: str | os.PathLike | None = None) -> "KeyPool":
        material = bytearray((nbits + 7) // 8)
        if nbits:
            val = rng.getrandbits(nbits) << (-nbits % 8)
            material = bytearray(val.to_bytes(len(material), "big"))
        pool = cls(material, total_bits=nbits, origin=origin, path=path)
        if path is not None:
            pool._persist()
        return pool

    @classmethod
    def load(cls, path: str | os.PathLike) -> "KeyPool":
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines:
            raise PoolFormatError(f"{path}: empty pool file")
        parts = lines[0].split()
        if len(parts) != 4 or parts[0] != _POOL_MAGIC or parts[1] != _POOL_VERSION:
            raise PoolFormatError(f"{path}: bad header {lines[0]!r}")
        try:
            total_bits, consumed_bits = int(parts[2]), int(parts[3])
        except ValueError:
            raise PoolFormatError(f"{path}: non-integer header fields") from None
        hexdata = "".join(lines[1:])
        try:
            material = bytes.fromhex(hexdata)
        except ValueError:
            raise PoolFormatError(f"{path}: invalid hex body") from None
        if len(material) != (total_bits + 7) // 8:
            raise PoolFormatError(
                f"{path}: body holds {len(material)} bytes, header claims "
                f"{total_bits} bits"
            )
        if not 0 <= consumed_bits <= total_bits:
            raise PoolFormatError(f"{path}: consumed offset outside pool")
        return cls(material, total_bits=total_bits, consumed_bits=consumed_bits,
                   path=path)

    # -- core operations

    @property
    def remaining_bits(self) -> int:
        return self.total_bits - self.consumed_bits

    def dispense(self, nbits: int) -> int:
        """Return the next nbits as an int; the offset advances (and is
        persisted, for file-backed pools) before the bits are returned."""
        if nbits < 0:
            raise ParameterError("cannot dispense a negative number of bits")
        if nbits == 0:
            return 0
        if nbits > self.remaining_bits:
            raise PoolExhaustedError(
                f"pool has {self.remaining_bits} bits left, {nbits} requested"
            )
        start = self.consumed_bits
        value = self._read_bits(start, nbits)
        self.consumed_bits = start + nbits
        self._zeroize_consumed()
        if self.path is not None:
            self._persist()
        return value

    def peek(self, nbits: int) -> int:
        """Next nbits without consuming them.

        Exists for the untrusted-device threat model, where a device may
        ship knowing key material that is still ahead of the offset, and
        for diagnostics.  Does not advance or persist anything.
        """
        if nbits < 0:
            raise ParameterError("cannot peek a negative number of bits")
        if nbits == 0:
            return 0
        if nbits > self.remaining_bits:
            raise PoolExhaustedError(
                f"pool has {self.remaining_bits} bits left, {nbits} requested"
            )
        return self._read_bits(self.consumed_bits, nbits)

    def append(self, bits: int, nbits: int, origin: str) -> None:
        """Deposit new key material (e.g. a round's output) at the tail."""
        if nbits < 0:
            raise ParameterError("cannot append a negative number of bits")
        if bits < 0 or bits >> nbits:
            raise ParameterError("appended value does not fit the declared width")
        if nbits == 0:
            return
        end = self.total_bits
        self._ensure_capacity(end + nbits)
        self._write_bits(end, bits, nbits)
        self.total_bits = end + nbits
        self.segments.append((end, self.total_bits, origin))
        if self.path is not None:
            self._persist()

    # -- bit plumbing

    def _read_bits(self, start: int, nbits: int) -> int:
        end = start + nbits
        first, last = start // 8, (end + 7) // 8
        window = int.from_bytes(self._buf[first:last], "big")
        spare = 8 * (last - first) - (end - 8 * first)
        return (window >> spare) & ((1 << nbits) - 1)

    def _write_bits(self, start: int, bits: int, nbits: int) -> None:
        end = start + nbits
        first, last = start // 8, (end + 7) // 8
        width = 8 * (last - first)
        window = int.from_bytes(self._buf[first:last], "big")
        shift = width - (end - 8 * first)
        mask = ((1 << nbits) - 1) << shift
        window = (window & ~mask) | ((bits << shift) & mask)
        self._buf[first:last] = window.to_bytes(last - first, "big")

    def _ensure_capacity(self, bits: int) -> None:
        need = (bits + 7) // 8
        if need > len(self._buf):
            self._buf.extend(b"\x00" * (need - len(self._buf)))

    def _zeroize_consumed(self) -> None:
        whole = self.consumed_bits // 8
        for i in range(whole):
            self._buf[i] = 0
        if self.consumed_bits % 8 and whole < len(self._buf):
            self._buf[whole] &= 0xFF >> (self.consumed_bits % 8)

    # -- persistence

    def _persist(self) -> None:
        assert self.path is not None
        body = self._buf[: (self.total_bits + 7) // 8].hex()
        lines = [f"{_POOL_MAGIC} {_POOL_VERSION} {self.total_bits} {self.consumed_bits}"]
        lines += [body[i : i + _HEX_WRAP] for i in range(0, len(body), _HEX_WRAP)]
        text = "\n".join(lines) + "\n"
        dirname = os.path.dirname(os.path.abspath(self.path))
        fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ipcpool.")
        try:
            with os.fdopen(fd, "w", encoding="ascii") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
