"""Deterministic named randomness streams.

A session holds one root seed (from the IPC_SEED environment variable, an
explicit integer, or OS entropy) and derives an independent Philox stream
per (role, purpose, round, ...) path.  Two processes constructing the same
paths from the same seed draw identical values, which is what makes peer
transcripts byte-for-byte reproducible.

public_stream() derives streams from bytes that appeared on the wire
(e.g. a round's public amplification seed), so both ends - and any
observer - can expand them identically.
"""

from __future__ import annotations

import hashlib
import os
import secrets

import numpy as np

from .errors import ParameterError

SEED_ENV_VAR = "IPC_SEED"


class Stream:
    """numpy Generator plus integer bit-drawing in pool bit order."""

    def __init__(self, seq: np.random.SeedSequence):
        self.np = np.random.Generator(np.random.Philox(seq))

    def getrandbits(self, nbits: int) -> int:
        if nbits < 0:
            raise ParameterError("cannot draw a negative number of bits")
        if nbits == 0:
            return 0
        raw = self.np.bytes((nbits + 7) // 8)
        return int.from_bytes(raw, "big") >> (-nbits % 8)

    def bytes(self, count: int) -> bytes:
        return self.np.bytes(count)


def _path_words(path: tuple) -> list[int]:
    label = "/".join(str(part) for part in path)
    digest = hashlib.blake2s(label.encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]


class SessionRandomness:
    """Root seed plus named substream derivation."""

    def __init__(self, seed: int | None = None):
        self.seed = secrets.randbits(64) if seed is None else int(seed)
        if self.seed < 0:
            raise ParameterError("session seed must be non-negative")

    @classmethod
    def from_env(cls) -> "SessionRandomness":
        raw = os.environ.get(SEED_ENV_VAR)
        if raw is None:
            return cls(None)
        try:
            return cls(int(raw, 10))
        except ValueError:
            raise ParameterError(
                f"{SEED_ENV_VAR} must be a decimal integer, got {raw!r}"
            ) from None

    def stream(self, *path) -> Stream:
        return Stream(np.random.SeedSequence([self.seed, *_path_words(path)]))


def public_stream(material: bytes, *path) -> Stream:
    """Stream derived from wire-visible bytes; anyone can reproduce it."""
    anchor = int.from_bytes(hashlib.blake2s(material).digest()[:8], "big")
    return Stream(np.random.SeedSequence([anchor, *_path_words(path)]))
