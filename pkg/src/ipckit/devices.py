"""Measurement-device models for the key-exchange simulator.

The device pair is the one untrusted component.  Per round the simulator
hands it exactly two things: the basis strings and a sampling stream; the
only other state it can consult is its own persistent memory.  Key
material never flows in through the measurement call - a malicious model
that wants it must receive it explicitly via note_visible_keys(), which
mirrors the threat assumption that devices may ship already knowing every
previously generated key, but learn nothing else mid-protocol.

Basis convention: two settings per side, 0 or 1.  Matched-basis pairs
feed the sifted key and agree with probability 1 - q_noise.  Mismatched
pairs feed the correlation estimate; under the honest model they agree
with probability 1/2 + (1 - 2*q_noise)/(2*sqrt(2)), which makes the
rescaled estimator land at 2*sqrt(2)*(1 - 2*q_noise).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

_INV_2SQRT2 = 1.0 / (2.0 * math.sqrt(2.0))


class DevicePair:
    """Base model: subclasses override measure(); memory persists."""

    def __init__(self):
        self.memory: dict = {}

    def note_visible_keys(self, bits: int, nbits: int) -> None:
        """Key material the threat model lets the device know. No-op here."""

    def measure(self, bases_a: np.ndarray, bases_b: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class HonestDevicePair(DevicePair):
    """Classical sampler of the noisy maximally-correlated statistics."""

    def __init__(self, q_noise: float):
        super().__init__()
        if not 0.0 <= q_noise <= 0.5:
            raise ParameterError("q_noise must be within [0, 0.5]")
        self.q_noise = q_noise

    def measure(self, bases_a, bases_b, rng):
        n = bases_a.shape[0]
        outcomes_a = rng.np.integers(0, 2, size=n, dtype=np.uint8)
        matched = bases_a == bases_b
        agree_matched = 1.0 - self.q_noise
        agree_mismatched = 0.5 + (1.0 - 2.0 * self.q_noise) * _INV_2SQRT2
        agree = np.where(matched, agree_matched, agree_mismatched)
        flips = (rng.np.random(n) >= agree).astype(np.uint8)
        return outcomes_a, outcomes_a ^ flips


class AbortSignalDevicePair(HonestDevicePair):
    # covert channel attempt: force parameter-estimation aborts on chosen
    # rounds by flipping a third of Bob's matched outcomes
    def __init__(self, q_noise: float, abort_rounds):
        super().__init__(q_noise)
        self.abort_rounds = frozenset(abort_rounds)
        self.memory["round"] = 0

    def measure(self, bases_a, bases_b, rng):
        outcomes_a, outcomes_b = super().measure(bases_a, bases_b, rng)
        this_round = self.memory["round"]
        self.memory["round"] = this_round + 1
        if this_round in self.abort_rounds:
            matched = bases_a == bases_b
            flips = (rng.np.random(bases_a.shape[0]) < (1.0 / 3.0)) & matched
            outcomes_b = outcomes_b ^ flips.astype(np.uint8)
        return outcomes_a, outcomes_b


class RecordingDevicePair(DevicePair):
    """Wrapper logging exactly what the engine exposes to a device."""

    def __init__(self, inner: DevicePair):
        super().__init__()
        self.inner = inner
        self.log: list[dict] = []

    def note_visible_keys(self, bits: int, nbits: int) -> None:
        self.log.append({"call": "note_visible_keys", "nbits": nbits})
        self.inner.note_visible_keys(bits, nbits)

    def measure(self, bases_a, bases_b, rng):
        self.log.append(
            {
                "call": "measure",
                "bases_a": bases_a.copy(),
                "bases_b": bases_b.copy(),
                "extra_args": (),
            }
        )
        return self.inner.measure(bases_a, bases_b, rng)
