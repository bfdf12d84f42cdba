"""Round engine for entanglement-style key exchange with encrypted
classical messages.

One round emits exactly seven frames, whose types and byte lengths are a
function of the configuration alone - never of outcomes, abort status, or
device behaviour:

    1. control   round index + 16-byte public seed for this round
    2. bulk      Alice's basis string, bit-packed
    3. bulk      Bob's basis string, bit-packed
    4. bulk      estimation positions (big-endian u32 each)
    5. channel   Alice -> Bob: estimation values, encrypted
    6. channel   Bob -> Alice: proceed/abort flag byte, encrypted
    7. channel   Bob -> Alice: reconciliation payload, encrypted; on abort
                 this slot carries fresh random bits instead (drawn from
                 the local generator, never from the key pool)

Estimation positions are derived from the round's public seed, so both
ends compute them independently; unpredictability to the *devices* is
what matters, and devices never see the seed.

Reconciliation runs over 16-bit blocks.  The parity count per block is 2
when the observed error estimate is exactly zero (a seeded random code at
the information-rate floor ceil(16*h(q)) + 2) and otherwise 15 checks of
the repetition code, which decodes up to 7 flips per block.  A short
block code that must fix multi-bit noise *reliably* needs far more
distance than the entropy floor suggests, and an unreliable code would
desynchronise the two pools; the payload is padded to the worst case
either way, so the wire never shows which code ran.  A hash tag over the
reconciled string catches residual mismatch with failure probability
2^-tag_bits.

Key accounting per round: the pool advances by n_pe + n_flag bits on an
abort and additionally n_ec bits otherwise, on both sides, keeping the
two pools aligned even across aborts.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from functools import lru_cache
from itertools import combinations

import numpy as np

from . import wire
from .budget import RateModel, binary_entropy, hoeffding_epsilon
from .devices import DevicePair
from .errors import ParameterError, PoolExhaustedError, ProtocolError
from .gf2n import standard_field, supported_degree_at_least
from .hashfam import HashParams, hash_bits
from .ipchannel import (
    ChannelParams,
    ChannelTranscript,
    KeyPool,
    decrypt,
    encrypt,
    required_key_length,
)
from .rng import SessionRandomness, public_stream

FLAG_PROCEED = 0x00
FLAG_ABORT = 0x01
FLAG_LEN = 8
BLOCK_BITS = 16
PA_SEED_BYTES = 16
TSIRELSON = 2.0 * math.sqrt(2.0)

VARIANT_FRESH_SEED = "fresh-seed"
VARIANT_CONSTANT_PAD = "constant-pad"  # deliberately broken, for the leak demo

_EC_HEADER_BITS = 16 + 32 + 8  # mismatch count u16 | agreement count u32 | parity count u8
_REPAIR_PARITIES = 15


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RoundConfig:
    """Geometry and budgets for one round; everything on the wire follows
    from these fields."""

    sifted_bits: int = 1024
    q_noise: float = 0.01
    abort_threshold_q: float = 0.11
    abort_threshold_s: float = 2.2
    pe_coefficient: float = 10.0
    corr_coefficient: float = 40.0
    pe_margin: float = 0.05
    eps_ec: float = 1e-6
    eps_pa: float = 1e-6
    eps_channel: float = 2.0 ** -10
    raw_multiplier: int = 3
    pe_sample_override: int = 0  # 0 = use pe_coefficient

    def __post_init__(self):
        if self.sifted_bits < 32:
            raise ParameterError("sifted_bits must be at least 32")
        if not 0.0 <= self.q_noise <= 0.5:
            raise ParameterError("q_noise must be within [0, 0.5]")
        if not 0.0 < self.abort_threshold_q <= 0.24:
            # beyond ~0.24 the information floor for a surviving round
            # would exceed the worst-case parity budget the frames reserve
            raise ParameterError("abort_threshold_q must be within (0, 0.24]")
        if not 0.0 < self.abort_threshold_s < TSIRELSON:
            raise ParameterError("abort_threshold_s must be within (0, 2*sqrt(2))")
        if self.pe_coefficient <= 0 or self.corr_coefficient <= 0:
            raise ParameterError("sampling coefficients must be positive")
        if not 0.0 < self.pe_margin < 0.5:
            raise ParameterError("pe_margin must be within (0, 0.5)")
        for name in ("eps_ec", "eps_pa", "eps_channel"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ParameterError(f"{name} must be within (0, 1)")
        if self.raw_multiplier < 2:
            raise ParameterError("raw_multiplier must be at least 2")
        if self.pe_sample_override < 0:
            raise ParameterError("pe_sample_override must be non-negative")
        if self.m_q > self.sifted_bits:
            raise ParameterError(
                f"estimation sample of {self.m_q} exceeds the {self.sifted_bits}-bit key"
            )
        if self.m_q >= 1 << 16:
            raise ParameterError("estimation sample does not fit its wire field")

    # -- derived geometry

    @property
    def m_q(self) -> int:
        if self.pe_sample_override:
            return self.pe_sample_override
        return math.ceil(self.pe_coefficient * math.log2(self.sifted_bits))

    @property
    def m_s(self) -> int:
        raw = math.ceil(self.corr_coefficient * math.log2(self.sifted_bits))
        return min(raw, self.sifted_bits)

    @property
    def sift_target(self) -> int:
        # estimation sample is carved out of the sifted string, so sift extra
        return self.sifted_bits + self.m_q

    @property
    def raw_pairs(self) -> int:
        return self.raw_multiplier * self.sift_target

    @property
    def l_pe(self) -> int:
        return self.m_q + self.m_s

    @property
    def n_pe(self) -> int:
        return supported_degree_at_least(required_key_length(self.l_pe, self.eps_channel))

    @property
    def n_flag(self) -> int:
        return supported_degree_at_least(required_key_length(FLAG_LEN, self.eps_channel))

    @property
    def tag_bits(self) -> int:
        return math.ceil(math.log2(1.0 / self.eps_ec))

    @property
    def nblocks(self) -> int:
        return -(-self.sifted_bits // BLOCK_BITS)

    @property
    def l_ec(self) -> int:
        return _EC_HEADER_BITS + self.nblocks * _REPAIR_PARITIES + self.tag_bits

    @property
    def n_ec(self) -> int:
        return supported_degree_at_least(required_key_length(self.l_ec, self.eps_channel))

    @property
    def n_pa(self) -> int:
        return supported_degree_at_least(self.sifted_bits)

    def pool_bits_per_round(self) -> int:
        return self.n_pe + self.n_flag + self.n_ec

    def out_len(self, s_obs: float, q_obs: float, model: RateModel) -> int:
        s = min(s_obs, TSIRELSON)
        if s <= 2.0:
            return 0
        rate = model.f(s) - 2.0 * binary_entropy(q_obs)
        margin = math.ceil(2.0 * math.log2(1.0 / self.eps_pa))
        return math.floor(self.sifted_bits * rate) - margin

    def transcript_shape(self) -> tuple[tuple[int, int], ...]:
        """(frame type, payload bytes) for one round; content-independent."""
        bases = (self.raw_pairs + 7) // 8
        return (
            (wire.TYPE_CONTROL, 4 + PA_SEED_BYTES),
            (wire.TYPE_ANNOUNCE, bases),
            (wire.TYPE_ANNOUNCE, bases),
            (wire.TYPE_ANNOUNCE, 4 * (self.m_q + self.m_s)),
            (wire.TYPE_CHANNEL, wire.channel_payload_size(self.n_pe, self.l_pe)),
            (wire.TYPE_CHANNEL, wire.channel_payload_size(self.n_flag, FLAG_LEN)),
            (wire.TYPE_CHANNEL, wire.channel_payload_size(self.n_ec, self.l_ec)),
        )

    # -- plain-text config files: one "key = value" per line

    def to_file(self, path) -> None:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)!r}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "RoundConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        with open(path, "r", encoding="ascii") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in kinds:
                    raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = int(value) if kinds[key] == "int" else float(value)
                except ValueError:
                    raise ParameterError(
                        f"{path}:{lineno}: bad value for {key}: {value.strip()!r}"
                    ) from None
        return cls(**values)


# ---------------------------------------------------------------------------
# bit helpers


def _bits_to_int(bits: np.ndarray) -> int:
    if bits.size == 0:
        return 0
    packed = np.packbits(bits.astype(np.uint8))
    return int.from_bytes(packed.tobytes(), "big") >> (-bits.size % 8)


def _int_to_bits(value: int, nbits: int) -> np.ndarray:
    if nbits == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = (value << (-nbits % 8)).to_bytes((nbits + 7) // 8, "big")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:nbits]


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class Estimate:
    q_obs: float
    s_obs: float
    q_num: int
    s_num: int
    abort: bool
    eps_pe: float


def sampling_plan(pa_seed: bytes, cfg: RoundConfig, crossed_size: int):
    """Estimation positions, derived from the round's public seed.

    Returns (q_rel, s_rel): sorted positions into the sifted string and
    into the crossed-basis list.  Devices never see pa_seed, so the
    sample stays unpredictable to them at measurement time.
    """
    if crossed_size < cfg.m_s:
        raise ProtocolError(
            f"correlation pool of {crossed_size} cannot supply {cfg.m_s} samples"
        )
    stream = public_stream(pa_seed, "sampling")
    q_rel = np.sort(stream.np.choice(cfg.sift_target, size=cfg.m_q, replace=False))
    s_rel = np.sort(stream.np.choice(crossed_size, size=cfg.m_s, replace=False))
    return q_rel, s_rel


def estimate_parameters(
    alice_values: int,
    bob_sift_sample: np.ndarray,
    bob_corr_sample: np.ndarray,
    cfg: RoundConfig,
) -> Estimate:
    """Bob-side comparison of the decrypted estimation values with his own."""
    if bob_sift_sample.shape[0] != cfg.m_q or bob_corr_sample.shape[0] != cfg.m_s:
        raise ParameterError("sample sizes do not match the configuration")
    bits = _int_to_bits(alice_values, cfg.l_pe)
    q_num = int(np.count_nonzero(bits[: cfg.m_q] != bob_sift_sample))
    s_num = int(np.count_nonzero(bits[cfg.m_q :] == bob_corr_sample))
    q_obs = q_num / cfg.m_q
    # both crossed settings test the same agreement condition, so the
    # correlation score is a rescaled agreement rate
    s_obs = 8.0 * (s_num / cfg.m_s - 0.5)
    abort = q_obs > cfg.abort_threshold_q or s_obs < cfg.abort_threshold_s
    return Estimate(q_obs, s_obs, q_num, s_num, abort, hoeffding_epsilon(cfg.m_q, cfg.pe_margin))


# ---------------------------------------------------------------------------
# reconciliation: 16-bit blocks, syndrome decoding, hash tag


def parity_count(q_obs: float) -> int:
    """Parities per block: the floor ceil(16*h(q)) + 2 when no errors were
    observed, else 15 repetition-code checks (decodes up to 7 flips).

    The floor is enough information-theoretically but a 16-bit random
    code cannot reliably place multi-bit corrections, and an unreliable
    decode desynchronises the parties; the escalated code trades pool
    budget for decode certainty.  Estimates above the abort threshold
    never reach this point, and the threshold cap keeps
    ceil(16*h(q)) + 2 <= 15 on the surviving range, so the floor is
    respected in both branches.
    """
    if not 0.0 <= q_obs <= 0.5:
        raise ParameterError("error estimate must be within [0, 0.5]")
    if q_obs == 0.0:
        return 2
    return _REPAIR_PARITIES


def _code_columns(p: int, pa_seed: bytes) -> tuple[int, ...]:
    """Parity-check columns; column j holds the checks data bit j feeds."""
    if p == _REPAIR_PARITIES:
        # repetition-code checks: parity i compares bit i against bit 15
        cols = [1 << (p - 1 - i) for i in range(BLOCK_BITS - 1)]
        cols.append((1 << p) - 1)
        return tuple(cols)
    stream = public_stream(pa_seed, "block-code", p)
    return tuple(int(stream.getrandbits(p)) for _ in range(BLOCK_BITS))


def block_syndrome(block: int, cols: tuple[int, ...]) -> int:
    s = 0
    for j in range(BLOCK_BITS):
        if (block >> (BLOCK_BITS - 1 - j)) & 1:
            s ^= cols[j]
    return s


@lru_cache(maxsize=8)
def _decode_table(cols: tuple[int, ...]) -> dict:
    """syndrome -> minimum-weight error pattern, filled exhaustively in
    order of increasing weight (ties resolved by enumeration order)."""
    table: dict[int, int] = {}
    full = 1 << max(cols).bit_length() if cols else 1
    for weight in range(BLOCK_BITS + 1):
        for positions in combinations(range(BLOCK_BITS), weight):
            e = 0
            s = 0
            for j in positions:
                e |= 1 << (BLOCK_BITS - 1 - j)
                s ^= cols[j]
            table.setdefault(s, e)
        if len(table) >= full:
            break
    return table


def _split_blocks(value: int, nbits: int) -> list[int]:
    nb = -(-nbits // BLOCK_BITS)
    total = nb * BLOCK_BITS
    value <<= total - nbits  # zero tail pad, identical on both sides
    return [(value >> (total - BLOCK_BITS * (i + 1))) & 0xFFFF for i in range(nb)]


def _join_blocks(blocks: list[int], nbits: int) -> int:
    value = 0
    for b in blocks:
        value = (value << BLOCK_BITS) | b
    return value >> (len(blocks) * BLOCK_BITS - nbits)


def _verification_tag(key_bits: int, cfg: RoundConfig, pa_seed: bytes) -> int:
    seed_elem = public_stream(pa_seed, "verify-seed").getrandbits(cfg.n_pa)
    params = HashParams(standard_field(cfg.n_pa), cfg.tag_bits)
    return hash_bits(key_bits, seed_elem, params)


@dataclass(frozen=True)
class EcPayload:
    q_num: int
    s_num: int
    parity_bits: int
    parities: tuple[int, ...]
    tag: int


def build_ec_payload(
    raw_key: int,
    est: Estimate,
    cfg: RoundConfig,
    pa_seed: bytes,
    pad_rng,
) -> int:
    """Bob's reconciliation message as an l_ec-bit integer, worst-case padded.

    The code is sized from the deviation-padded estimate, not the raw
    point value: a sample with zero observed mismatches does not certify
    a mismatch-free string, and the payload is worst-case padded anyway,
    so under-provisioning would risk desynchronising the parties to save
    nothing on the wire.
    """
    p = parity_count(min(est.q_obs + cfg.pe_margin, 0.5))
    cols = _code_columns(p, pa_seed)
    value = est.q_num
    value = (value << 32) | est.s_num
    value = (value << 8) | p
    for block in _split_blocks(raw_key, cfg.sifted_bits):
        value = (value << p) | block_syndrome(block, cols)
    value = (value << cfg.tag_bits) | _verification_tag(raw_key, cfg, pa_seed)
    pad = cfg.l_ec - (_EC_HEADER_BITS + cfg.nblocks * p + cfg.tag_bits)
    return (value << pad) | pad_rng.getrandbits(pad)


def parse_ec_payload(payload: int, cfg: RoundConfig) -> EcPayload:
    shift = cfg.l_ec

    def take(nbits: int) -> int:
        nonlocal shift
        shift -= nbits
        return (payload >> shift) & ((1 << nbits) - 1)

    q_num = take(16)
    s_num = take(32)
    p = take(8)
    if not 1 <= p <= _REPAIR_PARITIES:
        raise ProtocolError(f"parity count {p} out of range")
    parities = tuple(take(p) for _ in range(cfg.nblocks))
    return EcPayload(q_num, s_num, p, parities, take(cfg.tag_bits))


def correct_key(
    alice_raw: int, ec: EcPayload, cfg: RoundConfig, pa_seed: bytes
) -> tuple[int, bool]:
    """Move Alice's string onto Bob's; returns (corrected, tag_ok)."""
    cols = _code_columns(ec.parity_bits, pa_seed)
    table = _decode_table(cols)
    out = []
    for block, parity in zip(_split_blocks(alice_raw, cfg.sifted_bits), ec.parities):
        sigma = block_syndrome(block, cols) ^ parity
        out.append(block ^ table.get(sigma, 0))
    corrected = _join_blocks(out, cfg.sifted_bits)
    return corrected, _verification_tag(corrected, cfg, pa_seed) == ec.tag


def privacy_amplify(key_bits: int, cfg: RoundConfig, pa_seed: bytes, out_len: int) -> int:
    """Compress the reconciled string with a publicly seeded hash."""
    if not 1 <= out_len < cfg.sifted_bits:
        raise ParameterError("output length must sit inside (0, sifted_bits)")
    seed_elem = public_stream(pa_seed, "amplify-seed").getrandbits(cfg.n_pa)
    return hash_bits(key_bits, seed_elem, HashParams(standard_field(cfg.n_pa), out_len))


# ---------------------------------------------------------------------------
# channel wrappers (the broken variant exists for the leak demonstration)


def _channel_encrypt(a: int, k: int, params: ChannelParams, seed_rng, variant: str) -> ChannelTranscript:
    if variant == VARIANT_FRESH_SEED:
        return encrypt(a, k, params, seed_rng)
    if variant == VARIANT_CONSTANT_PAD:
        # broken on purpose: the pad ignores the fresh seed, so the pad
        # repeats whenever the key does and an insider who knows k strips it
        r = seed_rng.getrandbits(params.n)
        return ChannelTranscript((a ^ k) & ((1 << params.l) - 1), r, params)
    raise ParameterError(f"unknown channel variant {variant!r}")


def _channel_decrypt(t: ChannelTranscript, k: int, variant: str) -> int:
    if variant == VARIANT_FRESH_SEED:
        return decrypt(t, k)
    if variant == VARIANT_CONSTANT_PAD:
        return (t.c ^ k) & ((1 << t.params.l) - 1)
    raise ParameterError(f"unknown channel variant {variant!r}")


# ---------------------------------------------------------------------------
# the round


@dataclass(frozen=True)
class RoundResult:
    index: int
    aborted: bool
    abort_reason: str | None
    q_obs: float | None
    s_obs: float | None
    eps_pe: float | None
    new_key: int | None
    new_key_len: int
    bob_key: int | None
    key_consumed: int
    frames: tuple[tuple[int, bytes], ...]
    dos: bool = False


def _abort_result(index, reason, est, consumed, frames):
    return RoundResult(
        index=index,
        aborted=True,
        abort_reason=reason,
        q_obs=est.q_obs if est else None,
        s_obs=est.s_obs if est else None,
        eps_pe=est.eps_pe if est else None,
        new_key=None,
        new_key_len=0,
        bob_key=None,
        key_consumed=consumed,
        frames=tuple(frames),
    )


def run_round(
    cfg: RoundConfig,
    pool_a: KeyPool,
    pool_b: KeyPool,
    devices: DevicePair,
    randomness: SessionRandomness,
    index: int,
    rate_model: RateModel | None = None,
    channel_variant: str = VARIANT_FRESH_SEED,
) -> RoundResult:
    """One full round between two in-process parties sharing `randomness`.

    Raises PoolExhaustedError before touching anything if either pool
    cannot cover the worst-case draw for the round.
    """
    model = rate_model if rate_model is not None else RateModel()
    need = cfg.pool_bits_per_round()
    if pool_a.remaining_bits < need or pool_b.remaining_bits < need:
        raise PoolExhaustedError(
            f"round needs {need} bits, pools hold "
            f"{pool_a.remaining_bits}/{pool_b.remaining_bits}"
        )

    rng_alice = randomness.stream("alice", index)
    rng_bob = randomness.stream("bob", index)
    rng_devices = randomness.stream("devices", index)

    # threat model: devices may already know everything the pool holds
    devices.note_visible_keys(pool_a.peek(need), need)

    pa_seed = rng_alice.bytes(PA_SEED_BYTES)
    frames: list[tuple[int, bytes]] = [
        (wire.TYPE_CONTROL, struct.pack(">I", index) + pa_seed)
    ]

    bases_a = rng_alice.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    bases_b = rng_bob.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    out_a, out_b = devices.measure(bases_a, bases_b, rng_devices)
    frames.append((wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_a)))
    frames.append((wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_b)))

    matched = np.flatnonzero(bases_a == bases_b)
    crossed = np.flatnonzero(bases_a != bases_b)
    if matched.shape[0] < cfg.sift_target:
        raise ProtocolError(
            f"only {matched.shape[0]} matched pairs, need {cfg.sift_target}"
        )
    sift_pos = matched[: cfg.sift_target]

    q_rel, s_rel = sampling_plan(pa_seed, cfg, crossed.shape[0])
    q_abs = sift_pos[q_rel]
    s_abs = crossed[s_rel]
    frames.append(
        (wire.TYPE_ANNOUNCE, np.concatenate([q_abs, s_abs]).astype(">u4").tobytes())
    )

    # message 1 of 3 (Alice -> Bob): estimation values
    pe_values = _bits_to_int(np.concatenate([out_a[q_abs], out_a[s_abs]]))
    k_pe_a = pool_a.dispense(cfg.n_pe)
    k_pe_b = pool_b.dispense(cfg.n_pe)
    pe_params = ChannelParams(cfg.n_pe, cfg.l_pe)
    pe_frame = _channel_encrypt(
        pe_values, k_pe_a, pe_params, randomness.stream("seed", index, "pe"), channel_variant
    )
    frames.append((wire.TYPE_CHANNEL, wire.encode_channel_payload(pe_frame)))

    est = estimate_parameters(
        _channel_decrypt(pe_frame, k_pe_b, channel_variant), out_b[q_abs], out_b[s_abs], cfg
    )

    # message 2 of 3 (Bob -> Alice): proceed/abort flag
    k_flag_a = pool_a.dispense(cfg.n_flag)
    k_flag_b = pool_b.dispense(cfg.n_flag)
    flag_frame = _channel_encrypt(
        FLAG_ABORT if est.abort else FLAG_PROCEED,
        k_flag_b,
        ChannelParams(cfg.n_flag, FLAG_LEN),
        randomness.stream("seed", index, "flag"),
        channel_variant,
    )
    frames.append((wire.TYPE_CHANNEL, wire.encode_channel_payload(flag_frame)))
    alice_sees_abort = _channel_decrypt(flag_frame, k_flag_a, channel_variant) != FLAG_PROCEED
    assert alice_sees_abort == est.abort  # pools identical in-process
    consumed = cfg.n_pe + cfg.n_flag

    keep = np.ones(cfg.sift_target, dtype=bool)
    keep[q_rel] = False
    raw_a = _bits_to_int(out_a[sift_pos][keep])
    raw_b = _bits_to_int(out_b[sift_pos][keep])

    if est.abort:
        # message 3 slot: filler with the exact shape of a channel use,
        # drawn from the generator, not the pool; neither side dispenses
        filler = ChannelTranscript(
            rng_bob.getrandbits(cfg.l_ec),
            rng_bob.getrandbits(cfg.n_ec),
            ChannelParams(cfg.n_ec, cfg.l_ec),
        )
        frames.append((wire.TYPE_CHANNEL, wire.encode_channel_payload(filler)))
        return _abort_result(index, "estimate", est, consumed, frames)

    # message 3 of 3 (Bob -> Alice): reconciliation
    k_ec_a = pool_a.dispense(cfg.n_ec)
    k_ec_b = pool_b.dispense(cfg.n_ec)
    consumed += cfg.n_ec
    ec_value = build_ec_payload(raw_b, est, cfg, pa_seed, rng_bob)
    ec_frame = _channel_encrypt(
        ec_value,
        k_ec_b,
        ChannelParams(cfg.n_ec, cfg.l_ec),
        randomness.stream("seed", index, "ec"),
        channel_variant,
    )
    frames.append((wire.TYPE_CHANNEL, wire.encode_channel_payload(ec_frame)))

    ec = parse_ec_payload(_channel_decrypt(ec_frame, k_ec_a, channel_variant), cfg)
    corrected, tag_ok = correct_key(raw_a, ec, cfg, pa_seed)
    if not tag_ok:
        return _abort_result(index, "verify", est, consumed, frames)

    # Alice recomputes the estimates from the payload header, so both
    # sides feed identical numbers into the output length
    q_obs = ec.q_num / cfg.m_q
    s_obs = 8.0 * (ec.s_num / cfg.m_s - 0.5)
    out_len = cfg.out_len(s_obs, q_obs, model)
    if out_len < 1:
        return _abort_result(index, "rate", est, consumed, frames)

    return RoundResult(
        index=index,
        aborted=False,
        abort_reason=None,
        q_obs=est.q_obs,
        s_obs=est.s_obs,
        eps_pe=est.eps_pe,
        new_key=privacy_amplify(corrected, cfg, pa_seed, out_len),
        new_key_len=out_len,
        bob_key=privacy_amplify(raw_b, cfg, pa_seed, out_len),
        key_consumed=consumed,
        frames=tuple(frames),
    )


# ---------------------------------------------------------------------------
# denial-of-service shadow traffic


def dos_round(cfg: RoundConfig, randomness: SessionRandomness, index: int) -> RoundResult:
    """Shape-identical decoy round: no pool bits, no key, random contents."""
    rng = randomness.stream("dos", index)
    pa_seed = rng.bytes(PA_SEED_BYTES)
    frames: list[tuple[int, bytes]] = [
        (wire.TYPE_CONTROL, struct.pack(">I", index) + pa_seed)
    ]
    bases_a = rng.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    bases_b = rng.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    frames.append((wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_a)))
    frames.append((wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_b)))
    matched = np.flatnonzero(bases_a == bases_b)
    crossed = np.flatnonzero(bases_a != bases_b)
    if matched.shape[0] < cfg.sift_target or crossed.shape[0] < cfg.m_s:
        raise ProtocolError("raw block too small to shape decoy traffic")
    q_rel, s_rel = sampling_plan(pa_seed, cfg, crossed.shape[0])
    frames.append(
        (
            wire.TYPE_ANNOUNCE,
            np.concatenate([matched[: cfg.sift_target][q_rel], crossed[s_rel]])
            .astype(">u4")
            .tobytes(),
        )
    )
    for n, l in ((cfg.n_pe, cfg.l_pe), (cfg.n_flag, FLAG_LEN), (cfg.n_ec, cfg.l_ec)):
        decoy = ChannelTranscript(
            rng.getrandbits(l), rng.getrandbits(n), ChannelParams(n, l)
        )
        frames.append((wire.TYPE_CHANNEL, wire.encode_channel_payload(decoy)))
    return RoundResult(
        index=index,
        aborted=True,
        abort_reason="dos",
        q_obs=None,
        s_obs=None,
        eps_pe=None,
        new_key=None,
        new_key_len=0,
        bob_key=None,
        key_consumed=0,
        frames=tuple(frames),
        dos=True,
    )


# ---------------------------------------------------------------------------
# sessions


@dataclass
class SessionResult:
    config: RoundConfig
    rounds: list[RoundResult]
    frames: list[tuple[int, bytes]]

    def log(self) -> str:
        return wire.frames_to_log(self.frames)

    @property
    def aborted_rounds(self) -> list[int]:
        return [r.index for r in self.rounds if r.aborted and not r.dos]

    @property
    def dos_rounds(self) -> list[int]:
        return [r.index for r in self.rounds if r.dos]

    @property
    def produced_bits(self) -> int:
        return sum(r.new_key_len for r in self.rounds)

    @property
    def consumed_bits(self) -> int:
        return sum(r.key_consumed for r in self.rounds)


def run_session(
    cfg: RoundConfig,
    pool_a: KeyPool,
    pool_b: KeyPool,
    devices: DevicePair,
    randomness: SessionRandomness,
    rounds: int,
    rate_model: RateModel | None = None,
    append_keys: bool = True,
) -> SessionResult:
    """Run rounds back to back; once a pool cannot cover a round, every
    remaining round is emitted as decoy traffic instead of stopping."""
    results: list[RoundResult] = []
    frames: list[tuple[int, bytes]] = []
    exhausted = False
    for index in range(rounds):
        if exhausted:
            res = dos_round(cfg, randomness, index)
        else:
            try:
                res = run_round(
                    cfg, pool_a, pool_b, devices, randomness, index, rate_model
                )
            except PoolExhaustedError:
                exhausted = True
                res = dos_round(cfg, randomness, index)
        results.append(res)
        frames.extend(res.frames)
        if append_keys and res.new_key is not None and res.bob_key is not None:
            pool_a.append(res.new_key, res.new_key_len, origin=f"round-{index}")
            pool_b.append(res.bob_key, res.new_key_len, origin=f"round-{index}")
    return SessionResult(cfg, results, frames)


# ---------------------------------------------------------------------------
# insider leak demonstration


@dataclass(frozen=True)
class LeakDemoResult:
    payload: int
    payload_len: int
    emitted_bits: int
    leaked: bool
    variant: str


def insider_leak_demo(
    payload: int, payload_len: int, seed: int = 0, variant: str = VARIANT_CONSTANT_PAD
) -> LeakDemoResult:
    """Worst-case insider: the device knows the pool and the round's public
    seed in advance, and plants its payload pre-masked so that a channel
    whose pad ignores the fresh seed emits the payload verbatim in frame 5.
    Run with the real channel variant, the same device leaks nothing."""
    if payload_len < 1 or payload_len > 24 or payload >> payload_len:
        raise ParameterError("payload must fit in 1..24 bits")
    cfg = RoundConfig(sifted_bits=64, q_noise=0.0, eps_channel=2.0 ** -10)
    randomness = SessionRandomness(seed)
    need = cfg.pool_bits_per_round()
    pool_a = KeyPool.from_random(need, randomness.stream("pool"))
    pool_b = KeyPool.from_random(need, randomness.stream("pool"))

    devices = _PlantingDevicePair(cfg, payload, payload_len)
    # replay of the public values the device is assumed to know in advance
    devices.memory["pa_seed"] = randomness.stream("alice", 0).bytes(PA_SEED_BYTES)

    res = run_round(cfg, pool_a, pool_b, devices, randomness, 0, channel_variant=variant)
    pe_frame = wire.decode_channel_payload(res.frames[4][1])
    emitted = pe_frame.c >> (cfg.l_pe - payload_len)
    return LeakDemoResult(payload, payload_len, emitted, emitted == payload, variant)


class _PlantingDevicePair(DevicePair):
    """Leak-demo device: outputs payload XOR constant-pad bits at the
    positions the public seed will sample."""

    def __init__(self, cfg: RoundConfig, payload: int, payload_len: int):
        super().__init__()
        self.cfg = cfg
        self.payload = payload
        self.payload_len = payload_len
        self.memory["known_keys"] = []

    def note_visible_keys(self, bits: int, nbits: int) -> None:
        self.memory["known_keys"].append((bits, nbits))

    def measure(self, bases_a, bases_b, rng):
        cfg = self.cfg
        outcomes_a = rng.np.integers(0, 2, size=bases_a.shape[0], dtype=np.uint8)
        outcomes_b = outcomes_a.copy()  # noiseless agreement on matched pairs
        bits, nbits = self.memory["known_keys"][-1]
        k_pe = bits >> (nbits - cfg.n_pe)  # first dispense of the round
        pad = k_pe & ((1 << cfg.l_pe) - 1)
        matched = np.flatnonzero(bases_a == bases_b)
        crossed = np.flatnonzero(bases_a != bases_b)
        q_rel, _ = sampling_plan(self.memory["pa_seed"], cfg, crossed.shape[0])
        plant_at = matched[: cfg.sift_target][q_rel]
        for i in range(self.payload_len):
            d_bit = (self.payload >> (self.payload_len - 1 - i)) & 1
            pad_bit = (pad >> (cfg.l_pe - 1 - i)) & 1
            outcomes_a[plant_at[i]] = d_bit ^ pad_bit
        return outcomes_a, outcomes_b
