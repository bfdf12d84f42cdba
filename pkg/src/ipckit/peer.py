"""Two-process round protocol over an ordered byte stream.

Role split of one round (frame types: 0x03 control, 0x02 announce,
0x01 channel use):

    1. control   round index + public round seed   alice -> bob
    2. announce  alice's bases, packed             alice -> bob
    3. announce  bob's bases, packed               bob   -> alice
    4. announce  sample positions, u32 big-endian  alice -> bob
    5. channel   estimation values                 alice -> bob
    6. channel   proceed/abort flag                bob   -> alice
    7. channel   reconciliation (filler on abort)  bob   -> alice

After the last round each side sends one 0x04 frame carrying a 16-byte
BLAKE2s commitment to every round frame, in order, and checks the
peer's against its own; a mismatch means the two ends did not see the
same public transcript.

Both ends must share the pool file contents, the config, and the
session seed: the seed stands in for the shared physics (the simulated
devices on the two ends must sample identical outcome pairs), so unlike
the in-process simulator there is no unseeded mode here.

Verification asymmetry: the reconciliation tag travels bob -> alice
only, and the round budget is exactly three channel uses, so alice may
learn a round failed while bob cannot.  Session keys therefore go to
the caller (and the key file), never back into the pool, which keeps
the two pools in lockstep under every outcome; each side's exit status
reflects its own view.
"""

from __future__ import annotations

import hashlib
import socket
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .budget import RateModel
from .devices import HonestDevicePair
from .errors import FrameError, ParameterError, ProtocolError
from .ipchannel import ChannelParams, ChannelTranscript, KeyPool
from .qkdsim import (
    FLAG_ABORT,
    FLAG_LEN,
    FLAG_PROCEED,
    PA_SEED_BYTES,
    VARIANT_FRESH_SEED,
    RoundConfig,
    _bits_to_int,
    _channel_decrypt,
    _channel_encrypt,
    build_ec_payload,
    correct_key,
    dos_round,
    estimate_parameters,
    parse_ec_payload,
    privacy_amplify,
    sampling_plan,
)
from .rng import SessionRandomness

ROLE_ALICE = "alice"
ROLE_BOB = "bob"
DIGEST_BYTES = 16

# frame index -> sending role, for decoy rounds
_SENDER = (ROLE_ALICE, ROLE_ALICE, ROLE_BOB, ROLE_ALICE, ROLE_ALICE, ROLE_BOB, ROLE_BOB)


class _Stream:
    """Socket wrapper: framed send/expect plus an in-order frame log."""

    def __init__(self, sock: socket.socket, timeout: float = 30.0):
        sock.settimeout(timeout)
        self._sock = sock
        self._decoder = wire.FrameDecoder()
        self.frames: list[tuple[int, bytes]] = []

    def send(self, ftype: int, payload: bytes) -> None:
        self._sock.sendall(wire.encode_frame(ftype, payload))
        self.frames.append((ftype, payload))

    def expect(self, ftype: int) -> bytes:
        for got, payload in self._pump():
            if got != ftype:
                raise ProtocolError(
                    f"expected frame type 0x{ftype:02x}, got 0x{got:02x}"
                )
            self.frames.append((got, payload))
            return payload
        raise ProtocolError("stream closed mid-round")

    def _pump(self):
        while True:
            for frame in self._decoder.frames():
                yield frame
            chunk = self._sock.recv(65536)
            if not chunk:
                return
            self._decoder.feed(chunk)


@dataclass
class PeerRound:
    index: int
    aborted: bool
    abort_reason: str | None
    new_key: int | None
    new_key_len: int
    key_consumed: int
    dos: bool = False
    # estimation runs on the receiving end only, so these stay None for
    # the sending role
    q_obs: float | None = None
    s_obs: float | None = None


@dataclass
class PeerSummary:
    role: str
    config: RoundConfig
    rounds: list[PeerRound]
    frames: list[tuple[int, bytes]]
    digest_ok: bool = True
    error: str | None = None

    def log(self) -> str:
        return wire.frames_to_log(self.frames)

    @property
    def produced_bits(self) -> int:
        return sum(r.new_key_len for r in self.rounds)

    @property
    def exit_code(self) -> int:
        if self.error is not None or not self.digest_ok:
            return 1
        if any(r.abort_reason == "verify" for r in self.rounds):
            return 1
        if self.produced_bits == 0:
            return 1
        return 0


def _round_alice(io, cfg, pool, randomness, device, index, model) -> PeerRound:
    rng = randomness.stream("alice", index)
    rng_dev = randomness.stream("devices", index)
    pa_seed = rng.bytes(PA_SEED_BYTES)
    io.send(wire.TYPE_CONTROL, struct.pack(">I", index) + pa_seed)

    bases_a = rng.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    io.send(wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_a))
    bases_b = wire.unpack_bit_array(io.expect(wire.TYPE_ANNOUNCE), cfg.raw_pairs)
    out_a, _ = device.measure(bases_a, bases_b, rng_dev)

    matched = np.flatnonzero(bases_a == bases_b)
    crossed = np.flatnonzero(bases_a != bases_b)
    if matched.shape[0] < cfg.sift_target:
        raise ProtocolError("not enough matched pairs to sift")
    sift_pos = matched[: cfg.sift_target]
    q_rel, s_rel = sampling_plan(pa_seed, cfg, crossed.shape[0])
    q_abs = sift_pos[q_rel]
    s_abs = crossed[s_rel]
    io.send(
        wire.TYPE_ANNOUNCE, np.concatenate([q_abs, s_abs]).astype(">u4").tobytes()
    )

    pe_values = _bits_to_int(np.concatenate([out_a[q_abs], out_a[s_abs]]))
    k_pe = pool.dispense(cfg.n_pe)
    pe_t = _channel_encrypt(
        pe_values,
        k_pe,
        ChannelParams(cfg.n_pe, cfg.l_pe),
        randomness.stream("seed", index, "pe"),
        VARIANT_FRESH_SEED,
    )
    io.send(wire.TYPE_CHANNEL, wire.encode_channel_payload(pe_t))

    k_flag = pool.dispense(cfg.n_flag)
    flag_t = _expect_channel(io, cfg.n_flag, FLAG_LEN)
    sees_abort = _channel_decrypt(flag_t, k_flag, VARIANT_FRESH_SEED) != FLAG_PROCEED
    consumed = cfg.n_pe + cfg.n_flag

    ec_raw = _expect_channel(io, cfg.n_ec, cfg.l_ec)
    if sees_abort:  # frame 7 was filler; the reconciliation dispense is skipped
        return PeerRound(index, True, "estimate", None, 0, consumed)

    k_ec = pool.dispense(cfg.n_ec)
    consumed += cfg.n_ec
    keep = np.ones(cfg.sift_target, dtype=bool)
    keep[q_rel] = False
    raw_a = _bits_to_int(out_a[sift_pos][keep])
    try:
        ec = parse_ec_payload(_channel_decrypt(ec_raw, k_ec, VARIANT_FRESH_SEED), cfg)
    except ProtocolError:
        # garbage payload (e.g. mismatched pools) = failed verification
        return PeerRound(index, True, "verify", None, 0, consumed)
    corrected, tag_ok = correct_key(raw_a, ec, cfg, pa_seed)
    if not tag_ok:
        return PeerRound(index, True, "verify", None, 0, consumed)

    q_obs = ec.q_num / cfg.m_q
    s_obs = 8.0 * (ec.s_num / cfg.m_s - 0.5)
    out_len = cfg.out_len(s_obs, q_obs, model)
    if out_len < 1:
        return PeerRound(index, True, "rate", None, 0, consumed)
    key = privacy_amplify(corrected, cfg, pa_seed, out_len)
    return PeerRound(index, False, None, key, out_len, consumed)


def _round_bob(io, cfg, pool, randomness, device, index, model) -> PeerRound:
    rng = randomness.stream("bob", index)
    rng_dev = randomness.stream("devices", index)
    control = io.expect(wire.TYPE_CONTROL)
    if len(control) != 4 + PA_SEED_BYTES or struct.unpack(">I", control[:4])[0] != index:
        raise ProtocolError("bad control frame")
    pa_seed = control[4:]

    bases_b = rng.np.integers(0, 2, size=cfg.raw_pairs, dtype=np.uint8)
    bases_a = wire.unpack_bit_array(io.expect(wire.TYPE_ANNOUNCE), cfg.raw_pairs)
    io.send(wire.TYPE_ANNOUNCE, wire.pack_bit_array(bases_b))
    _, out_b = device.measure(bases_a, bases_b, rng_dev)

    matched = np.flatnonzero(bases_a == bases_b)
    crossed = np.flatnonzero(bases_a != bases_b)
    if matched.shape[0] < cfg.sift_target:
        raise ProtocolError("not enough matched pairs to sift")
    sift_pos = matched[: cfg.sift_target]
    q_rel, s_rel = sampling_plan(pa_seed, cfg, crossed.shape[0])
    q_abs = sift_pos[q_rel]
    s_abs = crossed[s_rel]
    positions = io.expect(wire.TYPE_ANNOUNCE)
    if positions != np.concatenate([q_abs, s_abs]).astype(">u4").tobytes():
        raise ProtocolError("announced sample positions disagree with the round seed")

    k_pe = pool.dispense(cfg.n_pe)
    pe_t = _expect_channel(io, cfg.n_pe, cfg.l_pe)
    est = estimate_parameters(
        _channel_decrypt(pe_t, k_pe, VARIANT_FRESH_SEED), out_b[q_abs], out_b[s_abs], cfg
    )

    k_flag = pool.dispense(cfg.n_flag)
    flag_t = _channel_encrypt(
        FLAG_ABORT if est.abort else FLAG_PROCEED,
        k_flag,
        ChannelParams(cfg.n_flag, FLAG_LEN),
        randomness.stream("seed", index, "flag"),
        VARIANT_FRESH_SEED,
    )
    io.send(wire.TYPE_CHANNEL, wire.encode_channel_payload(flag_t))
    consumed = cfg.n_pe + cfg.n_flag

    if est.abort:
        filler = ChannelTranscript(
            rng.getrandbits(cfg.l_ec),
            rng.getrandbits(cfg.n_ec),
            ChannelParams(cfg.n_ec, cfg.l_ec),
        )
        io.send(wire.TYPE_CHANNEL, wire.encode_channel_payload(filler))
        return PeerRound(
            index, True, "estimate", None, 0, consumed,
            q_obs=est.q_obs, s_obs=est.s_obs,
        )

    k_ec = pool.dispense(cfg.n_ec)
    consumed += cfg.n_ec
    keep = np.ones(cfg.sift_target, dtype=bool)
    keep[q_rel] = False
    raw_b = _bits_to_int(out_b[sift_pos][keep])
    ec_value = build_ec_payload(raw_b, est, cfg, pa_seed, rng)
    ec_t = _channel_encrypt(
        ec_value,
        k_ec,
        ChannelParams(cfg.n_ec, cfg.l_ec),
        randomness.stream("seed", index, "ec"),
        VARIANT_FRESH_SEED,
    )
    io.send(wire.TYPE_CHANNEL, wire.encode_channel_payload(ec_t))

    out_len = cfg.out_len(est.s_obs, est.q_obs, model)
    if out_len < 1:
        return PeerRound(
            index, True, "rate", None, 0, consumed,
            q_obs=est.q_obs, s_obs=est.s_obs,
        )
    key = privacy_amplify(raw_b, cfg, pa_seed, out_len)
    return PeerRound(
        index, False, None, key, out_len, consumed,
        q_obs=est.q_obs, s_obs=est.s_obs,
    )


def _expect_channel(io, n: int, l: int) -> ChannelTranscript:
    t = wire.decode_channel_payload(io.expect(wire.TYPE_CHANNEL))
    if t.params.n != n or t.params.l != l:
        raise ProtocolError(
            f"channel parameters ({t.params.n}, {t.params.l}) do not match "
            f"the configured ({n}, {l})"
        )
    return t


def _round_dos(io, cfg, randomness, index, role) -> PeerRound:
    # both ends derive the identical decoy round; each transmits its share
    res = dos_round(cfg, randomness, index)
    for pos, (ftype, payload) in enumerate(res.frames):
        if _SENDER[pos] == role:
            io.send(ftype, payload)
        else:
            if io.expect(ftype) != payload:
                raise ProtocolError("decoy round diverged between the two ends")
    return PeerRound(index, True, "dos", None, 0, 0, dos=True)


def run_peer_session(
    role: str,
    sock: socket.socket,
    cfg: RoundConfig,
    pool: KeyPool,
    randomness: SessionRandomness,
    rounds: int,
    rate_model: RateModel | None = None,
    timeout: float = 30.0,
) -> PeerSummary:
    """Drive one end of a session; returns this end's private summary.

    Transport and framing failures surface in PeerSummary.error rather
    than as exceptions, so the caller can still write the partial log.
    """
    if role not in (ROLE_ALICE, ROLE_BOB):
        raise ParameterError(f"unknown role {role!r}")
    model = rate_model if rate_model is not None else RateModel()
    io = _Stream(sock, timeout)
    device = HonestDevicePair(cfg.q_noise)
    run = _round_alice if role == ROLE_ALICE else _round_bob
    results: list[PeerRound] = []
    summary = PeerSummary(role, cfg, results, io.frames)
    need = cfg.pool_bits_per_round()
    exhausted = False
    try:
        for index in range(rounds):
            exhausted = exhausted or pool.remaining_bits < need
            if exhausted:
                results.append(_round_dos(io, cfg, randomness, index, role))
            else:
                results.append(run(io, cfg, pool, randomness, device, index, model))
        digest = hashlib.blake2s(
            b"".join(wire.encode_frame(t, p) for t, p in io.frames),
            digest_size=DIGEST_BYTES,
        ).digest()
        if role == ROLE_ALICE:
            io.send(wire.TYPE_LOG, digest)
            summary.digest_ok = io.expect(wire.TYPE_LOG) == digest
        else:
            summary.digest_ok = io.expect(wire.TYPE_LOG) == digest
            io.send(wire.TYPE_LOG, digest)
    except (FrameError, ProtocolError, ParameterError, OSError) as exc:
        summary.error = f"session error: {exc}"
    return summary


# ---------------------------------------------------------------------------
# transport helpers


def parse_address(text: str) -> tuple[str, int]:
    """HOST:PORT, :PORT, or PORT; the empty host means loopback."""
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ParameterError(f"bad address {text!r}, expected HOST:PORT")
    return host or "127.0.0.1", int(port)


def listen_once(address: str, announce=None) -> socket.socket:
    """Accept a single connection; announce(host, port) hears the bound
    address (useful with port 0)."""
    host, port = parse_address(address)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        if announce is not None:
            announce(*server.getsockname()[:2])
        conn, _ = server.accept()
        return conn
    finally:
        server.close()


def connect_retry(address: str, timeout: float = 10.0) -> socket.socket:
    """Connect, retrying while the peer's listener comes up."""
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection((host, port), timeout=timeout)
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
