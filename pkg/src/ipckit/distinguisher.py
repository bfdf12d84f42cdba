"""Distinguishing-advantage measurement for the encrypted channel.

The question answered here: how well can an eavesdropper who sees the
public transcript tell the real channel from an ideal one that outputs
uniform noise, when the message was chosen by an insider as an arbitrary
function of the key?  For the real channel the answer is bounded by
sqrt(2^(2l-n)); for the naive one-time-pad (c = a XOR truncate(k), no
fresh seed) a message a = d XOR k makes c reveal d outright.

`exact_advantage` enumerates every (key, seed) pair and reports the exact
total-variation distance between the joint view (a, c, r) and the product
of the message marginal with uniform (c, r) — the best possible
distinguishing advantage, as an exact rational.  `advantage_bound_sweep`
runs the whole attack catalogue against every feasible (n, l) and checks
the bound by exact rational comparison; a single pass per (n, attack)
feeds every l below the widest one, because each attack's messages at
width l are the low l bits of its messages at the widest width.

`transcript_battery` is the statistical side: structural frame-shape
comparison across protocol rounds plus frequency tests on encrypted
payloads, used to check that aborted rounds are indistinguishable from
successful ones.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .errors import ParameterError
from .gf2n import gf_mul, standard_field, truncate
from .hashfam import product_table

try:  # pragma: no cover - exercised indirectly
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

#: enumeration guard: the joint histogram has 2^(2l+n) cells
ENUMERATION_LIMIT = 20
_HIST_BITS_LIMIT = 28

INSIDER_PROOF = "insider-proof"
NAIVE_OTP = "naive-otp"


@dataclass(frozen=True)
class AttackSpec:
    """An insider strategy: message as a function of key and private data.

    message_fn(k, d, l) must return an l-bit value, be total and
    deterministic, and be width-nested: its l-bit output is the low l bits
    of its output at any larger width.  All catalogue attacks satisfy this;
    it is what lets the sweep share one enumeration across widths.
    """

    name: str
    message_fn: Callable[[int, int, int], int]
    variant: str = INSIDER_PROOF

    def predicted_leak(self, d: int, l: int) -> int:
        """The ciphertext value an eavesdropper bets on (heuristic)."""
        return self.message_fn(0, d, l)


def _random_message_fn(index: int, seed: int) -> Callable[[int, int, int], int]:
    tag = f"attack:{seed}:{index}".encode()

    def fn(k: int, d: int, l: int) -> int:
        h = hashlib.blake2s(tag + k.to_bytes(16, "big") + d.to_bytes(16, "big"))
        return int.from_bytes(h.digest()[:8], "big") & ((1 << l) - 1)

    return fn


def attack_catalogue(seed: int = 0, random_count: int = 50) -> list[AttackSpec]:
    """constant; k-truncation; d XOR k-truncation; seeded random functions."""
    attacks = [
        AttackSpec("constant", lambda k, d, l: d & ((1 << l) - 1)),
        AttackSpec("k-truncation", lambda k, d, l: k & ((1 << l) - 1)),
        AttackSpec("d-xor-k-truncation", lambda k, d, l: (k ^ d) & ((1 << l) - 1)),
    ]
    for i in range(random_count):
        attacks.append(AttackSpec(f"random-{i:02d}", _random_message_fn(i, seed)))
    return attacks


def naive_otp_attack() -> AttackSpec:
    """The classic break: send d XOR k over the seedless variant."""
    return AttackSpec(
        "d-xor-k-truncation", lambda k, d, l: (k ^ d) & ((1 << l) - 1), NAIVE_OTP
    )


def message_table(attack: AttackSpec, n: int, l: int, d: int) -> np.ndarray:
    table = np.empty(1 << n, dtype=np.int64)
    lmask = (1 << l) - 1
    fn = attack.message_fn
    for k in range(1 << n):
        m = fn(k, d, l)
        if not 0 <= m <= lmask:
            raise ParameterError(f"{attack.name}: message_fn({k}) not {l}-bit")
        table[k] = m
    return table


# ---------------------------------------------------------------------------
# joint histogram over (message class a, hash value z, seed r)

if _HAVE_NUMBA:

    @njit(cache=True)
    def _hist_kernel(doubles, mvec, lmax, nbits, out):  # pragma: no cover
        size = doubles.shape[1]
        lmask = (1 << lmax) - 1
        row = np.zeros(size, dtype=np.uint16)
        prev = 0
        for j in range(size):
            g = j ^ (j >> 1)
            diff = g ^ prev
            if diff:
                b = 0
                while diff & 1 == 0:
                    diff >>= 1
                    b += 1
                drow = doubles[b]
                for r in range(size):
                    row[r] ^= drow[r]
            prev = g
            base = np.int64(mvec[g]) << (lmax + nbits)
            for r in range(size):
                z = row[r] & lmask
                out[base + (np.int64(z) << nbits) + r] += 1


def _doubling_rows(n: int) -> np.ndarray:
    """doubles[i][r] = gf_mul(2^i, r) as uint16, for the walk kernel."""
    field = standard_field(n)
    size = 1 << n
    doubles = np.empty((n, size), dtype=np.uint16)
    row = np.arange(size, dtype=np.uint16)
    mask = np.uint16(size - 1)
    tail = np.uint16(field.modulus & (size - 1))
    for i in range(n):
        doubles[i] = row
        carry = row >> (n - 1)
        row = ((row << 1) & mask) ^ (carry * tail)
    return doubles


def _joint_hist(n: int, lmax: int, mvec: np.ndarray, out: np.ndarray) -> None:
    """Fill out[a, z, r] = #{k : m(k) = a, truncate(k*r, lmax) = z}."""
    out[:] = 0
    if _HAVE_NUMBA:
        _hist_kernel(_doubling_rows(n), mvec, lmax, n, out.reshape(-1))
        return
    # numpy fallback: chunked rows + bincount
    field = standard_field(n)
    size = 1 << n
    lmask = (1 << lmax) - 1
    flat = out.reshape(-1)
    r_idx = np.arange(size, dtype=np.int64)
    chunk = max(8, 1 << max(0, 24 - n))
    for start in range(0, size, chunk):
        rows = np.arange(start, min(start + chunk, size), dtype=np.int64)
        prods = product_table(field, rows).astype(np.int64)
        idx = (mvec[rows][:, None] << (lmax + n)) | ((prods & lmask) << n) | r_idx
        flat += np.bincount(idx.ravel(), minlength=flat.size)


def _tv_int_sum(hist: np.ndarray, class_sizes: np.ndarray, l: int) -> int:
    """sum over (a, z, r) of |hist * 2^l - |K_a||, in exact integers."""
    total = 0
    for a in range(hist.shape[0]):
        dev = hist[a].astype(np.int64) * (1 << l) - int(class_sizes[a])
        total += int(np.abs(dev).sum())
    return total


def _fold_top_bit(hist: np.ndarray) -> np.ndarray:
    """Merge message and hash classes that differ only in their top bit."""
    half = hist.shape[0] // 2
    h = hist[:half] + hist[half:]
    return h[:, :half] + h[:, half:]


def _bound_holds(tv: Fraction, n: int, l: int) -> bool:
    return tv * tv <= Fraction(1 << (2 * l), 1 << n)


def exact_advantage(attack: AttackSpec, n: int, l: int, d: int) -> Fraction:
    """Exact TV distance between Eve's real view and the ideal simulation.

    Insider-proof variant: view is (a, c, r) under uniform independent
    (k, r) with a = message_fn(k, d, l) and c = a XOR truncate(k*r, l);
    compared against P(a) x uniform(c, r).  Naive variant: view is (a, c)
    with c = a XOR truncate(k, l), compared against P(a) x uniform(c).
    """
    if not 1 <= l < n:
        raise ParameterError(f"need 1 <= l < n, got l={l}, n={n}")
    if n > ENUMERATION_LIMIT:
        raise ParameterError(f"enumeration infeasible for n={n} (limit {ENUMERATION_LIMIT})")
    if d < 0:
        raise ParameterError("private data must be a nonnegative bit string")
    mvec = message_table(attack, n, l, d)
    class_sizes = np.bincount(mvec, minlength=1 << l)

    if attack.variant == NAIVE_OTP:
        k_idx = np.arange(1 << n, dtype=np.int64)
        cells = (mvec << l) | (mvec ^ (k_idx & ((1 << l) - 1)))
        counts = np.bincount(cells, minlength=1 << (2 * l)).reshape(1 << l, 1 << l)
        total = 0
        for a in range(1 << l):
            dev = counts[a].astype(np.int64) * (1 << l) - int(class_sizes[a])
            total += int(np.abs(dev).sum())
        return Fraction(total, 1 << (n + l + 1))

    if 2 * l + n > _HIST_BITS_LIMIT:
        raise ParameterError(
            f"joint histogram needs 2^{2 * l + n} cells; limit 2^{_HIST_BITS_LIMIT}"
        )
    hist = np.zeros((1 << l, 1 << l, 1 << n), dtype=np.int32)
    _joint_hist(n, l, mvec, hist)
    total = _tv_int_sum(hist, class_sizes, l)
    return Fraction(total, 1 << (2 * n + l + 1))


class SweepRow(NamedTuple):
    attack: str
    n: int
    l: int
    advantage: Fraction
    bound_log2: float
    ok: bool


def advantage_bound_sweep(
    max_n: int = 14,
    seed: int = 0,
    random_count: int = 50,
    progress: Callable[[str], None] | None = None,
) -> list[SweepRow]:
    """Check advantage <= sqrt(2^(2l-n)) for the whole catalogue.

    Covers every n in 3..max_n and every l with 2l < n.  One histogram
    pass per (n, attack) at the widest l, then folds downward, so the
    full sweep is a single enumeration of each (k, r) space per attack.
    """
    if max_n > 16:
        raise ParameterError("sweep caps at n=16 to keep counts in int32")
    attacks = attack_catalogue(seed, random_count)
    rng = np.random.default_rng(seed)
    rows: list[SweepRow] = []
    for n in range(3, max_n + 1):
        lmax = (n - 1) // 2
        if lmax < 1:
            continue
        d = int(rng.integers(0, 1 << n))
        hist = np.zeros((1 << lmax, 1 << lmax, 1 << n), dtype=np.int32)
        for attack in attacks:
            if progress is not None:
                progress(f"n={n} attack={attack.name}")
            mvec = message_table(attack, n, lmax, d)
            _joint_hist(n, lmax, mvec, hist)
            h = hist
            sizes = np.bincount(mvec, minlength=1 << lmax).astype(np.int64)
            for l in range(lmax, 0, -1):
                if l < lmax:
                    h = _fold_top_bit(h)
                    half = sizes.size // 2
                    sizes = sizes[:half] + sizes[half:]
                tv = Fraction(_tv_int_sum(h, sizes, l), 1 << (2 * n + l + 1))
                rows.append(
                    SweepRow(attack.name, n, l, tv, (2 * l - n) / 2, _bound_holds(tv, n, l))
                )
    return rows


# ---------------------------------------------------------------------------
# Monte-Carlo estimate and the naive-OTP demonstration


class EmpiricalResult(NamedTuple):
    estimate: float  # hit_rate - baseline: a LOWER bound on the advantage
    ci_low: float
    ci_high: float
    hit_rate: float
    baseline: float


def empirical_advantage(
    attack: AttackSpec, n: int, l: int, d: int, trials: int, rng, z: float = 1.96
) -> EmpiricalResult:
    """Estimate of the fixed-prediction distinguisher's edge over chance.

    The distinguisher bets c == attack.predicted_leak(d, l); its hit rate
    on the real channel minus the ideal baseline 2^-l lower-bounds the
    distinguishing advantage.  Wilson score interval at confidence z.
    """
    if trials < 1000:
        raise ParameterError(f"need >= 1000 trials, got {trials}")
    if not 1 <= l < n:
        raise ParameterError(f"need 1 <= l < n, got l={l}, n={n}")
    field = standard_field(n) if attack.variant == INSIDER_PROOF else None
    lmask = (1 << l) - 1
    pred = attack.predicted_leak(d, l)
    hits = 0
    for _ in range(trials):
        k = rng.getrandbits(n)
        a = attack.message_fn(k, d, l)
        if field is not None:
            r = rng.getrandbits(n)
            c = a ^ truncate(gf_mul(k, r, field), l, n)
        else:
            c = a ^ (k & lmask)
        hits += c == pred
    p = hits / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    # Wilson endpoints are exactly 0/1 at the empirical boundary; keep them
    # there rather than an ulp inside, so boundary-true advantages stay in
    lo = 0.0 if hits == 0 else center - half
    hi = 1.0 if hits == trials else center + half
    baseline = 2.0**-l
    return EmpiricalResult(p - baseline, lo - baseline, hi - baseline, p, baseline)


class NaiveDemo(NamedTuple):
    planted_d: int
    recovered_d: int
    advantage: Fraction
    ciphertexts: tuple


def naive_otp_demo(l: int, d: int, rng, samples: int = 8) -> NaiveDemo:
    """Run the seedless-channel break end to end.

    The insider sends a = d XOR truncate(k, l); on the naive channel every
    ciphertext then equals d, so Eve reads d off the wire.  Returns the
    exact advantage (enumerated, not assumed) alongside the recovery.
    """
    if l < 1:
        raise ParameterError("message length must be >= 1")
    if not 0 <= d < (1 << l):
        raise ParameterError(f"planted data must fit {l} bits")
    n = max(l + 1, 8)
    lmask = (1 << l) - 1
    cs = []
    for _ in range(samples):
        k = rng.getrandbits(n)
        a = (d ^ k) & lmask  # the insider's choice
        cs.append(a ^ (k & lmask))  # the naive channel's output
    counts = {}
    for c in cs:
        counts[c] = counts.get(c, 0) + 1
    recovered = max(counts, key=counts.get)
    adv = exact_advantage(naive_otp_attack(), n, l, d)
    return NaiveDemo(d, recovered, adv, tuple(cs))


# ---------------------------------------------------------------------------
# transcript battery


class BatteryReport(NamedTuple):
    rounds: int
    structural_ok: bool
    structural_detail: str
    chi2_p: float
    twosample_p: float | None
    shapes: tuple

    @property
    def passed(self) -> bool:
        ok = self.structural_ok and self.chi2_p > 0.01
        if self.twosample_p is not None:
            ok = ok and self.twosample_p > 0.01
        return ok


def parse_transcript(text: str) -> list[tuple[int, bytes]]:
    """Parse `<type-hex> <len> <payload-hex>` lines into (type, payload)."""
    frames = []
    for ln_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ParameterError(f"transcript line {ln_no}: expected 2-3 fields")
        try:
            ftype = int(parts[0], 16)
            length = int(parts[1])
            payload = bytes.fromhex(parts[2]) if len(parts) == 3 else b""
        except ValueError:
            raise ParameterError(f"transcript line {ln_no}: bad field encoding") from None
        if len(payload) != length:
            raise ParameterError(
                f"transcript line {ln_no}: length {length} != payload {len(payload)}"
            )
        frames.append((ftype, payload))
    return frames


def _split_rounds(frames: list[tuple[int, bytes]], round_start_type: int) -> list[list]:
    rounds, current = [], None
    for frame in frames:
        if frame[0] == round_start_type:
            if current is not None:
                rounds.append(current)
            current = [frame]
        elif current is not None:
            current.append(frame)
    if current is not None:
        rounds.append(current)
    return rounds


def transcript_battery(
    text: str,
    abort_rounds: set[int] | None = None,
    round_start_type: int = 0x03,
    encrypted_type: int = 0x01,
    session_types: tuple = (0x04,),
    encrypted_header_bytes: int = 8,
) -> BatteryReport:
    """Shape and payload-distribution checks over a session transcript.

    Structural check (exact): all rounds must have identical frame type and
    length sequences.  Frequency check: chi-square of byte values pooled
    over encrypted frames; the first encrypted_header_bytes of each such
    frame carry public size fields, not ciphertext, and are left out.
    When abort_rounds is given (tester's knowledge, not Eve's), a
    two-sample test compares abort vs success payload bytes.  Frames of
    session_types (session-level bookkeeping such as the closing digest
    exchange) are not part of any round.
    """
    from scipy import stats

    frames = [f for f in parse_transcript(text) if f[0] not in session_types]
    rounds = _split_rounds(frames, round_start_type)
    if len(rounds) < 2:
        raise ParameterError("need at least 2 rounds for the battery")

    shapes = [tuple((t, len(p)) for t, p in rnd) for rnd in rounds]
    structural_ok = all(s == shapes[0] for s in shapes)
    detail = "all round shapes identical" if structural_ok else next(
        f"round {i} shape differs from round 0" for i, s in enumerate(shapes) if s != shapes[0]
    )

    def enc_bytes(round_frames):
        return b"".join(
            p[encrypted_header_bytes:] for t, p in round_frames if t == encrypted_type
        )

    pooled = np.frombuffer(b"".join(enc_bytes(r) for r in rounds), dtype=np.uint8)
    if pooled.size < 1024:
        raise ParameterError("not enough encrypted payload bytes for the battery")
    observed = np.bincount(pooled, minlength=256)
    chi2_p = float(stats.chisquare(observed).pvalue)

    twosample_p = None
    if abort_rounds is not None:
        ab = np.frombuffer(
            b"".join(enc_bytes(r) for i, r in enumerate(rounds) if i in abort_rounds),
            dtype=np.uint8,
        )
        ok = np.frombuffer(
            b"".join(enc_bytes(r) for i, r in enumerate(rounds) if i not in abort_rounds),
            dtype=np.uint8,
        )
        if ab.size == 0 or ok.size == 0:
            raise ParameterError("abort_rounds must split the session nontrivially")
        twosample_p = float(stats.ks_2samp(ab, ok).pvalue)

    return BatteryReport(len(rounds), structural_ok, detail, chi2_p, twosample_p,
                         tuple(shapes[0]))
