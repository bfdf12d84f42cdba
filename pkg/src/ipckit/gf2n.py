"""Carry-less polynomial arithmetic and binary fields GF(2^n).

Representation conventions, used everywhere in this package:

* A polynomial over GF(2) is a Python int.  Bit i of the int is the
  coefficient of x^i, so the low-order bit is the constant term.  Python
  ints are arbitrary precision, which covers every field size we use
  (degree 2 up to 8192).
* An element of GF(2^n) is an int in [0, 2^n).  Addition is XOR.
* A field modulus is an irreducible polynomial of degree exactly n with
  leading and constant coefficients 1.
* Hex serialization of an n-bit element is lowercase, most significant
  nibble first, zero-padded to ceil(n/4) digits.

Multiplication is the shift-and-reduce ("Russian peasant") loop: the
accumulator picks up `a` for every set bit of `b`, and `a` is doubled and
reduced by the modulus one degree at a time.  No lookup tables, so the
same code path serves GF(2^2) and GF(2^8192).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParameterError, UnsupportedDegreeError

# ---------------------------------------------------------------------------
# plain GF(2)[x] helpers (module-private, operate on bare ints)

# _SPREAD[b] interleaves zeros between the bits of byte b: squaring a GF(2)
# polynomial just spaces its coefficients out to even positions.
_SPREAD = [0] * 256
for _b in range(256):
    _v = 0
    for _i in range(8):
        if _b >> _i & 1:
            _v |= 1 << (2 * _i)
    _SPREAD[_b] = _v


def poly_degree(p: int) -> int:
    """Degree of the polynomial, -1 for the zero polynomial."""
    return p.bit_length() - 1


def _poly_square(v: int) -> int:
    out = 0
    shift = 0
    while v:
        out |= _SPREAD[v & 0xFF] << shift
        v >>= 8
        shift += 16
    return out


def _poly_reduce(v: int, modulus: int) -> int:
    """v mod modulus in GF(2)[x], by folding the high part onto the tail.

    Uses x^n == modulus - x^n (mod modulus): every pass XORs the bits above
    degree n, shifted by each tail exponent, back into the low part.  The
    degree strictly decreases per pass, and for the sparse moduli in the
    built-in table a pass is a handful of big-int XORs.
    """
    n = modulus.bit_length() - 1
    tail = modulus ^ (1 << n)
    mask = (1 << n) - 1
    while v >> n:
        high = v >> n
        v &= mask
        t = tail
        while t:
            low = t & -t
            v ^= high << (low.bit_length() - 1)
            t ^= low
    return v


def _poly_mulmod(a: int, b: int, modulus: int) -> int:
    prod = 0
    while b:
        if b & 1:
            prod ^= a
        a <<= 1
        b >>= 1
    return _poly_reduce(prod, modulus)


def _poly_gcd(a: int, b: int) -> int:
    """Binary (x-adic) polynomial gcd.

    Avoids long division entirely: with both operands kept odd, XOR cancels
    the constant terms and at least one factor of x gets stripped per step,
    so the cost stays near-linear even for dense degree-8192 operands (as
    arise inside the irreducibility test).
    """
    if a == 0:
        return b
    if b == 0:
        return a
    ka = (a & -a).bit_length() - 1
    kb = (b & -b).bit_length() - 1
    a >>= ka
    b >>= kb
    while a != b:
        if poly_degree(a) < poly_degree(b):
            a, b = b, a
        a ^= b
        a >>= (a & -a).bit_length() - 1
    return a << min(ka, kb)


def _prime_factors(n: int) -> list[int]:
    out = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def is_irreducible(p: int) -> bool:
    """Deterministic irreducibility test for a GF(2) polynomial.

    Rabin's criterion: p of degree n is irreducible iff x^(2^n) == x mod p
    and gcd(x^(2^(n/q)) - x, p) = 1 for every prime q dividing n.  The
    squaring chain uses the zero-interleaving table, so the test stays fast
    even at degree 8192.

    Raises ParameterError for polynomials of degree < 1 (constants have no
    meaningful answer).
    """
    n = poly_degree(p)
    if n < 1:
        raise ParameterError(f"irreducibility needs degree >= 1, got degree {n}")
    if n == 1:
        return True
    if p & 1 == 0:
        return False  # divisible by x
    checkpoints = {n // q for q in _prime_factors(n)}
    w = 2  # the polynomial x
    for i in range(1, n + 1):
        w = _poly_reduce(_poly_square(w), p)
        if i in checkpoints and _poly_gcd(w ^ 2, p) != 1:
            return False
    return w == 2


# ---------------------------------------------------------------------------
# concrete fields

# Built-in moduli: degree -> exponents of the tail (everything except x^n).
# Each entry is verified irreducible by the test suite.  Degrees 2, 4 and 8
# are the conventional choices (8 is the AES polynomial 0x11b); the rest are
# the lexicographically smallest irreducible tail at that degree, found by
# scripts/gen_field_table.py.
_STANDARD_TAILS: dict[int, tuple[int, ...]] = {
    2: (1, 0),
    3: (1, 0),
    4: (1, 0),
    5: (2, 0),
    6: (1, 0),
    7: (1, 0),
    8: (4, 3, 1, 0),
    9: (1, 0),
    10: (3, 0),
    11: (2, 0),
    12: (3, 0),
    13: (4, 3, 1, 0),
    14: (5, 0),
    15: (1, 0),
    16: (5, 3, 1, 0),
    20: (3, 0),
    24: (4, 3, 1, 0),
    32: (7, 3, 2, 0),
    40: (5, 4, 3, 0),
    48: (5, 3, 2, 0),
    64: (4, 3, 1, 0),
    96: (10, 9, 6, 0),
    128: (7, 2, 1, 0),
    192: (7, 2, 1, 0),
    256: (10, 5, 2, 0),
    276: (63, 0),
    384: (12, 3, 2, 0),
    512: (8, 5, 2, 0),
    768: (19, 17, 4, 0),
    1024: (19, 6, 1, 0),
    1536: (21, 6, 2, 0),
    2048: (19, 14, 13, 0),
    3072: (11, 10, 5, 0),
    4096: (27, 15, 1, 0),
    6144: (26, 7, 1, 0),
    8192: (9, 5, 2, 0),
}

SUPPORTED_DEGREES: tuple[int, ...] = tuple(sorted(_STANDARD_TAILS))


def _tail_to_modulus(degree: int, tail: tuple[int, ...]) -> int:
    m = 1 << degree
    for e in tail:
        m |= 1 << e
    return m


@dataclass(frozen=True)
class FieldSpec:
    """A concrete binary field: degree n plus the reducing modulus.

    The constructor checks the structural constraints (degree >= 2, modulus
    of degree exactly n with constant term 1).  It does not re-run the
    irreducibility test, which would be wasteful for the big built-in
    fields; use `FieldSpec.checked` when the modulus comes from outside.
    """

    degree: int
    modulus: int
    _mask: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 2:
            raise ParameterError(f"field degree must be >= 2, got {self.degree}")
        if poly_degree(self.modulus) != self.degree:
            raise ParameterError(
                f"modulus degree {poly_degree(self.modulus)} != field degree {self.degree}"
            )
        if self.modulus & 1 == 0:
            raise ParameterError("modulus needs constant coefficient 1")
        object.__setattr__(self, "_mask", (1 << self.degree) - 1)

    @classmethod
    def checked(cls, degree: int, modulus: int) -> "FieldSpec":
        """Construct and verify irreducibility (for caller-supplied moduli)."""
        spec = cls(degree, modulus)
        if not is_irreducible(modulus):
            raise ParameterError(f"modulus {modulus:#x} is reducible")
        return spec

    def contains(self, x: int) -> bool:
        return 0 <= x <= self._mask


def standard_field(n: int) -> FieldSpec:
    """The built-in field of degree n, or UnsupportedDegreeError."""
    tail = _STANDARD_TAILS.get(n)
    if tail is None:
        raise UnsupportedDegreeError(
            f"no built-in modulus for degree {n}; supported: {SUPPORTED_DEGREES}"
        )
    return FieldSpec(n, _tail_to_modulus(n, tail))


def supported_degree_at_least(n: int) -> int:
    """Smallest built-in degree >= n (for snapping channel sizes upward)."""
    for d in SUPPORTED_DEGREES:
        if d >= n:
            return d
    raise UnsupportedDegreeError(f"no built-in field of degree >= {n}")


# ---------------------------------------------------------------------------
# field operations

def _check_element(x: int, spec: FieldSpec, name: str) -> None:
    if not isinstance(x, int) or x < 0 or x > spec._mask:
        raise ParameterError(
            f"{name} out of range for GF(2^{spec.degree}): {x!r}"
        )


def gf_add(a: int, b: int, spec: FieldSpec) -> int:
    """Field addition (XOR).  Provided for symmetry with gf_mul."""
    _check_element(a, spec, "a")
    _check_element(b, spec, "b")
    return a ^ b


def gf_mul(a: int, b: int, spec: FieldSpec) -> int:
    """Field multiplication a*b mod the field modulus.

    Interleaved shift-and-reduce: the working copy of `a` never grows past
    n+1 bits, so intermediate values stay small regardless of n.
    """
    _check_element(a, spec, "a")
    _check_element(b, spec, "b")
    n = spec.degree
    modulus = spec.modulus
    acc = 0
    while b:
        if b & 1:
            acc ^= a
        b >>= 1
        a <<= 1
        if a >> n:
            a ^= modulus
    return acc


def gf_pow(a: int, e: int, spec: FieldSpec) -> int:
    """a**e by square and multiply (e >= 0)."""
    _check_element(a, spec, "a")
    if e < 0:
        raise ParameterError("exponent must be non-negative")
    result = 1
    base = a
    while e:
        if e & 1:
            result = gf_mul(result, base, spec)
        base = gf_mul(base, base, spec)
        e >>= 1
    return result


def gf_inv(a: int, spec: FieldSpec) -> int:
    """Multiplicative inverse via a^(2^n - 2); a must be nonzero."""
    _check_element(a, spec, "a")
    if a == 0:
        raise ParameterError("zero has no inverse")
    return gf_pow(a, (1 << spec.degree) - 2, spec)


def truncate(x: int, l: int, n: int) -> int:
    """Keep the low l bits of an n-bit value (1 <= l <= n)."""
    if not 1 <= l <= n:
        raise ParameterError(f"truncation length {l} not in [1, {n}]")
    if x < 0 or x >> n:
        raise ParameterError(f"value does not fit in {n} bits")
    return x & ((1 << l) - 1)


# ---------------------------------------------------------------------------
# serialization

def element_to_hex(x: int, n: int) -> str:
    """Lowercase hex, most significant nibble first, ceil(n/4) digits."""
    if x < 0 or x >> n:
        raise ParameterError(f"value does not fit in {n} bits")
    return format(x, "0{}x".format((n + 3) // 4))


def element_from_hex(s: str, n: int) -> int:
    digits = (n + 3) // 4
    t = s.strip().lower()
    if len(t) != digits:
        raise ParameterError(f"expected {digits} hex digits for {n} bits, got {len(t)}")
    try:
        x = int(t, 16)
    except ValueError:
        raise ParameterError(f"not a hex string: {s!r}") from None
    if x >> n:
        raise ParameterError(f"value does not fit in {n} bits")
    return x
