"""2-universal hashing by truncated field multiplication.

The family maps an n-bit key k under an n-bit seed r to the low ℓ bits of
the GF(2^n) product k*r.  Collisions between distinct keys happen on
exactly a 2^-ℓ fraction of seeds, and the family is symmetric in k and r.

This module also houses the exhaustive verification oracles: exact
collision probability and exact total-variation distance from uniform of
(hash(k,r) XOR m(k), r) for an adversarially chosen message function m.
Both return exact rationals; no floating point is involved in any
distance computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ParameterError
from .gf2n import FieldSpec, gf_mul, truncate

#: largest field degree the exhaustive oracles will enumerate
ENUMERATION_LIMIT = 20

# above this degree the full 2^n x 2^n product table would not fit in
# memory, so the enumeration walks the key space in row chunks instead
_FULL_TABLE_LIMIT = 12


@dataclass(frozen=True)
class HashParams:
    """Field plus output length ℓ, with 1 <= ℓ < n."""

    field: FieldSpec
    out_len: int

    def __post_init__(self):
        n = self.field.degree
        if not 1 <= self.out_len < n:
            raise ParameterError(
                f"output length must satisfy 1 <= l < {n}, got {self.out_len}"
            )


def hash_bits(k: int, r: int, params: HashParams) -> int:
    """truncate(k * r, ℓ).  Symmetric in k and r."""
    n = params.field.degree
    return truncate(gf_mul(k, r, params.field), params.out_len, n)


def _check_enumerable(n: int) -> None:
    if n > ENUMERATION_LIMIT:
        raise ParameterError(
            f"exhaustive enumeration infeasible for degree {n} (limit {ENUMERATION_LIMIT})"
        )


def collision_probability_exhaustive(x1: int, x2: int, params: HashParams) -> Fraction:
    """#{r : hash(x1,r) = hash(x2,r)} / 2^n, exactly.

    x1 = x2 trivially collides on every seed and returns 1.
    """
    field = params.field
    n = field.degree
    _check_enumerable(n)
    for name, x in (("x1", x1), ("x2", x2)):
        if not field.contains(x):
            raise ParameterError(f"{name} out of range for GF(2^{n})")
    if x1 == x2:
        return Fraction(1)
    mask = (1 << params.out_len) - 1
    hits = 0
    for r in range(1 << n):
        if (gf_mul(x1, r, field) ^ gf_mul(x2, r, field)) & mask == 0:
            hits += 1
    return Fraction(hits, 1 << n)


def product_table(field: FieldSpec, rows: np.ndarray | None = None) -> np.ndarray:
    """gf_mul(k, r) for k in `rows` (default: all) and every r, as a 2-D array.

    Builds the table from the linearity of multiplication: row k is the XOR
    of the doubling rows picked out by the bits of k.  Used by the
    enumeration oracles and by the exhaustive acceptance checks.
    """
    n = field.degree
    _check_enumerable(n)
    dtype = np.uint16 if n <= 16 else np.uint32
    size = 1 << n
    # doubles[i][r] = gf_mul(2^i, r)
    doubles = np.empty((n, size), dtype=dtype)
    row = np.arange(size, dtype=dtype)
    mask = dtype(size - 1)
    modulus_tail = dtype(field.modulus & (size - 1))
    for i in range(n):
        doubles[i] = row
        carry = row >> (n - 1)
        row = ((row << 1) & mask) ^ (carry * modulus_tail)
    if rows is None:
        rows = np.arange(size, dtype=np.int64)
    out = np.zeros((len(rows), size), dtype=dtype)
    for i in range(n):
        hit = (rows >> i) & 1 == 1
        if hit.any():
            out[hit] ^= doubles[i]
    return out


@lru_cache(maxsize=4)
def _full_table(field: FieldSpec) -> np.ndarray:
    """Cached read-only full product table for small fields."""
    table = product_table(field)
    table.setflags(write=False)
    return table


def distance_from_uniform_exhaustive(
    message_fn: Callable[[int], int], params: HashParams
) -> Fraction:
    """Exact TV distance of (hash(k,r) XOR message_fn(k), r) from uniform.

    k and r are uniform and independent; the result is
    (1/2) * sum_{c,r} |P(c,r) - 2^-(n+ℓ)| as an exact rational.  This is the
    ciphertext-uniformity quantity for a channel whose message was chosen,
    possibly adversarially, as a function of the key.
    """
    field = params.field
    n = field.degree
    l = params.out_len
    _check_enumerable(n)
    size = 1 << n
    lmask = (1 << l) - 1
    # index (c << n) | r needs n + l bits; stay in int32 when that fits
    idx_dtype = np.int32 if n + l < 31 else np.int64
    mvec = np.empty(size, dtype=idx_dtype)
    for k in range(size):
        m = message_fn(k)
        if not 0 <= m <= lmask:
            raise ParameterError(f"message_fn({k}) = {m!r} is not an {l}-bit value")
        mvec[k] = m

    counts = np.zeros((1 << l) * size, dtype=np.int64)
    r_index = np.arange(size, dtype=idx_dtype)
    if n <= _FULL_TABLE_LIMIT:
        chunk, table = size, _full_table(field)
    else:
        chunk, table = max(16, 1 << (2 * _FULL_TABLE_LIMIT - n)), None
    for start in range(0, size, chunk):
        rows = np.arange(start, min(start + chunk, size), dtype=np.int64)
        prods = table[start : start + chunk] if table is not None else product_table(field, rows)
        c = (prods.astype(idx_dtype) & lmask) ^ mvec[rows][:, None]
        counts += np.bincount(
            ((c << n) | r_index).ravel(), minlength=len(counts)
        )

    expected = 1 << (n - l)  # per-cell count under perfect uniformity
    total = int(np.abs(counts - expected).sum())
    return Fraction(total, 1 << (2 * n + 1))
