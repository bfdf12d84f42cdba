"""Hash family: frozen fixtures, exact oracles, uniformity battery."""

import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipckit.errors import ParameterError
from ipckit.gf2n import standard_field
from ipckit.hashfam import (
    HashParams,
    collision_probability_exhaustive,
    distance_from_uniform_exhaustive,
    hash_bits,
    product_table,
)

from test_gf2n import oracle_mul


def params(n, l):
    return HashParams(standard_field(n), l)


# ---------------------------------------------------------------------------
# hash_bits


def test_hash_fixture_n4():
    # product of 0x3 and 0x5 in GF(2^4) is 0xF; low two bits
    assert hash_bits(0x3, 0x5, params(4, 2)) == 0b11


def test_hash_annihilators():
    p = params(8, 3)
    assert hash_bits(0, 0xAB, p) == 0
    assert hash_bits(0xAB, 0, p) == 0


@pytest.mark.parametrize("n", [4, 8, 64])
@settings(max_examples=150, deadline=None)
@given(st.data())
def test_hash_symmetry(n, data):
    k = data.draw(st.integers(0, (1 << n) - 1))
    r = data.draw(st.integers(0, (1 << n) - 1))
    l = data.draw(st.integers(1, n - 1))
    p = params(n, l)
    assert hash_bits(k, r, p) == hash_bits(r, k, p)


def test_hash_matches_oracle():
    rnd = random.Random(0x5EED)
    fld = standard_field(8)
    p = params(8, 5)
    for _ in range(500):
        k, r = rnd.getrandbits(8), rnd.getrandbits(8)
        assert hash_bits(k, r, p) == oracle_mul(k, r, fld.modulus) & 0b11111


def test_out_len_validation():
    with pytest.raises(ParameterError):
        params(4, 4)
    with pytest.raises(ParameterError):
        params(4, 0)
    params(4, 3)  # ok


# ---------------------------------------------------------------------------
# collision probability


def test_collision_probability_distinct_pairs_n4():
    p = params(4, 2)
    rnd = random.Random(1)
    for _ in range(30):
        x1, x2 = rnd.randrange(16), rnd.randrange(16)
        if x1 == x2:
            continue
        assert collision_probability_exhaustive(x1, x2, p) == Fraction(1, 4)


def test_collision_probability_equal_inputs():
    assert collision_probability_exhaustive(7, 7, params(4, 2)) == 1


def test_collision_probability_n5_l4():
    p = params(5, 4)
    assert collision_probability_exhaustive(1, 2, p) == Fraction(1, 16)


def test_collision_probability_rejects_large_field():
    with pytest.raises(ParameterError):
        collision_probability_exhaustive(1, 2, params(64, 3))


def test_collision_probability_range_check():
    with pytest.raises(ParameterError):
        collision_probability_exhaustive(16, 2, params(4, 2))


# ---------------------------------------------------------------------------
# product table


def test_product_table_matches_gf_mul():
    fld = standard_field(8)
    table = product_table(fld)
    rnd = random.Random(99)
    for _ in range(400):
        k, r = rnd.getrandbits(8), rnd.getrandbits(8)
        assert int(table[k, r]) == oracle_mul(k, r, fld.modulus)
    assert table.shape == (256, 256)


def test_product_table_row_subset():
    fld = standard_field(10)
    rows = np.array([3, 77, 1000], dtype=np.int64)
    sub = product_table(fld, rows)
    full = product_table(fld)
    assert (sub == full[rows]).all()


# ---------------------------------------------------------------------------
# distance from uniform


def tv_bound_holds(value: Fraction, n: int, l: int) -> bool:
    # value <= sqrt(2^(2l-n))  <=>  value^2 <= 2^(2l-n), exactly in rationals
    return value * value <= Fraction(1 << (2 * l), 1 << n)


def test_distance_constant_message_pinned():
    # the r=0 seed leaks a constant message; every other seed is perfect
    v = distance_from_uniform_exhaustive(lambda k: 0, params(8, 2))
    assert v == Fraction(3, 1024)
    v2 = distance_from_uniform_exhaustive(lambda k: 0b11, params(8, 2))
    assert v2 == Fraction(3, 1024)


def test_distance_regression_low_bit_message():
    # frozen by enumeration: m(k) = low bit of k at n=8, l=1
    v = distance_from_uniform_exhaustive(lambda k: k & 1, params(8, 1))
    assert v == Fraction(1, 512)


def test_distance_rejects_bad_message_values():
    with pytest.raises(ParameterError):
        distance_from_uniform_exhaustive(lambda k: 4, params(8, 2))


def _catalogue(n, l, rnd):
    """constant, identity-truncation, d^truncation, and random tables."""
    lmask = (1 << l) - 1
    d = rnd.getrandbits(l)
    fns = [lambda k: 0, lambda k: k & lmask, lambda k, d=d: (k & lmask) ^ d]
    for _ in range(50):
        tbl = [rnd.getrandbits(l) for _ in range(1 << n)]
        fns.append(lambda k, tbl=tbl: tbl[k])
    return fns


@pytest.mark.parametrize("n", [8, 10, 12])
def test_uniformity_battery(n):
    rnd = random.Random(0xBA77E47 + n)
    for l in (1, 2, 3):
        p = params(n, l)
        for fn in _catalogue(n, l, rnd):
            v = distance_from_uniform_exhaustive(fn, p)
            assert tv_bound_holds(v, n, l), (n, l, v)


def test_distance_chunked_path_agrees_with_full():
    # force the chunked row walk and compare against the full-table path
    import ipckit.hashfam as hf

    p = params(8, 2)
    full = distance_from_uniform_exhaustive(lambda k: k & 3, p)
    old = hf._FULL_TABLE_LIMIT
    hf._FULL_TABLE_LIMIT = 4
    try:
        chunked = distance_from_uniform_exhaustive(lambda k: k & 3, p)
    finally:
        hf._FULL_TABLE_LIMIT = old
    assert chunked == full
