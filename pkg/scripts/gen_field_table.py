"""Regenerate the built-in modulus table in ipckit.gf2n.

For each supported degree, find the irreducible polynomial
x^n + x^c + x^b + x^a + 1 (or trinomial x^n + x^a + 1) with the smallest
tail, searching trinomials first and then pentanomials in ascending
exponent order.  Candidates are screened for factors of degree <= 12
before the full Rabin test, which makes the big degrees tractable.

Run from the repo root:  python scripts/gen_field_table.py
"""

import sys
import time
from itertools import combinations

from ipckit.gf2n import _poly_gcd, _poly_reduce, _poly_square, is_irreducible

DEGREES = sorted(
    list(range(2, 17))
    + [20, 24, 32, 40, 48, 64, 96, 128, 192, 256, 276, 384, 512, 768,
       1024, 1536, 2048, 3072, 4096, 6144, 8192]
)


def has_small_factor(p: int, up_to: int = 12) -> bool:
    """True if p has an irreducible factor of degree <= up_to.

    A degree-d polynomial divides x^(2^i) - x iff d | i, so checking gcds
    only for i in the window (up_to/2, up_to] still covers every d <= up_to.
    """
    w = 2
    for i in range(1, up_to + 1):
        w = _poly_reduce(_poly_square(w), p)
        if i > up_to // 2 and _poly_gcd(w ^ 2, p) != 1:
            return True
    return False


def find_tail(n: int):
    # The small-factor screen is only sound when n exceeds the window
    # (otherwise p itself divides x^(2^i) - x for n | i and gets rejected).
    screen = has_small_factor if n > 12 else (lambda p: False)
    # Trinomials x^n + x^a + 1.  Swan: none are irreducible when 8 | n.
    if n % 8 != 0:
        for a in range(1, n):
            p = (1 << n) | (1 << a) | 1
            if not screen(p) and is_irreducible(p):
                return (a, 0)
    # Pentanomials x^n + x^c + x^b + x^a + 1, smallest tail first.
    for c in range(3, n):
        for b in range(2, c):
            for a in range(1, b):
                p = (1 << n) | (1 << c) | (1 << b) | (1 << a) | 1
                if not screen(p) and is_irreducible(p):
                    return (c, b, a, 0)
    raise RuntimeError(f"no sparse irreducible found for degree {n}")


def main():
    print("_STANDARD_TAILS = {")
    for n in DEGREES:
        t0 = time.time()
        tail = find_tail(n)
        print(f"    {n}: {tail},   # {time.time() - t0:.1f}s", flush=True)
    print("}")


if __name__ == "__main__":
    sys.exit(main())
