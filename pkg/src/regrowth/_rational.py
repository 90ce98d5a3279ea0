"""Small exact-arithmetic helpers shared by the exact-law code paths."""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Union

Number = Union[int, float, Fraction]


def as_number(value, exact: bool = True) -> Number:
    """Parse ``"p/q"`` strings, ints, Fractions or floats.

    With ``exact=True`` strings and rationals become :class:`Fraction`;
    floats are kept as floats (they are never silently rationalised).
    """
    if isinstance(value, str):
        text = value.strip()
        try:
            frac = Fraction(text)
        except ValueError as exc:
            raise ValueError(f"not a rational number: {value!r}") from exc
        return frac if exact else float(frac)
    if isinstance(value, bool):
        raise ValueError("booleans are not numbers here")
    if isinstance(value, Rational):
        return Fraction(value) if exact else float(value)
    if isinstance(value, float):
        return value
    raise ValueError(f"unsupported numeric value {value!r}")


def to_text(value: Number) -> str:
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def rising(x: Number, k: int) -> Number:
    """Rising product x (x+1) ... (x+k-1); equals Gamma(x+k)/Gamma(x)."""
    out: Number = 1 if not isinstance(x, float) else 1.0
    for i in range(k):
        out = out * (x + i)
    return out


def gamma_ratio(j: int, alpha: Number) -> Number:
    """Gamma(j - alpha) / Gamma(1 - alpha) as the product prod_{i<j} (i - alpha)."""
    out: Number = 1 if not isinstance(alpha, float) else 1.0
    for i in range(1, j):
        out = out * (i - alpha)
    return out


def iroot_floor(a: int, k: int) -> int:
    """Largest integer r with r**k <= a (a >= 0, k >= 1)."""
    if a < 0 or k < 1:
        raise ValueError("iroot_floor needs a >= 0 and k >= 1")
    if a < 2 or k == 1:
        return a
    r = 1 << ((a.bit_length() + k - 1) // k)
    while True:
        s = ((k - 1) * r + a // r ** (k - 1)) // k
        if s >= r:
            break
        r = s
    while r ** k > a:
        r -= 1
    while (r + 1) ** k <= a:
        r += 1
    return r


def power_bounds(base: int, expo: Fraction, scale: int) -> tuple[int, int]:
    """Integer bounds (lo, hi) with lo <= scale * base**expo <= hi.

    ``base`` is a positive integer and ``expo`` a rational exponent; the
    bounds come from integer k-th roots so they are rigorous.
    """
    if base <= 0:
        raise ValueError("base must be positive")
    p, q = expo.numerator, expo.denominator
    if p >= 0:
        # scale * base**(p/q) = (scale**q * base**p) ** (1/q)
        target = scale ** q * base ** p
        lo = iroot_floor(target, q)
        hi = lo if lo ** q == target else lo + 1
        return lo, hi
    # negative exponent: scale / base**(|p|/q) = (scale**q / base**|p|) ** (1/q)
    num = scale ** q
    den = base ** (-p)
    lo_t = num // den
    lo = iroot_floor(lo_t, q)
    hi_t = -(-num // den)
    hi = iroot_floor(hi_t, q)
    if hi ** q < hi_t:
        hi += 1
    return lo, hi
