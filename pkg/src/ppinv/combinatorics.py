"""Exact combinatorics for Poisson moment identities.

Everything here works in Python integers and :class:`fractions.Fraction`;
floating point never enters.  Brute-force set-partition enumerators are
provided alongside the closed forms so every quantity has an independent
oracle.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Iterator, Sequence, Union

Number = Union[int, Fraction]


class Polynomial:
    """Polynomial in one variable with exact rational coefficients.

    ``coeffs[k]`` is the coefficient of ``lambda**k``.  Trailing zeros are
    stripped so that equality is structural.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Sequence[Number] = ()):
        cs = [Fraction(c) for c in coeffs]
        while cs and cs[-1] == 0:
            cs.pop()
        self.coeffs: tuple[Fraction, ...] = tuple(cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, lam: Number) -> Fraction:
        lam = Fraction(lam)
        acc = Fraction(0)
        for c in reversed(self.coeffs):
            acc = acc * lam + c
        return acc

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Polynomial):
            return self.coeffs == other.coeffs
        if isinstance(other, (int, Fraction)):
            return self.coeffs == Polynomial([other]).coeffs
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.coeffs)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        n = max(len(self.coeffs), len(other.coeffs))
        a = self.coeffs + (Fraction(0),) * (n - len(self.coeffs))
        b = other.coeffs + (Fraction(0),) * (n - len(other.coeffs))
        return Polynomial([x + y for x, y in zip(a, b)])

    def scale(self, c: Number) -> "Polynomial":
        return Polynomial([c * x for x in self.coeffs])

    def shift(self, k: int = 1) -> "Polynomial":
        """Multiply by ``lambda**k``."""
        if not self.coeffs:
            return self
        return Polynomial((Fraction(0),) * k + self.coeffs)

    def coefficient(self, k: int) -> Fraction:
        return self.coeffs[k] if 0 <= k < len(self.coeffs) else Fraction(0)

    def __repr__(self) -> str:
        if not self.coeffs:
            return "Polynomial(0)"
        terms = []
        for k, c in enumerate(self.coeffs):
            if c == 0:
                continue
            terms.append(f"{c}" if k == 0 else f"{c}*lam^{k}")
        return "Polynomial(" + " + ".join(terms) + ")"


# ---------------------------------------------------------------------------
# Touchard polynomials
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def touchard(n: int) -> Polynomial:
    """Moment ``E[Z**n]`` of a Poisson(lambda) variable, as a polynomial."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return Polynomial([1])
    m = n - 1
    acc = Polynomial()
    for k in range(m + 1):
        acc = acc + touchard(k).scale(comb(m, k))
    return acc.shift(1)


@lru_cache(maxsize=None)
def centered_touchard(n: int) -> Polynomial:
    """Central moment ``E[(Z - lambda)**n]`` of a Poisson(lambda) variable."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return Polynomial([1])
    m = n - 1
    acc = Polynomial()
    for k in range(m):  # k <= m - 1; empty when m == 0
        acc = acc + centered_touchard(k).scale(comb(m, k))
    return acc.shift(1)


# ---------------------------------------------------------------------------
# Stirling numbers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def stirling_second(n: int, k: int) -> int:
    """Number of partitions of an ``n``-set into ``k`` non-empty blocks."""
    if n < 0 or k < 0:
        raise ValueError("arguments must be non-negative")
    if n == 0 and k == 0:
        return 1
    if n == 0 or k == 0 or k > n:
        return 0
    return k * stirling_second(n - 1, k) + stirling_second(n - 1, k - 1)


@lru_cache(maxsize=None)
def stirling_no_singleton(n: int, a: int) -> int:
    """Number of partitions of an ``n``-set into ``a`` blocks of size >= 2.

    Computed from the associated-Stirling recurrence
    ``S2(n, a) = a S2(n-1, a) + (n-1) S2(n-2, a-1)``; the binomial-dual form
    is kept separate in :func:`stirling_no_singleton_dual` for cross-checks.
    """
    if n < 0 or a < 0:
        raise ValueError("arguments must be non-negative")
    if n == 0:
        return 1 if a == 0 else 0
    if a == 0 or 2 * a > n:
        return 0
    rest = (n - 1) * stirling_no_singleton(n - 2, a - 1) if n >= 2 else 0
    return a * stirling_no_singleton(n - 1, a) + rest


def stirling_no_singleton_dual(n: int, a: int) -> int:
    """``sum_c (-1)^c C(n, c) S(n - c, a - c)``."""
    return sum(
        (-1) ** c * comb(n, c) * stirling_second(n - c, a - c)
        for c in range(0, min(a, n) + 1)
    )


def stirling_second_dual(m: int, n: int) -> int:
    """``sum_k C(m, k) S2(m - k, n - k)``, which equals ``S(m, n)``."""
    return sum(
        comb(m, k) * stirling_no_singleton(m - k, n - k)
        for k in range(0, min(m, n) + 1)
    )


def compensated_poisson_moment(n: int) -> Polynomial:
    """``sum_a lambda**a S2(n, a)``: central Poisson moments via S2."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return Polynomial([stirling_no_singleton(n, a) for a in range(n + 1)])


def specialized_moment(n: int) -> Polynomial:
    """Central Poisson moment written with ordinary Stirling numbers.

    ``sum_a lambda**a sum_c (-1)^c C(n, c) S(n - c, a - c)``; this is what the
    general moment identity collapses to for a deterministic indicator.
    """
    return Polynomial([stirling_no_singleton_dual(n, a) for a in range(n + 1)])


# ---------------------------------------------------------------------------
# Set partitions (brute force)
# ---------------------------------------------------------------------------


def set_partitions(n: int) -> Iterator[list[list[int]]]:
    """All set partitions of ``{0, ..., n-1}`` via restricted growth strings."""
    if n == 0:
        yield []
        return

    def rgs(prefix: list[int], maxval: int) -> Iterator[list[int]]:
        if len(prefix) == n:
            yield prefix
            return
        for v in range(maxval + 2):
            yield from rgs(prefix + [v], max(maxval, v))

    for code in rgs([0], 0):
        blocks: list[list[int]] = [[] for _ in range(max(code) + 1)]
        for i, b in enumerate(code):
            blocks[b].append(i)
        yield blocks


def bell_bruteforce(n: int) -> int:
    return sum(1 for _ in set_partitions(n))


def stirling_second_bruteforce(n: int, k: int) -> int:
    return sum(1 for p in set_partitions(n) if len(p) == k)


def stirling_no_singleton_bruteforce(n: int, a: int) -> int:
    return sum(
        1 for p in set_partitions(n) if len(p) == a and all(len(b) >= 2 for b in p)
    )


def partition_count_oracle(n_total: int, a: int, c: int) -> int:
    """Count pairs (P, S): P a partition of an ``n_total``-set into ``a + c``
    blocks and S a choice of ``c`` of its blocks, all of them singletons."""
    if n_total < 0 or a < 0 or c < 0:
        raise ValueError("arguments must be non-negative")
    if a + c > n_total:
        return 0
    total = 0
    for p in set_partitions(n_total):
        if len(p) != a + c:
            continue
        singles = sum(1 for b in p if len(b) == 1)
        total += comb(singles, c)
    return total


# ---------------------------------------------------------------------------
# Coefficients of the general moment identity
# ---------------------------------------------------------------------------


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Ordered tuples of ``parts`` non-negative integers summing to ``total``."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for x in cut:
            out.append(x - prev - 1)
            prev = x
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def _chains(a: int, c: int) -> Iterator[tuple[int, ...]]:
    """Index chains ``0 = r_{c+1} < r_c < ... < r_1 < r_0 = a + c + 1``.

    Returned as ``r`` with ``r[q]`` holding ``r_q`` for ``q = 0..c+1``.
    """
    for inner in itertools.combinations(range(1, a + c + 1), c):
        # inner is ascending: r_c, ..., r_1
        yield (a + c + 1,) + tuple(reversed(inner)) + (0,)


def _partial(L: Sequence[int], p: int) -> int:
    return sum(L[:p])


def _check_args(L: Sequence[int], b: int) -> int:
    if any(x < 0 for x in L):
        raise ValueError("composition parts must be non-negative")
    c = b - len(L)
    if c < 0:
        raise ValueError(f"b={b} is smaller than the composition length {len(L)}")
    return c


def _chain_sum(L: Sequence[int], b: int, level) -> int:
    """Sum over chains ``0 = r_{c+1} < ... < r_0 = a + c + 1``.

    For each chain, positions ``p = 1..a`` are cut into ``c + 1`` consecutive
    runs; run ``q`` covers ``r_{q+1} + q - c + 1 .. r_q + q - c - 1``.  The
    binomial at position ``p`` carries the shift ``level(q, c)``.
    """
    L = tuple(L)
    c = _check_args(L, b)
    a = len(L)
    total = 0
    for r in _chains(a, c):
        term = 1
        for q in range(c + 1):
            s = level(q, c)
            for p in range(r[q + 1] + q - c + 1, r[q] + q - c):
                term *= comb(_partial(L, p) + p + s - 1, _partial(L, p - 1) + p + s - 1)
        total += term
    return total


def coeff_C(L: Sequence[int], b: int) -> int:
    """Coefficient ``C_{L, b}`` of the general moment identity.

    ``C_{L, a+c}`` counts set partitions into ``a + c`` blocks listed by
    increasing maximum, where the ``a`` free blocks have sizes ``1 + l_p``
    and ``c`` further blocks are designated singletons.  A chain fixes how
    the singletons interleave with the free blocks; the free block ``p``
    then sees ``c - q`` singletons ahead of it in run ``q``.
    """
    return _chain_sum(L, b, lambda q, c: c - q)


def coeff_C_as_printed(L: Sequence[int], b: int) -> int:
    """Chain sum with the shift ``q`` taken literally from the printed display.

    Kept for reference only.  It agrees with :func:`coeff_C` when ``c = 0``
    and in aggregate for four points or fewer, but its sum over compositions
    departs from the partition count from ``(n_total, a, c) = (5, 2, 1)`` on
    (36 versus 35).
    """
    return _chain_sum(L, b, lambda q, c: q)


def coeff_C_shifted_form(L: Sequence[int], b: int) -> int:
    """Same coefficient with run bounds written as ``r + 1 - (c - q)``.

    Iterates the runs from the first position upwards, tracking the number
    of singletons already placed, as an independent evaluation path.
    """
    L = tuple(L)
    c = _check_args(L, b)
    a = len(L)
    total = 0
    for r in _chains(a, c):
        term = 1
        for q in range(c, -1, -1):
            lo = r[q + 1] + 1 - (c - q)
            hi = r[q] - 1 - (c - q)
            ahead = c - q
            for p in range(lo, hi + 1):
                s_p = _partial(L, p)
                s_pm = _partial(L, p - 1)
                term *= comb(s_p + p + ahead - 1, s_pm + p + ahead - 1)
        total += term
    return total


def coeff_C_closed(L: Sequence[int]) -> int:
    """Closed form of ``C_{L, len(L)}`` (no designated singletons)."""
    out = 1
    for p in range(1, len(L) + 1):
        out *= comb(_partial(L, p) + p - 1, _partial(L, p - 1) + p - 1)
    return out


def coeff_C_signed(l0: int, n: int, L: Sequence[int], b: int) -> int:
    """Signed coefficient ``(-1)^(b-a) C(n, l0) C_{L, b}``.

    Both index forms of the chain sum are evaluated and must agree.
    """
    if l0 < 0 or n < 0:
        raise ValueError("l0 and n must be non-negative")
    if l0 > n:
        raise ValueError(f"l0={l0} exceeds n={n}")
    c = _check_args(tuple(L), b)
    direct = (-1) ** c * comb(n, l0) * coeff_C_shifted_form(L, b)
    via_c = (-1) ** (b - len(L)) * comb(n, l0) * coeff_C(L, b)
    if direct != via_c:  # pragma: no cover - would signal a transcription bug
        raise AssertionError(f"coefficient forms disagree: {direct} != {via_c}")
    return via_c


def aggregated_coeff(n_total: int, a: int, c: int) -> int:
    """``sum_L C_{L, a+c}`` over compositions of ``n_total - a - c`` into ``a``."""
    rest = n_total - a - c
    if rest < 0:
        return 0
    return sum(coeff_C(L, a + c) for L in compositions(rest, a))


def identity_expansion(n: int) -> dict[tuple[int, int], int]:
    """Signed coefficient per ``[a, b]`` line of the degree-``n`` expansion.

    The value is ``(-1)^(b-a) * sum_L C_{L, b}`` with the sum over
    compositions of ``n - b`` into ``a`` parts; zero lines are omitted.
    """
    out = {}
    for a in range(n + 1):
        for b in range(a, n + 1):
            s = sum(coeff_C(L, b) for L in compositions(n - b, a))
            if s:
                out[(a, b)] = (-1) ** (b - a) * s
    return out


def format_exact(x: Number) -> str:
    """Exact decimal string when the expansion terminates, else ``p/q``."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    d = x.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{x.numerator}/{x.denominator}"
    digits = max(twos, fives)
    scaled = x * 10**digits
    assert scaled.denominator == 1
    sign = "-" if scaled < 0 else ""
    s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    return f"{sign}{s[:-digits]}.{s[-digits:]}"


# ---------------------------------------------------------------------------
# Batch verification and tables
# ---------------------------------------------------------------------------


def verify_combinatorics(n_touchard: int = 12, n_coeff: int = 8, n_special: int = 6, n_bell: int = 8) -> dict:
    """Exact cross-checks of the counting identities; each entry is a bool."""
    lams = (Fraction(1, 2), Fraction(1), Fraction(2))
    checks = {
        "centered_touchard_vs_no_singleton": all(
            centered_touchard(n) == compensated_poisson_moment(n) for n in range(n_touchard + 1)
        ),
        "no_singleton_dual": all(
            stirling_no_singleton(n, a) == stirling_no_singleton_dual(n, a)
            for n in range(n_touchard + 1)
            for a in range(n + 1)
        ),
        "stirling_second_dual": all(
            stirling_second(m, n) == stirling_second_dual(m, n) for m in range(n_touchard + 1) for n in range(m + 1)
        ),
        "touchard_bell": all(touchard(n)(1) == bell_bruteforce(n) for n in range(n_bell + 1)),
        "coefficient_partition_count": all(
            aggregated_coeff(nt, a, c) == partition_count_oracle(nt, a, c)
            for nt in range(n_coeff + 1)
            for a in range(nt + 1)
            for c in range(nt - a + 1)
        ),
        "specialization": all(
            specialized_moment(n)(lam) == centered_touchard(n)(lam) for n in range(n_special + 1) for lam in lams
        ),
    }
    return checks


def expansion_table(n: int) -> list[tuple[int, int, int, int]]:
    """Rows ``(n, a, b, signed coefficient)`` of the degree-``n`` expansion."""
    return [(n, a, b, coef) for (a, b), coef in sorted(identity_expansion(n).items())]
