"""Forward-mode lexicographic directional-derivative arithmetic.

An ``LD`` scalar carries a value together with a row of k directional
derivatives.  Smooth operations propagate the row by the exact chain
rule; min/max/abs select between the candidate rows by the sign of the
first nonzero element of the augmented difference row, so the result is
always the lexicographically smaller (or larger) branch.

Branch selection is exact on the stored floats -- no epsilon fuzzing.
"""

from __future__ import annotations

import math


def fsign(seq) -> int:
    """Sign of the first nonzero element of ``seq``; 0 if all zero or empty."""
    for v in seq:
        if v > 0.0:
            return 1
        if v < 0.0:
            return -1
    return 0


class DirectionMismatchError(ValueError):
    """Operands carry different direction counts."""


def _check(a: "LD", b: "LD"):
    if len(a.d) != len(b.d):
        raise DirectionMismatchError(
            f"direction count mismatch: {len(a.d)} vs {len(b.d)}"
        )


class LD:
    """A value paired with a row of k directional derivatives."""

    __slots__ = ("v", "d")

    def __init__(self, v, d=()):
        self.v = float(v)
        self.d = tuple(float(x) for x in d)

    @classmethod
    def const(cls, v, k):
        """Lift a plain value to k zero directions."""
        return cls(v, (0.0,) * k)

    @property
    def k(self):
        return len(self.d)

    def __repr__(self):
        return f"LD({self.v!r}, {self.d!r})"

    def __eq__(self, other):
        if isinstance(other, LD):
            return self.v == other.v and self.d == other.d
        return NotImplemented

    def __hash__(self):
        return hash((self.v, self.d))

    # -- smooth arithmetic --------------------------------------------------

    def __add__(self, o):
        if isinstance(o, LD):
            _check(self, o)
            return LD(self.v + o.v, tuple(x + y for x, y in zip(self.d, o.d)))
        return LD(self.v + o, self.d)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, LD):
            _check(self, o)
            return LD(self.v - o.v, tuple(x - y for x, y in zip(self.d, o.d)))
        return LD(self.v - o, self.d)

    def __rsub__(self, o):
        return LD(o - self.v, tuple(-x for x in self.d))

    def __neg__(self):
        return LD(-self.v, tuple(-x for x in self.d))

    def __pos__(self):
        return self

    def __mul__(self, o):
        if isinstance(o, LD):
            _check(self, o)
            return LD(
                self.v * o.v,
                tuple(self.v * y + o.v * x for x, y in zip(self.d, o.d)),
            )
        return LD(self.v * o, tuple(o * x for x in self.d))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, LD):
            _check(self, o)
            if o.v == 0.0:
                raise ZeroDivisionError("division by zero value")
            vv = o.v * o.v
            return LD(
                self.v / o.v,
                tuple((x * o.v - self.v * y) / vv for x, y in zip(self.d, o.d)),
            )
        if o == 0.0:
            raise ZeroDivisionError("division by zero value")
        return LD(self.v / o, tuple(x / o for x in self.d))

    def __rtruediv__(self, o):
        if self.v == 0.0:
            raise ZeroDivisionError("division by zero value")
        vv = self.v * self.v
        return LD(o / self.v, tuple(-o * x / vv for x in self.d))

    def __pow__(self, p):
        if isinstance(p, LD):
            # general exponent: a**b = exp(b*log(a))
            return ld_exp(p * ld_log(self))
        p = float(p)
        if p == 0.0:
            return LD(1.0, (0.0,) * len(self.d))
        val = self.v ** p
        if self.v == 0.0 and p > 1.0:
            coeff = 0.0
        else:
            coeff = p * self.v ** (p - 1.0)
        return LD(val, tuple(coeff * x for x in self.d))

    def __rpow__(self, base):
        return ld_exp(self * math.log(base))


# -- smooth univariate functions -------------------------------------------


def ld_exp(a: LD) -> LD:
    e = math.exp(a.v)
    return LD(e, tuple(e * x for x in a.d))


def ld_log(a: LD) -> LD:
    if a.v <= 0.0:
        raise ValueError(f"log of non-positive value {a.v}")
    return LD(math.log(a.v), tuple(x / a.v for x in a.d))


def ld_sqrt(a: LD) -> LD:
    if a.v < 0.0:
        raise ValueError(f"sqrt of negative value {a.v}")
    s = math.sqrt(a.v)
    if s == 0.0 and any(x != 0.0 for x in a.d):
        raise ZeroDivisionError("sqrt derivative at zero")
    coeff = 0.0 if s == 0.0 else 0.5 / s
    return LD(s, tuple(coeff * x for x in a.d))


def ld_sin(a: LD) -> LD:
    c = math.cos(a.v)
    return LD(math.sin(a.v), tuple(c * x for x in a.d))


def ld_cos(a: LD) -> LD:
    s = -math.sin(a.v)
    return LD(math.cos(a.v), tuple(s * x for x in a.d))


# -- nonsmooth primitives ---------------------------------------------------


def _promote(a, b):
    if not isinstance(a, LD):
        a = LD.const(a, b.k)
    elif not isinstance(b, LD):
        b = LD.const(b, a.k)
    return a, b


def ld_min(a, b, choice=None):
    """Pointwise min with lexicographic row selection.

    ``choice`` forces the branch (0 selects a's row, 1 selects b's);
    used by the frozen-branch algebraic solves, never by model evaluation
    proper.
    """
    if not isinstance(a, LD) and not isinstance(b, LD):
        return a if a <= b else b
    a, b = _promote(a, b)
    _check(a, b)
    if choice is None:
        s = fsign((a.v - b.v,) + tuple(x - y for x, y in zip(a.d, b.d)))
        choice = 0 if s <= 0 else 1
    row = a.d if choice == 0 else b.d
    return LD(min(a.v, b.v), row)


def ld_max(a, b, choice=None):
    """Pointwise max; exactly the negation dual of :func:`ld_min`."""
    if not isinstance(a, LD) and not isinstance(b, LD):
        return a if a >= b else b
    a, b = _promote(a, b)
    return -ld_min(-a, -b, choice=choice)


def ld_abs(a, choice=None):
    """|a| with row selected lexicographically between a.d and -a.d.

    ``choice=0`` keeps the +a branch, ``choice=1`` the -a branch.
    """
    if not isinstance(a, LD):
        return abs(a)
    return ld_max(a, -a, choice=choice)


def min_branch(a, b) -> int:
    """Branch that ld_min would select (0: first operand, 1: second)."""
    a, b = _promote(a, b)
    _check(a, b)
    s = fsign((a.v - b.v,) + tuple(x - y for x, y in zip(a.d, b.d)))
    return 0 if s <= 0 else 1
