"""Conservative interval and box arithmetic with outward rounding.

All arithmetic is *sound*: the returned interval contains every real result
obtainable from points of the operand intervals.  Directed rounding is done
in pure binary64 with error-free transformations (TwoSum / Dekker product),
so exactly representable results stay exact ([1,2]+[3,4] = [4,6]) and
inexact ones are widened by exactly one ulp in the offending direction.
CPython cannot portably flip the FPU rounding mode without poisoning libm,
so this is the conservative-widening route; soundness does not depend on
platform rounding support.

Two layers are provided:

* raw tuple functions (``i_add``, ``i_mul``, ...) operating on ``(lo, hi)``
  float pairs -- used by the integrator hot path;
* ``Interval`` / ``Box`` frozen value types with operators and set
  predicates -- the public API.

Intervals are closed; boundary contact counts as intersection (conservative
for obstacle-avoidance tests).  The canonical empty interval is
``(inf, -inf)``.
"""

from __future__ import annotations

import math
import re
import sys as _sys
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import (
    DegenerateBox,
    DimensionMismatch,
    DivisionByZeroInterval,
    DomainError,
)

_INF = math.inf
_MAXF = _sys.float_info.max
_SPLIT = 134217729.0            # 2**27 + 1, Dekker splitter
_BIG = 1e280                    # magnitude guard: fall back to 1-ulp widening
_TINY = 1e-280

# ---------------------------------------------------------------------------
# directed-rounding scalar primitives
# ---------------------------------------------------------------------------


def next_up(x: float) -> float:
    return math.nextafter(x, _INF)


def next_down(x: float) -> float:
    return math.nextafter(x, -_INF)


def add_down(a: float, b: float) -> float:
    s = a + b
    if math.isinf(s):
        return s if s < 0.0 else _MAXF
    ap = s - b
    bp = s - ap
    err = (a - ap) + (b - bp)
    if err < 0.0:
        return next_down(s)
    return s


def add_up(a: float, b: float) -> float:
    s = a + b
    if math.isinf(s):
        return s if s > 0.0 else -_MAXF
    ap = s - b
    bp = s - ap
    err = (a - ap) + (b - bp)
    if err > 0.0:
        return next_up(s)
    return s


def sub_down(a: float, b: float) -> float:
    return add_down(a, -b)


def sub_up(a: float, b: float) -> float:
    return add_up(a, -b)


def _dekker_err(a: float, b: float, p: float) -> float:
    """Exact error of a*b - p for nearest-rounded p (no over/underflow)."""
    ca = _SPLIT * a
    ahi = ca - (ca - a)
    alo = a - ahi
    cb = _SPLIT * b
    bhi = cb - (cb - b)
    blo = b - bhi
    return ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo


_nextafter = math.nextafter


def mul_down(a: float, b: float) -> float:
    p = a * b
    if -_BIG < p < _BIG:
        if p == 0.0:
            if a == 0.0 or b == 0.0:
                return 0.0
            return _nextafter(0.0, -_INF)
        if not (-_TINY < p < _TINY) and -_BIG < a < _BIG and -_BIG < b < _BIG:
            ca = _SPLIT * a
            ahi = ca - (ca - a)
            alo = a - ahi
            cb = _SPLIT * b
            bhi = cb - (cb - b)
            blo = b - bhi
            if ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo < 0.0:
                return _nextafter(p, -_INF)
            return p
        return _nextafter(p, -_INF)
    if math.isinf(p):
        return p if p < 0.0 else _MAXF
    return _nextafter(p, -_INF)


def mul_up(a: float, b: float) -> float:
    p = a * b
    if -_BIG < p < _BIG:
        if p == 0.0:
            if a == 0.0 or b == 0.0:
                return 0.0
            return _nextafter(0.0, _INF)
        if not (-_TINY < p < _TINY) and -_BIG < a < _BIG and -_BIG < b < _BIG:
            ca = _SPLIT * a
            ahi = ca - (ca - a)
            alo = a - ahi
            cb = _SPLIT * b
            bhi = cb - (cb - b)
            blo = b - bhi
            if ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo > 0.0:
                return _nextafter(p, _INF)
            return p
        return _nextafter(p, _INF)
    if math.isinf(p):
        return p if p > 0.0 else -_MAXF
    return _nextafter(p, _INF)


def _div_guarded(a: float, b: float, q: float) -> bool:
    return (
        abs(a) > _BIG
        or abs(b) > _BIG
        or abs(q) > _BIG
        or abs(a) < _TINY
        or abs(q) < _TINY
    )


def div_down(a: float, b: float) -> float:
    q = a / b
    if math.isinf(q):
        return q if q < 0.0 else _MAXF
    if a == 0.0:
        return 0.0
    if _div_guarded(a, b, q):
        return next_down(q)
    p = q * b
    err = _dekker_err(q, b, p)
    res = (a - p) - err          # sign of a - q*b, exact (Sterbenz + tiny terms)
    if res == 0.0:
        return q
    if (res < 0.0) == (b > 0.0):  # exact quotient below q
        return next_down(q)
    return q


def div_up(a: float, b: float) -> float:
    q = a / b
    if math.isinf(q):
        return q if q > 0.0 else -_MAXF
    if a == 0.0:
        return 0.0
    if _div_guarded(a, b, q):
        return next_up(q)
    p = q * b
    err = _dekker_err(q, b, p)
    res = (a - p) - err
    if res == 0.0:
        return q
    if (res > 0.0) == (b > 0.0):  # exact quotient above q
        return next_up(q)
    return q


def sqrt_down(x: float) -> float:
    if x == 0.0:
        return 0.0
    r = math.sqrt(x)
    if abs(r) < _TINY or abs(r) > _BIG:
        return max(0.0, next_down(r))
    p = r * r
    err = _dekker_err(r, r, p)
    if p > x or (p == x and err > 0.0):
        return next_down(r)
    return r


def sqrt_up(x: float) -> float:
    if x == 0.0:
        return 0.0
    r = math.sqrt(x)
    if abs(r) < _TINY or abs(r) > _BIG:
        return next_up(r)
    p = r * r
    err = _dekker_err(r, r, p)
    if p < x or (p == x and err < 0.0):
        return next_up(r)
    return r


# libm transcendentals are faithful but not correctly rounded; widen 2 ulps.

def _lib_down(y: float) -> float:
    return next_down(next_down(y))


def _lib_up(y: float) -> float:
    return next_up(next_up(y))


# ---------------------------------------------------------------------------
# raw interval operations on (lo, hi) pairs
# ---------------------------------------------------------------------------

EMPTY = (_INF, -_INF)


def i_is_empty(lo: float, hi: float) -> bool:
    return lo > hi


def i_add(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    return add_down(alo, blo), add_up(ahi, bhi)


def i_sub(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    return add_down(alo, -bhi), add_up(ahi, -blo)


def i_neg(lo: float, hi: float) -> tuple[float, float]:
    return -hi, -lo


def i_mul(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    # Moore's nine sign cases; at most two directed products per bound.
    if alo >= 0.0:
        if blo >= 0.0:
            return mul_down(alo, blo), mul_up(ahi, bhi)
        if bhi <= 0.0:
            return mul_down(ahi, blo), mul_up(alo, bhi)
        return mul_down(ahi, blo), mul_up(ahi, bhi)
    if ahi <= 0.0:
        if blo >= 0.0:
            return mul_down(alo, bhi), mul_up(ahi, blo)
        if bhi <= 0.0:
            return mul_down(ahi, bhi), mul_up(alo, blo)
        return mul_down(alo, bhi), mul_up(alo, blo)
    if blo >= 0.0:
        return mul_down(alo, bhi), mul_up(ahi, bhi)
    if bhi <= 0.0:
        return mul_down(ahi, blo), mul_up(alo, blo)
    return (
        min(mul_down(alo, bhi), mul_down(ahi, blo)),
        max(mul_up(alo, blo), mul_up(ahi, bhi)),
    )


def i_div(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    if blo <= 0.0 <= bhi:
        raise DivisionByZeroInterval(
            f"divisor [{blo}, {bhi}] contains zero"
        )
    if blo > 0.0:
        lo = div_down(alo, bhi if alo >= 0.0 else blo)
        hi = div_up(ahi, blo if ahi >= 0.0 else bhi)
    else:
        lo = div_down(ahi, bhi if ahi >= 0.0 else blo)
        hi = div_up(alo, bhi if alo <= 0.0 else blo)
    return lo, hi


def _pow_mag_down(x: float, m: int) -> float:
    """Lower bound of x**m for x >= 0, m >= 1."""
    r = 1.0
    base = x
    e = m
    first = True
    while e:
        if e & 1:
            r = base if first else mul_down(r, base)
            first = False
        e >>= 1
        if e:
            base = mul_down(base, base)
    return r


def _pow_mag_up(x: float, m: int) -> float:
    r = 1.0
    base = x
    e = m
    first = True
    while e:
        if e & 1:
            r = base if first else mul_up(r, base)
            first = False
        e >>= 1
        if e:
            base = mul_up(base, base)
    return r


def i_pow(lo: float, hi: float, m: int) -> tuple[float, float]:
    """Integer power with exact even/odd range analysis (m >= 1)."""
    if m == 1:
        return lo, hi
    if m % 2 == 1:
        plo = -_pow_mag_up(-lo, m) if lo < 0.0 else _pow_mag_down(lo, m)
        phi = -_pow_mag_down(-hi, m) if hi < 0.0 else _pow_mag_up(hi, m)
        return plo, phi
    if lo >= 0.0:
        return _pow_mag_down(lo, m), _pow_mag_up(hi, m)
    if hi <= 0.0:
        return _pow_mag_down(-hi, m), _pow_mag_up(-lo, m)
    return 0.0, max(_pow_mag_up(-lo, m), _pow_mag_up(hi, m))


def i_sqrt(lo: float, hi: float) -> tuple[float, float]:
    if lo < 0.0:
        raise DomainError(f"sqrt over [{lo}, {hi}] with negative part")
    return sqrt_down(lo), sqrt_up(hi)


def i_exp(lo: float, hi: float) -> tuple[float, float]:
    return max(0.0, _lib_down(math.exp(lo))), _lib_up(math.exp(hi))


_TWO_PI = 6.283185307179586     # nearest double below 2*pi
_HALF_PI = 1.5707963267948966


def _has_crit(lo: float, hi: float, offset: float) -> bool:
    """Conservatively: does [lo,hi] contain offset + 2*pi*n for some int n?

    Errs toward True (a false positive only widens the result to +-1).
    """
    a = (lo - offset) / _TWO_PI
    b = (hi - offset) / _TWO_PI
    slack = 1e-9 + 4e-16 * max(abs(a), abs(b))
    return math.floor(b + slack) >= math.ceil(a - slack)


def i_sin(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= _TWO_PI:
        return -1.0, 1.0
    slo = _lib_down(math.sin(lo))
    shi = _lib_up(math.sin(lo))
    tlo = _lib_down(math.sin(hi))
    thi = _lib_up(math.sin(hi))
    rlo, rhi = min(slo, tlo), max(shi, thi)
    if _has_crit(lo, hi, _HALF_PI):
        rhi = 1.0
    if _has_crit(lo, hi, -_HALF_PI):
        rlo = -1.0
    return max(rlo, -1.0), min(rhi, 1.0)


def i_cos(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= _TWO_PI:
        return -1.0, 1.0
    slo = _lib_down(math.cos(lo))
    shi = _lib_up(math.cos(lo))
    tlo = _lib_down(math.cos(hi))
    thi = _lib_up(math.cos(hi))
    rlo, rhi = min(slo, tlo), max(shi, thi)
    if _has_crit(lo, hi, 0.0):
        rhi = 1.0
    if _has_crit(lo, hi, math.pi):
        rlo = -1.0
    return max(rlo, -1.0), min(rhi, 1.0)


def i_hull(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    return min(alo, blo), max(ahi, bhi)


def i_meet(alo: float, ahi: float, blo: float, bhi: float) -> tuple[float, float]:
    lo, hi = max(alo, blo), min(ahi, bhi)
    return (lo, hi) if lo <= hi else EMPTY


# ---------------------------------------------------------------------------
# Interval value type
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Interval:
    """Closed real interval [lo, hi] with outward-rounded arithmetic."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = self.lo, self.hi
        if lo > hi:
            if not (lo == _INF and hi == -_INF):
                raise ValueError(f"invalid interval bounds [{lo}, {hi}]")
            return
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"non-finite interval bounds [{lo}, {hi}]")

    @staticmethod
    def point(v: float) -> Interval:
        return Interval(v, v)

    @staticmethod
    def empty() -> Interval:
        return _EMPTY_INTERVAL

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def width(self) -> float:
        if self.is_empty:
            return 0.0
        return sub_up(self.hi, self.lo)

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    def subset_of(self, other: Interval) -> bool:
        if self.is_empty:
            return True
        return other.lo <= self.lo and self.hi <= other.hi

    def intersects(self, other: Interval) -> bool:
        if self.is_empty or other.is_empty:
            return False
        return self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: Interval) -> Interval:
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def meet(self, other: Interval) -> Interval:
        if self.is_empty or other.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_meet(self.lo, self.hi, other.lo, other.hi))

    def _coerce(self, other) -> Interval:
        if isinstance(other, Interval):
            return other
        return Interval(float(other), float(other))

    def __add__(self, other) -> Interval:
        o = self._coerce(other)
        if self.is_empty or o.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_add(self.lo, self.hi, o.lo, o.hi))

    __radd__ = __add__

    def __sub__(self, other) -> Interval:
        o = self._coerce(other)
        if self.is_empty or o.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_sub(self.lo, self.hi, o.lo, o.hi))

    def __rsub__(self, other) -> Interval:
        return self._coerce(other) - self

    def __neg__(self) -> Interval:
        if self.is_empty:
            return _EMPTY_INTERVAL
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other) -> Interval:
        o = self._coerce(other)
        if self.is_empty or o.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_mul(self.lo, self.hi, o.lo, o.hi))

    __rmul__ = __mul__

    def __truediv__(self, other) -> Interval:
        o = self._coerce(other)
        if self.is_empty or o.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_div(self.lo, self.hi, o.lo, o.hi))

    def __rtruediv__(self, other) -> Interval:
        return self._coerce(other) / self

    def __pow__(self, m: int) -> Interval:
        if not isinstance(m, int) or m < 1:
            raise ValueError("interval power requires a positive integer exponent")
        if self.is_empty:
            return _EMPTY_INTERVAL
        return Interval(*i_pow(self.lo, self.hi, m))

    def __repr__(self) -> str:
        if self.is_empty:
            return "Interval.empty()"
        return f"[{self.lo!r}, {self.hi!r}]"


_EMPTY_INTERVAL = Interval(_INF, -_INF)


def interval_arith(a: Interval, b: Interval, op: str) -> Interval:
    """Dispatch one of the four basic operations by symbol.

    ``op`` is one of ``+ - * /`` (ASCII) or the typographic minus/times.
    """
    if op in ("+",):
        return a + b
    if op in ("-", "−"):
        return a - b
    if op in ("*", "×"):
        return a * b
    if op in ("/", "÷"):
        return a / b
    raise ValueError(f"unknown interval operation {op!r}")


# ---------------------------------------------------------------------------
# Box value type
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Box:
    """Cartesian product of intervals (an axis-aligned box)."""

    dims: tuple[Interval, ...]

    def __post_init__(self):
        if not isinstance(self.dims, tuple):
            object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise ValueError("box needs at least one dimension")

    @staticmethod
    def from_bounds(bounds: Iterable[tuple[float, float]]) -> Box:
        return Box(tuple(Interval(lo, hi) for lo, hi in bounds))

    @staticmethod
    def point(coords: Sequence[float]) -> Box:
        return Box(tuple(Interval(c, c) for c in coords))

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def is_empty(self) -> bool:
        return any(iv.is_empty for iv in self.dims)

    def widths(self) -> tuple[float, ...]:
        return tuple(iv.width for iv in self.dims)

    def max_width(self) -> float:
        return max(self.widths())

    def mid(self) -> tuple[float, ...]:
        return tuple(iv.mid for iv in self.dims)

    def raw(self) -> list[tuple[float, float]]:
        return [(iv.lo, iv.hi) for iv in self.dims]

    @staticmethod
    def from_raw(raw: Sequence[tuple[float, float]]) -> Box:
        return Box(tuple(Interval(lo, hi) for lo, hi in raw))

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.dims)

    def __getitem__(self, k: int) -> Interval:
        return self.dims[k]

    def _check_dim(self, other: Box) -> None:
        if self.n != other.n:
            raise DimensionMismatch(
                f"box dimensions differ: {self.n} vs {other.n}"
            )

    def subset_of(self, other: Box) -> bool:
        self._check_dim(other)
        return all(a.subset_of(b) for a, b in zip(self.dims, other.dims))

    def intersects(self, other: Box) -> bool:
        self._check_dim(other)
        return all(a.intersects(b) for a, b in zip(self.dims, other.dims))

    def contains_point(self, coords: Sequence[float]) -> bool:
        if len(coords) != self.n:
            raise DimensionMismatch(
                f"point dimension {len(coords)} vs box dimension {self.n}"
            )
        return all(iv.contains(c) for iv, c in zip(self.dims, coords))

    def hull(self, other: Box) -> Box:
        self._check_dim(other)
        return Box(tuple(a.hull(b) for a, b in zip(self.dims, other.dims)))

    def meet(self, other: Box) -> Box:
        self._check_dim(other)
        return Box(tuple(a.meet(b) for a, b in zip(self.dims, other.dims)))

    def __repr__(self) -> str:
        return "x".join(f"[{iv.lo!r},{iv.hi!r}]" for iv in self.dims)


def bisect(box: Box) -> tuple[Box, Box]:
    """Split along the widest dimension at its midpoint.

    Tie-break: lowest dimension index among maximal-width dimensions.
    The halves share the splitting facet, so their hull is exactly ``box``.
    """
    widths = box.widths()
    wmax = max(widths)
    if wmax <= 0.0:
        raise DegenerateBox(f"cannot bisect point box {box}")
    k = widths.index(wmax)
    iv = box.dims[k]
    mid = iv.mid
    # Guard against mid collapsing onto a bound for very thin intervals.
    if not (iv.lo < mid < iv.hi):
        mid = math.nextafter(iv.lo, iv.hi)
        if not (iv.lo < mid < iv.hi):
            raise DegenerateBox(f"dimension {k} of {box} cannot be split")
    left = list(box.dims)
    right = list(box.dims)
    left[k] = Interval(iv.lo, mid)
    right[k] = Interval(mid, iv.hi)
    return Box(tuple(left)), Box(tuple(right))


def set_predicates(a: Box, b: Box) -> dict[str, bool]:
    """Componentwise subset / intersection flags on stored float bounds."""
    return {"subset": a.subset_of(b), "intersects": a.intersects(b)}


# ---------------------------------------------------------------------------
# box literal syntax:  [lo,hi]x[lo,hi]...
# ---------------------------------------------------------------------------

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_COMPONENT = re.compile(rf"\[({_NUM}),({_NUM})\]")


def parse_box(text: str) -> Box:
    """Parse a box literal like ``[1.55,2.15]x[1.0,1.4]`` (whitespace-free
    after stripping; decimal literals only)."""
    compact = re.sub(r"\s+", "", text)
    if not compact:
        raise ValueError("empty box literal")
    parts = compact.split("x")
    ivs = []
    for part in parts:
        m = _COMPONENT.fullmatch(part)
        if not m:
            raise ValueError(f"bad box component {part!r} in {text!r}")
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo > hi:
            raise ValueError(f"inverted bounds in box component {part!r}")
        ivs.append(Interval(lo, hi))
    return Box(tuple(ivs))


def format_box(box: Box) -> str:
    return "x".join(f"[{iv.lo!r},{iv.hi!r}]" for iv in box.dims)
