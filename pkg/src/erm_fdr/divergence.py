"""Catalog of f-divergence generators.

Each generator carries closed forms for f, its first and second derivatives,
the inverse of the derivative and the Legendre-Fenchel conjugate.  All
callables are vectorised over numpy arrays.

The inverse derivative ``fdot_inv`` is defined on an open interval
``interval = (lo, hi)`` where ``lo = lim_{x->0+} f'(x)`` and
``hi = lim_{x->inf} f'(x)``.  Outside the closure of that interval it
returns ``nan``; at ``lo`` it returns the limit value 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "CATALOG",
    "ConformanceReport",
    "ConformanceRow",
    "DivergenceGenerator",
    "ZeroLimit",
    "check_generator",
    "classify_zero_limit",
    "conjugate",
    "make_generator",
    "parse_generator",
]

CATALOG = ("kl", "reverse_kl", "chi_squared", "hellinger_sq", "alpha")

Array = np.ndarray
Fn = Callable[[Array], Array]


def _arr(x) -> Array:
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class DivergenceGenerator:
    """A strictly convex generator f with f(1) = 0 and its companions."""

    name: str
    f: Fn
    fdot: Fn
    fdot_inv: Fn
    log_fdot_inv: Fn
    fddot: Fn
    fstar_closed: Fn
    interval: tuple[float, float]
    f_zero: float
    alpha: Optional[float] = None
    key: str = field(default="", compare=False)

    @property
    def zero_limit(self) -> float:
        """lim_{x->0+} f'(x); may be -inf."""
        return self.interval[0]

    def fdot_inv_ext(self, t) -> Array:
        """Inverse derivative extended by 0 below the interval and +inf above.

        This is the derivative of the clamped conjugate, so it is the
        quantity whose Q-expectation must equal one at the normalizer.
        """
        t = _arr(t)
        lo, hi = self.interval
        with np.errstate(all="ignore"):
            inside = self.fdot_inv(t)
        return np.where(t <= lo, 0.0, np.where(t >= hi, np.inf, inside))

    def log_fdot_inv_ext(self, t) -> Array:
        t = _arr(t)
        lo, hi = self.interval
        with np.errstate(all="ignore"):
            inside = self.log_fdot_inv(t)
        return np.where(t <= lo, -np.inf, np.where(t >= hi, np.inf, inside))

    def conjugate(self, t) -> Array:
        """f*(t) = sup_{x>0} (t x - f(x)) with the clamped extension."""
        t = _arr(t)
        lo, hi = self.interval
        with np.errstate(all="ignore"):
            closed = self.fstar_closed(t)
        out = np.where(t < lo, -self.f_zero, closed)
        return np.where(t > hi, np.inf, out)

    def __str__(self) -> str:
        return self.key or self.name


def _kl() -> DivergenceGenerator:
    def f(x):
        x = _arr(x)
        with np.errstate(all="ignore"):
            return np.where(x == 0, 0.0, x * np.log(x))

    return DivergenceGenerator(
        name="kl",
        f=f,
        fdot=lambda x: np.log(_arr(x)) + 1.0,
        fdot_inv=lambda t: np.exp(_arr(t) - 1.0),
        log_fdot_inv=lambda t: _arr(t) - 1.0,
        fddot=lambda x: 1.0 / _arr(x),
        fstar_closed=lambda t: np.exp(_arr(t) - 1.0),
        interval=(-math.inf, math.inf),
        f_zero=0.0,
        key="kl",
    )


def _reverse_kl() -> DivergenceGenerator:
    return DivergenceGenerator(
        name="reverse_kl",
        f=lambda x: -np.log(_arr(x)),
        fdot=lambda x: -1.0 / _arr(x),
        fdot_inv=lambda t: np.where(_arr(t) < 0, -1.0 / _arr(t), np.nan),
        log_fdot_inv=lambda t: -np.log(-_arr(t)),
        fddot=lambda x: 1.0 / _arr(x) ** 2,
        fstar_closed=lambda t: -1.0 - np.log(-_arr(t)),
        interval=(-math.inf, 0.0),
        f_zero=math.inf,
        key="reverse_kl",
    )


def _chi_squared() -> DivergenceGenerator:
    def fdot_inv(t):
        t = _arr(t)
        return np.where(t >= -2.0, 1.0 + t / 2.0, np.nan)

    return DivergenceGenerator(
        name="chi_squared",
        f=lambda x: (_arr(x) - 1.0) ** 2,
        fdot=lambda x: 2.0 * (_arr(x) - 1.0),
        fdot_inv=fdot_inv,
        log_fdot_inv=lambda t: np.log1p(_arr(t) / 2.0),
        fddot=lambda x: np.full_like(_arr(x), 2.0),
        fstar_closed=lambda t: _arr(t) + _arr(t) ** 2 / 4.0,
        interval=(-2.0, math.inf),
        f_zero=1.0,
        key="chi_squared",
    )


def _hellinger_sq() -> DivergenceGenerator:
    def fdot_inv(t):
        t = _arr(t)
        return np.where(t < 1.0, (1.0 - t) ** -2.0, np.nan)

    return DivergenceGenerator(
        name="hellinger_sq",
        f=lambda x: (np.sqrt(_arr(x)) - 1.0) ** 2,
        fdot=lambda x: 1.0 - 1.0 / np.sqrt(_arr(x)),
        fdot_inv=fdot_inv,
        log_fdot_inv=lambda t: -2.0 * np.log1p(-_arr(t)),
        fddot=lambda x: 0.5 * _arr(x) ** -1.5,
        fstar_closed=lambda t: _arr(t) / (1.0 - _arr(t)),
        interval=(-math.inf, 1.0),
        f_zero=1.0,
        key="hellinger_sq",
    )


def _alpha(a: float) -> DivergenceGenerator:
    am1 = a - 1.0

    def f(x):
        x = _arr(x)
        with np.errstate(all="ignore"):
            return (np.expm1(a * np.log(x)) - a * (x - 1.0)) / (a * am1)

    def fdot(x):
        return np.expm1(am1 * np.log(_arr(x))) / am1

    def log_fdot_inv(t):
        return np.log1p(am1 * _arr(t)) / am1

    def fdot_inv(t):
        t = _arr(t)
        s = 1.0 + am1 * t
        with np.errstate(all="ignore"):
            val = np.exp(np.log1p(am1 * t) / am1)
        if a > 1:
            return np.where(s >= 0, val, np.nan)
        return np.where(s > 0, val, np.nan)

    def fstar(t):
        return np.expm1(a / am1 * np.log1p(am1 * _arr(t))) / a

    if a > 1:
        interval = (-1.0 / am1, math.inf)
        f_zero = 1.0 / a
    else:
        interval = (-math.inf, 1.0 / (1.0 - a))
        f_zero = 1.0 / a if a > 0 else math.inf

    return DivergenceGenerator(
        name="alpha",
        f=f,
        fdot=fdot,
        fdot_inv=fdot_inv,
        log_fdot_inv=log_fdot_inv,
        fddot=lambda x: _arr(x) ** (a - 2.0),
        fstar_closed=fstar,
        interval=interval,
        f_zero=f_zero,
        alpha=a,
        key=f"alpha:{a!r}",
    )


def make_generator(name: str, alpha: Optional[float] = None) -> DivergenceGenerator:
    """Instantiate a catalog generator.

    ``alpha`` must be given iff ``name == "alpha"`` and must avoid 0 and 1,
    whose limits are ``reverse_kl`` and ``kl``.
    """
    if name not in CATALOG:
        raise ValueError(f"unknown divergence {name!r}; expected one of {CATALOG}")
    if name == "alpha":
        if alpha is None:
            raise ValueError("alpha generator requires a value for alpha")
        alpha = float(alpha)
        if not math.isfinite(alpha) or alpha in (0.0, 1.0):
            raise ValueError(f"alpha must be finite and not in {{0, 1}}, got {alpha}")
        return _alpha(alpha)
    if alpha is not None:
        raise ValueError(f"alpha is only meaningful for the alpha family, not {name!r}")
    return {
        "kl": _kl,
        "reverse_kl": _reverse_kl,
        "chi_squared": _chi_squared,
        "hellinger_sq": _hellinger_sq,
    }[name]()


def parse_generator(key: str) -> DivergenceGenerator:
    """Parse a config key such as ``"kl"`` or ``"alpha:0.5"``."""
    key = key.strip().strip('"').strip("'")
    if key.startswith("alpha:"):
        try:
            value = float(key.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad alpha value in {key!r}") from exc
        return make_generator("alpha", value)
    return make_generator(key)


def conjugate(gen: DivergenceGenerator, t: float) -> float:
    """Legendre-Fenchel conjugate at a finite t, with +inf above the domain."""
    return float(gen.conjugate(t))


class ZeroLimit(NamedTuple):
    """Tag for lim_{x->0+} f'(x): ``kind`` is ``"finite"`` or ``"minus_infinity"``."""

    kind: str
    value: float

    @property
    def finite(self) -> bool:
        return self.kind == "finite"


def classify_zero_limit(gen: DivergenceGenerator) -> ZeroLimit:
    a = gen.zero_limit
    if a == -math.inf:
        return ZeroLimit("minus_infinity", -math.inf)
    # +inf would need a non-increasing derivative, impossible for convex f
    return ZeroLimit("finite", float(a))


@dataclass(frozen=True)
class ConformanceRow:
    x: float
    in_domain: bool
    inverse_err: float
    fenchel_err: float
    fdot_fd_err: float
    fddot_fd_err: float

    @property
    def max_err(self) -> float:
        return max(self.inverse_err, self.fenchel_err, self.fdot_fd_err, self.fddot_fd_err)


@dataclass(frozen=True)
class ConformanceReport:
    generator: str
    rows: tuple[ConformanceRow, ...]
    threshold: float = 1e-6

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.in_domain and r.max_err < self.threshold for r in self.rows)

    @property
    def flagged(self) -> list[float]:
        return [r.x for r in self.rows if not r.in_domain or not r.max_err < self.threshold]

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        worst = max((r.max_err for r in self.rows if r.in_domain), default=math.nan)
        return f"{self.generator}: {verdict} ({len(self.rows)} points, worst relative error {worst:.3e})"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def check_generator(gen: DivergenceGenerator, grid: Sequence[float]) -> ConformanceReport:
    """Check the closed forms of ``gen`` against each other on ``grid``.

    Per point: inverse round trip, Fenchel equality, and central differences
    of f and f' (step ``1e-6 * max(1, |x|)``).  Errors are relative to
    ``max(1, |reference|)``.  Points outside (0, inf) or too close to zero for
    the difference stencil are flagged rather than raising.
    """
    rows = []
    for x in map(float, grid):
        h = 1e-6 * max(1.0, abs(x))
        if not (math.isfinite(x) and x - h > 0):
            rows.append(ConformanceRow(x, False, math.nan, math.nan, math.nan, math.nan))
            continue
        d = float(gen.fdot(x))
        inv = float(gen.fdot_inv(d))
        fx = float(gen.f(x))
        inverse_err = abs(inv - x) / x
        fenchel_err = _rel(float(gen.conjugate(d)), d * x - fx)
        fd1 = (float(gen.f(x + h)) - float(gen.f(x - h))) / (2 * h)
        fd2 = (float(gen.fdot(x + h)) - float(gen.fdot(x - h))) / (2 * h)
        rows.append(
            ConformanceRow(
                x,
                True,
                inverse_err,
                fenchel_err,
                _rel(fd1, d),
                _rel(fd2, float(gen.fddot(x))),
            )
        )
    return ConformanceReport(str(gen), tuple(rows))
