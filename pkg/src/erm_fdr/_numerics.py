"""Scalar root finding and convex minimisation on a bracket.

Both routines accept functions that return +/-inf on part of the bracket,
which happens when the normalisation residual leaves the conjugate's domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

EPS = 2.220446049250313e-16
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RootResult:
    root: float
    value: float
    iterations: int
    bracket: tuple[float, float]
    iterates: list[float] = field(default_factory=list)


def _finite(v: float) -> bool:
    return math.isfinite(v)


def bracketed_root(fn: Callable[[float], float], lo: float, hi: float, *,
                   decreasing: bool = True, xtol: Optional[float] = None,
                   maxiter: int = 400) -> RootResult:
    """Root of a monotone function on [lo, hi] by bisection with secant steps.

    ``fn(lo)`` and ``fn(hi)`` must bracket zero given the stated direction.
    A secant step is accepted only when both ends are finite and the step
    lands inside the middle 90% of the bracket; otherwise we bisect.  Runs
    until the bracket collapses to a few ulps.
    """
    sgn = 1.0 if decreasing else -1.0
    g = lambda x: sgn * fn(x)  # noqa: E731 -- g is decreasing
    glo, ghi = g(lo), g(hi)
    if glo < 0 or ghi > 0:
        raise ValueError(f"root not bracketed: f({lo})={glo * sgn}, f({hi})={ghi * sgn}")
    iterates: list[float] = []
    if glo == 0:
        return RootResult(lo, 0.0, 0, (lo, hi), iterates)
    if ghi == 0:
        return RootResult(hi, 0.0, 0, (lo, hi), iterates)
    it = 0
    use_secant = True
    x, gx = lo, glo
    while it < maxiter:
        width = hi - lo
        tol = xtol if xtol is not None else 4 * EPS * max(1.0, abs(lo), abs(hi))
        if width <= tol:
            break
        x = 0.5 * (lo + hi)
        if use_secant and _finite(glo) and _finite(ghi) and glo != ghi:
            xs = lo + glo * (hi - lo) / (glo - ghi)
            if lo + 0.05 * width < xs < hi - 0.05 * width:
                x = xs
        gx = g(x)
        iterates.append(x)
        it += 1
        if gx == 0:
            lo = hi = x
            break
        if gx > 0:
            shrink = (hi - x) / width
            lo, glo = x, gx
        else:
            shrink = (x - lo) / width
            hi, ghi = x, gx
        # alternate to bisection when secant stops shrinking the bracket
        use_secant = shrink < 0.5 or not use_secant
    root = lo if abs(glo) <= abs(ghi) else hi
    if lo == hi:
        root = lo
    return RootResult(root, sgn * g(root), it, (lo, hi), iterates)


@dataclass
class MinResult:
    argmin: float
    value: float
    iterations: int
    bracket: tuple[float, float]
    iterates: list[float] = field(default_factory=list)


def golden_section(fn: Callable[[float], float], lo: float, hi: float, *,
                   slope_sign: Optional[Callable[[float], float]] = None,
                   scale: Optional[Callable[[float], float]] = None,
                   xtol: Optional[float] = None, maxiter: int = 400) -> MinResult:
    """Minimise a convex function on [lo, hi].

    Golden-section steps run while the two probe values are distinguishable
    above rounding; ``scale(x)`` is the magnitude of the terms summed into
    ``fn(x)`` (default ``|fn(x)|``), so cancellation is accounted for.
    When they stop being so and ``slope_sign`` is given, the
    bracket is finished by bisection on the sign of the slope.  When both
    probes are +inf the infinite region is taken to be on the left, which
    holds for the dual objectives this is used on.
    """
    iterates: list[float] = []
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0

    def noise(x1, f1, x2, f2) -> float:
        if scale is None:
            return max(abs(f1), abs(f2), 1e-300)
        return max(scale(x1), scale(x2), 1e-300)

    def tol_at() -> float:
        return xtol if xtol is not None else 4 * EPS * max(1.0, abs(a), abs(b))

    while it < maxiter and b - a > tol_at():
        it += 1
        if math.isinf(fc) and math.isinf(fd):
            a = c
        elif abs(fc - fd) > 64 * EPS * noise(c, fc, d, fd):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - INVPHI * (b - a)
                fc = fn(c)
            else:
                a, c, fc = c, d, fd
                d = a + INVPHI * (b - a)
                fd = fn(d)
            iterates.append(0.5 * (a + b))
            continue
        else:
            break
        c = b - INVPHI * (b - a)
        d = a + INVPHI * (b - a)
        fc, fd = fn(c), fn(d)
        iterates.append(0.5 * (a + b))

    if slope_sign is not None:
        while it < maxiter and b - a > tol_at():
            it += 1
            m = 0.5 * (a + b)
            s = slope_sign(m)
            iterates.append(m)
            if s > 0:
                b = m
            elif s < 0:
                a = m
            else:
                a = b = m
                break
    x = 0.5 * (a + b)
    return MinResult(x, fn(x), it, (a, b), iterates)
