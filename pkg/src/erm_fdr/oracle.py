"""Brute-force solvers on the probability simplex for small instances.

Neither routine uses the inverse derivative, the conjugate or the
normaliser: they only evaluate f, f' and the empirical risk.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .divergence import DivergenceGenerator
from .model_space import ModelSupport, loss_values

__all__ = [
    "FLOOR",
    "OracleConvergenceError",
    "OracleTrace",
    "brute_force_constrained",
    "brute_force_regularized",
    "regularized_objective",
]

FLOOR = 1e-12
_DEFAULT_RESOLUTION = {1: 1, 2: 1 / 1000, 3: 1 / 200, 4: 1 / 60, 5: 1 / 30}


class OracleConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass
class OracleTrace:
    """Rows of (iteration, objective, total variation to a reference)."""

    reference: Optional[np.ndarray] = None
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def record(self, it: int, objective: float, p: np.ndarray) -> None:
        tv = math.nan if self.reference is None else 0.5 * float(np.abs(p - self.reference).sum())
        self.rows.append((it, objective, tv))

    def write_csv(self, stream) -> None:
        stream.write("iter,objective,tv_to_closed_form\n")
        for it, obj, tv in self.rows:
            stream.write(f"{it},{obj:.17g},{'nan' if math.isnan(tv) else format(tv, '.17g')}\n")


def _divergence(gen: DivergenceGenerator, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return (q * gen.f(p / q)).sum(axis=-1)


def regularized_objective(p, gen: DivergenceGenerator, support: ModelSupport, loss, lam: float) -> float:
    p = np.asarray(p, dtype=float)
    L = loss_values(support, loss)
    return float(np.dot(p, L) + lam * _divergence(gen, p, support.weights))


def brute_force_regularized(support: ModelSupport, loss, gen: DivergenceGenerator, lam: float,
                            iterations: int = 100_000, step: Optional[float] = None,
                            gtol: float = 1e-11, trace: Optional[OracleTrace] = None) -> np.ndarray:
    """Minimise R_z(P) + lam D_f(P||Q) by entropic mirror descent.

    Multiplicative updates p <- p exp(-step * grad) keep iterates in the
    simplex interior (floor ``FLOOR``, then renormalise).  The step is halved
    whenever the objective would increase and grown by 10% after an accepted
    move.  Stops when the gradient is constant across the non-floored atoms.
    """
    if len(support) > 12:
        raise ValueError("brute-force oracle is limited to 12 atoms")
    q = support.weights
    L = loss_values(support, loss)
    p = q.copy()
    fdot = gen.fdot

    def objective(p):
        return float(np.dot(p, L) + lam * _divergence(gen, p, q))

    def grad(p):
        with np.errstate(all="ignore"):
            return L + lam * fdot(p / q)

    obj = objective(p)
    g = grad(p)
    eta = step if step is not None else 1.0 / (1e-12 + float(np.ptp(g)) + lam)
    history: list[tuple[int, float]] = []
    stale = 0
    for it in range(iterations):
        interior = p > 10 * FLOOR
        spread = float(np.ptp(g[interior])) if interior.any() else 0.0
        floored_ok = bool(np.all(g[~interior] >= g[interior].max() - 1e-9))
        if trace is not None and it % 100 == 0:
            trace.record(it, obj, p)
        if floored_ok and spread <= gtol * max(1.0, float(np.abs(g[interior]).max())):
            break
        # rounding floor: the objective can no longer decrease
        if stale >= 25 and floored_ok and spread <= 1e-6:
            break
        accepted = False
        for _ in range(60):
            logits = np.log(p) - eta * (g - g[interior].mean())
            logits -= logits.max()
            cand = np.exp(logits)
            cand /= cand.sum()
            cand = np.maximum(cand, FLOOR)
            cand /= cand.sum()
            new_obj = objective(cand)
            if new_obj <= obj:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            stale += 25
            eta = 1.0 / (1e-12 + float(np.ptp(g)) + lam)
            continue
        stale = stale + 1 if new_obj >= obj else 0
        p, obj = cand, new_obj
        g = grad(p)
        eta *= 1.1
        history.append((it, obj))
    else:
        raise OracleConvergenceError(
            f"mirror descent did not converge in {iterations} iterations "
            f"(gradient spread {float(np.ptp(g[p > 10 * FLOOR])):.3e})", history[-20:])
    if trace is not None:
        trace.record(len(history), obj, p)
    return p


def _simplex_grid(n: int, k: int) -> np.ndarray:
    """All points of the simplex whose coordinates are multiples of 1/k."""
    rows = []
    for bars in itertools.combinations(range(k + n - 1), n - 1):
        edges = (-1,) + bars + (k + n - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(n)])
    return np.asarray(rows, dtype=float) / k


def _ray_extent(gen, p, dirs, q, eta, iters: int = 64) -> np.ndarray:
    """Largest t with p + t*d in the simplex and D_f <= eta, per direction d.

    D_f is convex along each ray and feasible at t = 0, so the feasible part
    of the ray is an interval and bisection finds its end.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        caps = np.where(dirs < 0, p / -dirs, np.inf).min(axis=1)
    caps = np.where(np.isfinite(caps), caps, 1.0)
    lo = np.zeros(len(dirs))
    hi = caps.copy()
    end_ok = _divergence(gen, np.maximum(p + hi[:, None] * dirs, 0.0), q) <= eta
    lo[end_ok] = hi[end_ok]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = _divergence(gen, np.maximum(p + mid[:, None] * dirs, 0.0), q) <= eta
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def _plane_step(gen, p, q, L, eta, i, j, k, angles: int = 120, zooms: int = 7):
    """Best boundary point in the plane through p that moves mass among i, j, k.

    Rays are cast from the plane's D_f minimiser (mass of the triple split in
    proportion to q), which is strictly feasible unless the feasible slice is
    a single point; from there the boundary is star-shaped and the risk along
    it is unimodal in the angle.
    """
    idx = [i, j, k]
    centre = p.copy()
    centre[idx] = p[idx].sum() * q[idx] / q[idx].sum()
    if _divergence(gen, centre, q) >= eta:
        return p, float(np.dot(p, L))
    a = np.zeros(len(p)); a[i], a[k] = 1.0, -1.0
    b = np.zeros(len(p)); b[j], b[k] = 1.0, -1.0
    b = b - a * (a @ b) / (a @ a)
    a /= np.linalg.norm(a); b /= np.linalg.norm(b)
    mid, width = 0.0, math.pi
    best_p, best_r = p, float(np.dot(p, L))
    for _ in range(zooms):
        theta = mid + np.linspace(-width, width, angles + 1)
        dirs = np.cos(theta)[:, None] * a + np.sin(theta)[:, None] * b
        t = _ray_extent(gen, centre, dirs, q, eta)
        # same expression the bisection certified; renormalising could step outside
        pts = np.maximum(centre + t[:, None] * dirs, 0.0)
        ok = _divergence(gen, pts, q) <= eta
        if not ok.any():
            break
        r = np.where(ok, pts @ L, np.inf)
        m = int(np.argmin(r))
        if r[m] < best_r:
            best_p, best_r = pts[m], float(r[m])
        mid, width = theta[m], 4 * width / angles
    return best_p, best_r


def brute_force_constrained(support: ModelSupport, loss, gen: DivergenceGenerator, eta: float,
                            resolution: Optional[float] = None,
                            sweeps: int = 200) -> tuple[np.ndarray, float]:
    """Minimise R_z(P) subject to D_f(P||Q) <= eta by grid search.

    A barycentric grid (spacing ``resolution``) plus Q itself seeds the
    search.  The incumbent is then polished by exact searches over the
    feasible boundary inside every plane that moves mass among three atoms
    (or along the single edge when there are two), until a full sweep stops
    improving the risk.
    """
    n = len(support)
    if n > 5:
        raise ValueError("grid oracle is limited to 5 atoms")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    q = support.weights
    L = loss_values(support, loss)
    if resolution is None:
        resolution = _DEFAULT_RESOLUTION[n]
    k = max(1, int(round(1.0 / resolution)))
    cand = np.vstack([q[None, :], _simplex_grid(n, k)])
    div = _divergence(gen, cand, q)
    feasible = cand[div <= eta]
    risks = feasible @ L
    if L.min() == L.max():
        if np.ptp(risks) > 1e-12:
            raise AssertionError("nonseparable instance but feasible risks differ")
        return q.copy(), float(np.dot(q, L))
    i = int(np.argmin(risks))
    best, best_risk = feasible[i], float(risks[i])
    if n == 1:
        return best, best_risk
    if n == 2:
        dirs = np.array([[1.0, -1.0], [-1.0, 1.0]])
        t = _ray_extent(gen, best, dirs, q, eta)
        pts = np.maximum(best + t[:, None] * dirs, 0.0)
        r = pts @ L
        m = int(np.argmin(r))
        return (pts[m], float(r[m])) if r[m] < best_risk else (best, best_risk)

    triples = list(itertools.combinations(range(n), 3))
    for _ in range(sweeps):
        before = best_risk
        for a, b, c in triples:
            best, best_risk = _plane_step(gen, best, q, L, eta, a, b, c)
        if before - best_risk <= 1e-14:
            break
    return best, best_risk
