"""Normalisation function, posterior and regularisation-range analysis.

Notation used in code: ``t = -(beta + L) / lam`` is the per-atom argument fed
to the inverse derivative, ``rnd`` the Radon-Nikodym derivative dP/dQ of the
regularised solution, and ``N`` the normaliser beta-hat.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ._numerics import EPS, bracketed_root, golden_section
from .divergence import DivergenceGenerator, classify_zero_limit
from .model_space import ModelSupport, loss_values

__all__ = [
    "SWEEP_HEADER",
    "BoundaryError",
    "DomainError",
    "FeasibilityReport",
    "InfeasibleLambdaError",
    "InternalConsistencyError",
    "NonseparableWarning",
    "NormalizationDiagnostics",
    "Posterior",
    "SweepRecord",
    "dual_objective",
    "dual_objective_derivative",
    "duality_gap",
    "feasibility",
    "n_direction",
    "n_monotone",
    "normalization_constant",
    "normalization_derivative",
    "normalization_derivative_fd",
    "normalization_residual",
    "posterior",
    "sweep",
    "tilted_measure",
    "write_sweep_csv",
]

DEFAULT_TOL = 1e-10
SWEEP_HEADER = ("lambda", "admissible", "N", "risk", "divergence", "eta",
                "primal", "dual", "gap", "dN_dlambda")


class InfeasibleLambdaError(ValueError):
    """No normalising beta exists for this regularisation factor."""

    def __init__(self, lam: float, lambda_star: float):
        self.lam = lam
        self.lambda_star = lambda_star
        super().__init__(f"lambda={lam:.6g} is not admissible (lambda_star={lambda_star:.6g})")


class InternalConsistencyError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


class BoundaryError(ValueError):
    pass


class NonseparableWarning(UserWarning):
    pass


def _log_q(support: ModelSupport) -> np.ndarray:
    return np.log(support.weights)


def _t(beta: float, lam: float, L: np.ndarray) -> np.ndarray:
    return -(beta + L) / lam


def normalization_residual(beta: float, lam: float, gen: DivergenceGenerator,
                           support: ModelSupport, loss) -> float:
    """E_Q[fdot_inv(-(beta + L)/lam)] - 1, using the extended inverse."""
    L = loss_values(support, loss)
    return math.expm1(_log_mass(beta, lam, gen, support, L))


def _log_mass(beta: float, lam: float, gen: DivergenceGenerator, support: ModelSupport,
              L: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        terms = _log_q(support) + gen.log_fdot_inv_ext(_t(beta, lam, L))
    if np.any(np.isposinf(terms)):
        return math.inf
    if np.all(np.isneginf(terms)):
        return -math.inf
    return float(logsumexp(terms))


def dual_objective(beta: float, lam: float, gen: DivergenceGenerator, support: ModelSupport,
                   loss) -> float:
    """lam * E_Q[f*(-(beta + L)/lam)] + beta; +inf if any conjugate is +inf."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    L = loss_values(support, loss)
    t = _t(beta, lam, L)
    if gen.name == "kl":
        # f*(t) = exp(t - 1): evaluate the mean in log space
        m = float(logsumexp(_log_q(support) + t - 1.0))
        return lam * math.exp(m) + beta if m < 709 else math.inf
    with np.errstate(all="ignore"):
        fs = gen.conjugate(t)
    if np.any(np.isposinf(fs)):
        return math.inf
    return lam * float(np.dot(support.weights, fs)) + beta


def dual_objective_derivative(beta: float, lam: float, gen: DivergenceGenerator,
                              support: ModelSupport, loss) -> float:
    """dG/dbeta = 1 - E_Q[fdot_inv(-(beta + L)/lam)]."""
    L = loss_values(support, loss)
    t = _t(beta, lam, L)
    lo, hi = gen.interval
    bad = np.flatnonzero((t < lo) | (t >= hi))
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"argument {t[i]!r} at atom {support.atoms[i]!r} is outside the domain "
            f"({lo}, {hi}) of the inverse derivative")
    return -normalization_residual(beta, lam, gen, support, L)


def beta_interval(lam: float, gen: DivergenceGenerator, L: np.ndarray) -> tuple[float, float]:
    """Open interval of beta keeping every atom's argument inside the domain."""
    lo, hi = gen.interval
    b_lo = -float(L.min()) - lam * hi if math.isfinite(hi) else -math.inf
    b_hi = -float(L.max()) - lam * lo if math.isfinite(lo) else math.inf
    return b_lo, b_hi


def _maximizer_log(gen: DivergenceGenerator, t: np.ndarray, iters: int = 64) -> np.ndarray:
    """log argmax_{x>0} (t x - f(x)) found by bisection on f'(e^u) = t.

    Works from f and f' only, so it is independent of the closed-form inverse.
    """
    lo, hi = gen.interval
    a = np.full_like(t, -745.0)
    b = np.full_like(t, 709.0)
    with np.errstate(all="ignore"):
        for _ in range(iters):
            m = 0.5 * (a + b)
            above = gen.fdot(np.exp(m)) > t
            b = np.where(above, m, b)
            a = np.where(above, a, m)
    u = 0.5 * (a + b)
    u = np.where(t <= lo, -np.inf, u)
    return np.where(t >= hi, np.inf, u)


def _envelope_slope_sign(beta: float, lam: float, gen: DivergenceGenerator,
                         support: ModelSupport, L: np.ndarray) -> float:
    """Sign of dG/dbeta = 1 - E_Q[argmax], via the envelope theorem."""
    u = _maximizer_log(gen, _t(beta, lam, L))
    if np.any(np.isposinf(u)):
        return -1.0
    if np.all(np.isneginf(u)):
        return 1.0
    m = float(logsumexp(_log_q(support) + u))
    return float(np.sign(-m))


@dataclass
class NormalizationDiagnostics:
    beta_root: float
    beta_dual: float
    residual: float
    bracket: tuple[float, float]
    root_iterates: list[float] = field(default_factory=list)
    dual_iterates: list[float] = field(default_factory=list)
    nonseparable: bool = False

    @property
    def agreement(self) -> float:
        return abs(self.beta_root - self.beta_dual)


def _initial_bracket(lam: float, gen: DivergenceGenerator, L: np.ndarray) -> tuple[float, float]:
    # at -Lmax - lam f'(1) every rnd >= 1, at -Lmin - lam f'(1) every rnd <= 1
    f1 = float(gen.fdot(1.0))
    left = -float(L.max()) - lam * f1
    right = -float(L.min()) - lam * f1
    b_lo, b_hi = beta_interval(lam, gen, L)
    return max(left, b_lo), min(right, b_hi)


def normalization_constant(lam: float, gen: DivergenceGenerator, support: ModelSupport, loss,
                           tol: float = DEFAULT_TOL) -> tuple[float, NormalizationDiagnostics]:
    """beta-hat with E_Q[fdot_inv(-(beta-hat + L)/lam)] = 1.

    Solved twice: by a bracketed root search on the normalisation residual,
    and by minimising the dual objective G (golden section, finished on the
    sign of dG/dbeta computed through the conjugate's maximiser).  The two
    must agree within ``10 * tol``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    L = loss_values(support, loss)
    if L.min() == L.max():
        beta = -float(L[0]) - lam * float(gen.fdot(1.0))
        diag = NormalizationDiagnostics(beta, beta, 0.0, (beta, beta), nonseparable=True)
        return beta, diag

    if classify_zero_limit(gen).finite and not _endpoint_mass(lam, gen, support, L) < 1.0:
        raise InfeasibleLambdaError(lam, feasibility(lam, gen, support, L).lambda_star)

    a, b = _initial_bracket(lam, gen, L)
    phi = lambda beta: _log_mass(beta, lam, gen, support, L)  # noqa: E731
    root = bracketed_root(phi, a, b, decreasing=True)
    beta_root = root.root

    G = lambda beta: dual_objective(beta, lam, gen, support, L)  # noqa: E731
    slope = lambda beta: _envelope_slope_sign(beta, lam, gen, support, L)  # noqa: E731
    q = support.weights

    def magnitude(beta):
        with np.errstate(all="ignore"):
            fs = np.abs(gen.conjugate(_t(beta, lam, L)))
        return abs(beta) + lam * float(np.dot(q, np.where(np.isfinite(fs), fs, 0.0)))

    dual = golden_section(G, a, b, slope_sign=slope, scale=magnitude)
    beta_dual = dual.argmin

    residual = math.expm1(phi(beta_root))
    diag = NormalizationDiagnostics(beta_root, beta_dual, residual, (a, b),
                                    root.iterates, dual.iterates)
    if abs(residual) >= tol and root.bracket[1] - root.bracket[0] > 8 * EPS * max(1.0, abs(beta_root)):
        raise InternalConsistencyError(f"root search stopped with residual {residual:.3e}")
    if diag.agreement > 10 * tol:
        raise InternalConsistencyError(
            f"root ({beta_root!r}) and dual minimiser ({beta_dual!r}) disagree by {diag.agreement:.3e}")
    return beta_root, diag


@dataclass(frozen=True, eq=False)
class Posterior:
    """Regularised solution on the atoms of the reference measure."""

    rnd: np.ndarray
    weights: np.ndarray
    lam: float
    n_of_lambda: float
    risk: float
    divergence: float
    log_rnd: np.ndarray
    nonseparable: bool = False
    diagnostics: Optional[NormalizationDiagnostics] = None

    @property
    def eta(self) -> float:
        return self.divergence

    @property
    def primal(self) -> float:
        return self.risk + self.lam * self.divergence


def posterior(lam: float, gen: DivergenceGenerator, support: ModelSupport, loss,
              tol: float = DEFAULT_TOL) -> Posterior:
    L = loss_values(support, loss)
    beta, diag = normalization_constant(lam, gen, support, L, tol)
    if diag.nonseparable:
        warnings.warn("empirical risk is constant on the support; solution is the reference measure",
                      NonseparableWarning, stacklevel=2)
        ones = np.ones(len(support))
        return Posterior(ones, support.weights.copy(), lam, beta, float(L[0]), 0.0,
                         np.zeros(len(support)), True, diag)
    t = _t(beta, lam, L)
    with np.errstate(all="ignore"):
        rnd = gen.fdot_inv(t)
        log_rnd = gen.log_fdot_inv(t)
    weights = rnd * support.weights
    risk = float(np.dot(weights, L))
    divergence = float(np.dot(support.weights, gen.f(rnd)))
    return Posterior(rnd, weights, lam, beta, risk, divergence, log_rnd, False, diag)


def dual_value(post: Posterior, gen: DivergenceGenerator, support: ModelSupport, loss) -> float:
    """-G(beta-hat), the optimal value of the dual maximisation."""
    return -dual_objective(post.n_of_lambda, post.lam, gen, support, loss)


def duality_gap(post: Posterior, gen: DivergenceGenerator, support: ModelSupport, loss) -> float:
    return abs(post.primal - dual_value(post, gen, support, loss))


@dataclass(frozen=True)
class FeasibilityReport:
    lam: float
    lambda_star: float
    boundary_included: bool
    admissible: bool
    beta_interval: tuple[float, float]


def _endpoint_rnd(lam: float, gen: DivergenceGenerator, L: np.ndarray) -> np.ndarray:
    a = gen.zero_limit
    return gen.fdot_inv_ext((L.max() - L) / lam + a)


def _endpoint_mass(lam: float, gen: DivergenceGenerator, support: ModelSupport, L: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        return float(np.dot(support.weights, _endpoint_rnd(lam, gen, L)))


def _lambda_star(gen: DivergenceGenerator, support: ModelSupport, L: np.ndarray, rtol: float) -> float:
    mass = lambda lam: _endpoint_mass(lam, gen, support, L) - 1.0  # noqa: E731
    hi = 1.0
    while mass(hi) >= 0:
        hi *= 2.0
    lo = hi / 2.0
    while mass(lo) < 0:
        lo /= 2.0
    res = bracketed_root(mass, lo, hi, decreasing=True, xtol=rtol * lo)
    return res.root


def feasibility(lam: float, gen: DivergenceGenerator, support: ModelSupport, loss,
                rtol: float = 1e-8) -> FeasibilityReport:
    """Admissibility of ``lam`` and the left end of the admissible range.

    With lim f'(0+) = -inf every positive factor is admissible.  With a
    finite limit ``a``, beta must stay below ``-max L - a lam``; ``lam`` is
    admissible iff the normalisation integral at that endpoint is below one,
    and lambda_star is where it equals one.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    L = loss_values(support, loss)
    interval = beta_interval(lam, gen, L)
    if not classify_zero_limit(gen).finite or L.min() == L.max():
        return FeasibilityReport(lam, 0.0, False, True, interval)
    lam_star = _lambda_star(gen, support, L, rtol)
    admissible = _endpoint_mass(lam, gen, support, L) < 1.0
    end_rnd = _endpoint_rnd(lam_star, gen, L)
    end_mass = float(np.dot(support.weights, end_rnd))
    included = bool(math.isfinite(end_mass) and abs(end_mass - 1.0) <= 1e-6 and np.all(end_rnd > 0))
    return FeasibilityReport(lam, lam_star, included, admissible, interval)


def tilted_measure(post: Posterior, gen: DivergenceGenerator, support: ModelSupport) -> np.ndarray:
    """Q reweighted by 1 / f''(dP/dQ), normalised."""
    w = support.weights / gen.fddot(post.rnd)
    return w / w.sum()


def normalization_derivative(lam: float, gen: DivergenceGenerator, support: ModelSupport, loss,
                             tol: float = DEFAULT_TOL) -> float:
    """dN/dlam = (N + R_z(P_tilted)) / lam."""
    L = loss_values(support, loss)
    if classify_zero_limit(gen).finite and not _endpoint_mass(lam, gen, support, L) < 1.0:
        raise BoundaryError(f"lambda={lam!r} is not in the interior of the admissible set")
    post = posterior(lam, gen, support, L, tol)
    tilted = tilted_measure(post, gen, support)
    return (post.n_of_lambda + float(np.dot(tilted, L))) / lam


def normalization_derivative_fd(lam: float, gen: DivergenceGenerator, support: ModelSupport, loss,
                                rel_step: float = 1e-5) -> float:
    """Central difference of N with step ``rel_step * lam``."""
    L = loss_values(support, loss)
    h = rel_step * lam
    up, _ = normalization_constant(lam + h, gen, support, L)
    down, _ = normalization_constant(lam - h, gen, support, L)
    return (up - down) / (2 * h)


@dataclass(frozen=True)
class SweepRecord:
    lam: float
    admissible: bool
    N: float = math.nan
    risk: float = math.nan
    divergence: float = math.nan
    eta: float = math.nan
    primal: float = math.nan
    dual: float = math.nan
    gap: float = math.nan
    dN_dlambda: float = math.nan


def sweep(lambdas: Sequence[float], gen: DivergenceGenerator, support: ModelSupport, loss,
          tol: float = DEFAULT_TOL) -> list[SweepRecord]:
    lambdas = [float(v) for v in lambdas]
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda grid must be sorted ascending")
    L = loss_values(support, loss)
    records = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonseparableWarning)
        for lam in lambdas:
            if not feasibility(lam, gen, support, L).admissible:
                records.append(SweepRecord(lam, False))
                continue
            post = posterior(lam, gen, support, L, tol)
            dual = dual_value(post, gen, support, L)
            tilted = tilted_measure(post, gen, support)
            dn = (post.n_of_lambda + float(np.dot(tilted, L))) / lam
            records.append(SweepRecord(lam, True, post.n_of_lambda, post.risk, post.divergence,
                                       post.eta, post.primal, dual, abs(post.primal - dual), dn))
    return records


def n_monotone(records: Iterable[SweepRecord], tol: float = 1e-9) -> bool:
    """N non-decreasing over admissible rows (differences below ``tol`` ignored)."""
    values = [r.N for r in records if r.admissible]
    return all(b - a > -tol for a, b in zip(values, values[1:]))


def n_direction(records: Iterable[SweepRecord], tol: float = 1e-9) -> str:
    """Observed direction of N over admissible rows.

    One of ``increasing``, ``decreasing``, ``constant`` or ``mixed``; steps
    smaller than ``tol`` count as flat.  The direction depends on the
    generator (its value of f'(1) in particular), not only on the data.
    """
    values = [r.N for r in records if r.admissible]
    steps = [b - a for a, b in zip(values, values[1:])]
    up = any(d > tol for d in steps)
    down = any(d < -tol for d in steps)
    if up and down:
        return "mixed"
    return "increasing" if up else "decreasing" if down else "constant"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.17g}"


def write_sweep_csv(records: Iterable[SweepRecord], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        writer.writerow([_fmt(r.lam), _fmt(r.admissible), _fmt(r.N), _fmt(r.risk),
                         _fmt(r.divergence), _fmt(r.eta), _fmt(r.primal), _fmt(r.dual),
                         _fmt(r.gap), _fmt(r.dN_dlambda)])
