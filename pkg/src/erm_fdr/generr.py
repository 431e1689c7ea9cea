"""Exact generalization error on finite data-generating laws.

Every route here is a finite sum.  ``direct`` enumerates training and test
datasets independently; the other routes go through the regularised
posterior of each dataset and the conjugate of the generator.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .divergence import DivergenceGenerator
from .learning import DataGeneratingLaw, LossSpec, StochasticAlgorithm
from .model_space import LossTable, ModelSupport, loss_values
from .solver import InternalConsistencyError, NonseparableWarning, Posterior, posterior

__all__ = [
    "ROUTE_TOL",
    "AssumptionError",
    "AssumptionWarning",
    "DatasetRow",
    "GenErrReport",
    "MarginalLaw",
    "fdr_algorithm",
    "gap",
    "gap_via_conjugate",
    "generalization_error_direct",
    "generalization_error_fdr",
    "generalization_error_report",
    "generalization_error_theorem5",
    "gibbs_generalization_error",
    "marginal_model_law",
    "write_generr_csv",
]

ROUTE_TOL = 1e-9


class AssumptionWarning(UserWarning):
    """The marginal model law misses part of the reference support."""


class AssumptionError(ValueError):
    pass


def gap(loss, p1, p2) -> float:
    """R_z(P1) - R_z(P2) for distributions over the same atoms."""
    L = np.asarray(loss.values if isinstance(loss, LossTable) else loss, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if not (p1.shape == p2.shape == L.shape):
        raise ValueError(f"unaligned distributions: {p1.shape}, {p2.shape}, loss {L.shape}")
    return float(np.dot(p1, L) - np.dot(p2, L))


def _tables(law: DataGeneratingLaw, support: ModelSupport, losses) -> list[np.ndarray]:
    if isinstance(losses, LossSpec):
        return [t.values for t in law.loss_tables(support, losses)]
    if len(losses) != len(law):
        raise ValueError(f"{len(losses)} loss tables for {len(law)} datasets")
    return [loss_values(support, t) for t in losses]


@dataclass(frozen=True, eq=False)
class MarginalLaw:
    weights: np.ndarray
    missing: tuple[int, ...]

    @property
    def mutually_continuous(self) -> bool:
        return not self.missing


def marginal_model_law(alg: StochasticAlgorithm, law: DataGeneratingLaw) -> MarginalLaw:
    """Mixture of the algorithm's conditionals under the data law."""
    mix = sum(float(p) * alg[i] for i, p in zip(law.ids, law.probabilities))
    mix = np.asarray(mix, dtype=float)
    missing = tuple(int(i) for i in np.flatnonzero(mix <= 0))
    if missing:
        warnings.warn(f"marginal model law puts no mass on atoms {missing}; "
                      "it is not mutually absolutely continuous with the reference",
                      AssumptionWarning, stacklevel=2)
    return MarginalLaw(mix, missing)


@dataclass(frozen=True)
class DatasetRow:
    dataset_id: str
    N: float
    risk_train: float
    risk_marginal: float
    gap: float


def generalization_error_direct(alg: StochasticAlgorithm, law: DataGeneratingLaw,
                                support: ModelSupport, losses) -> tuple[float, list[DatasetRow]]:
    """Double sum over independent (training, test) datasets.

    Also evaluates the single-sum form E_z[R_z(P_marginal) - R_z(P_z)] and
    raises if the two differ by more than 1e-12.
    """
    tables = _tables(law, support, losses)
    probs = [float(p) for p in law.probabilities]
    terms = []
    for z, pz, z_table in zip(law.ids, probs, tables):
        cond = alg[z]
        train = float(np.dot(cond, z_table))
        for u_table, pu in zip(tables, probs):
            # (z, u) and (u, z) terms cancel bit-exactly for data-independent algorithms
            terms.append((pz * pu) * (float(np.dot(cond, u_table)) - train))
    total = math.fsum(terms)

    marginal = marginal_model_law(alg, law).weights
    rows = []
    single = 0.0
    for z, pz, L in zip(law.ids, probs, tables):
        r_train = float(np.dot(alg[z], L))
        r_marg = float(np.dot(marginal, L))
        rows.append(DatasetRow(z, math.nan, r_train, r_marg, r_marg - r_train))
        single += pz * (r_marg - r_train)
    if abs(single - total) > 1e-12:
        raise InternalConsistencyError(
            f"double-sum ({total!r}) and marginal decomposition ({single!r}) disagree")
    return total, rows


def gap_via_conjugate(p, post: Posterior, gen: DivergenceGenerator, support: ModelSupport,
                      loss) -> float:
    """R_z(P) - R_z(P*) written through f(dP*/dQ) + f*(-(L + N)/lam)."""
    L = loss_values(support, loss)
    p = np.asarray(p, dtype=float)
    t = -(L + post.n_of_lambda) / post.lam
    kernel = gen.f(post.rnd) + gen.conjugate(t)
    ratio = p / post.weights
    return post.lam * float(np.dot(support.weights, (1.0 - ratio) * kernel))


def _posteriors(lam: float, gen: DivergenceGenerator, support: ModelSupport,
                tables: Sequence[np.ndarray]) -> list[Posterior]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonseparableWarning)
        return [posterior(lam, gen, support, L) for L in tables]


def fdr_algorithm(lam: float, gen: DivergenceGenerator, law: DataGeneratingLaw,
                  support: ModelSupport, losses) -> StochasticAlgorithm:
    """The regularised posterior of every dataset, as a tabulated algorithm."""
    posts = _posteriors(lam, gen, support, _tables(law, support, losses))
    return StochasticAlgorithm({z: p.weights for z, p in zip(law.ids, posts)})


def _require_marginal(alg: StochasticAlgorithm, law: DataGeneratingLaw) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AssumptionWarning)
        marg = marginal_model_law(alg, law)
    if not marg.mutually_continuous:
        raise AssumptionError(f"marginal model law misses support atoms {marg.missing}")
    return marg.weights


def generalization_error_theorem5(alg: StochasticAlgorithm, law: DataGeneratingLaw,
                                  gen: DivergenceGenerator, lam: float, support: ModelSupport,
                                  losses) -> float:
    """Generalization error of any tabulated algorithm through the conjugate.

    For each dataset the regularised posterior P*_z at ``lam`` serves as the
    pivot: lam * sum_z P(z) sum_atoms q [f(rnd_z) + f*(-(L_z + N_z)/lam)]
    [dP_z/dP*_z - dP_marginal/dP*_z].
    """
    tables = _tables(law, support, losses)
    marginal = _require_marginal(alg, law)
    posts = _posteriors(lam, gen, support, tables)
    q = support.weights
    total = 0.0
    for z, pz, L, post in zip(law.ids, law.probabilities, tables, posts):
        kernel = gen.f(post.rnd) + gen.conjugate(-(L + post.n_of_lambda) / lam)
        diff = (alg[z] - marginal) / post.weights
        total += float(pz) * float(np.dot(q, kernel * diff))
    return lam * total


def generalization_error_fdr(lam: float, gen: DivergenceGenerator, law: DataGeneratingLaw,
                             support: ModelSupport, losses) -> float:
    """Generalization error of the regularised posterior family via f'(dP*/dQ)."""
    tables = _tables(law, support, losses)
    posts = _posteriors(lam, gen, support, tables)
    marginal = sum(float(p) * post.weights for p, post in zip(law.probabilities, posts))
    total = 0.0
    for pz, post in zip(law.probabilities, posts):
        score = gen.fdot(post.rnd)
        total += float(pz) * (float(np.dot(post.weights, score)) - float(np.dot(marginal, score)))
    return lam * total


def gibbs_generalization_error(lam: float, law: DataGeneratingLaw, support: ModelSupport,
                               losses, gen: Optional[DivergenceGenerator] = None) -> float:
    """Log-density form for the relative-entropy (Gibbs) posterior."""
    if gen is not None and gen.name != "kl":
        raise ValueError(f"Gibbs form needs the kl generator, got {gen}")
    from .divergence import make_generator

    kl = make_generator("kl")
    tables = _tables(law, support, losses)
    posts = _posteriors(lam, kl, support, tables)
    marginal = sum(float(p) * post.weights for p, post in zip(law.probabilities, posts))
    total = 0.0
    for pz, post in zip(law.probabilities, posts):
        total += float(pz) * (float(np.dot(post.weights, post.log_rnd))
                              - float(np.dot(marginal, post.log_rnd)))
    return lam * total


@dataclass(frozen=True)
class GenErrReport:
    direct: float
    via_theorem5: float
    via_theorem6: Optional[float]
    gibbs_form: Optional[float]
    rows: tuple[DatasetRow, ...]

    def routes(self) -> dict[str, float]:
        return {
            "direct": self.direct,
            "theorem5": self.via_theorem5,
            "theorem6": math.nan if self.via_theorem6 is None else self.via_theorem6,
            "gibbs": math.nan if self.gibbs_form is None else self.gibbs_form,
        }

    @property
    def spread(self) -> float:
        vals = [v for v in self.routes().values() if not math.isnan(v)]
        return max(vals) - min(vals)

    @property
    def consistent(self) -> bool:
        return self.spread <= ROUTE_TOL


def generalization_error_report(lam: float, gen: DivergenceGenerator, law: DataGeneratingLaw,
                                support: ModelSupport, losses,
                                alg: Optional[StochasticAlgorithm] = None) -> GenErrReport:
    """All applicable routes for ``alg`` (default: the regularised posterior family)."""
    tables = _tables(law, support, losses)
    is_fdr = alg is None
    if is_fdr:
        alg = fdr_algorithm(lam, gen, law, support, tables)
    direct, rows = generalization_error_direct(alg, law, support, tables)
    via5 = generalization_error_theorem5(alg, law, gen, lam, support, tables)
    via6 = generalization_error_fdr(lam, gen, law, support, tables) if is_fdr else None
    gibbs = gibbs_generalization_error(lam, law, support, tables) if is_fdr and gen.name == "kl" else None
    posts = _posteriors(lam, gen, support, tables)
    rows = tuple(DatasetRow(r.dataset_id, p.n_of_lambda, r.risk_train, r.risk_marginal, r.gap)
                 for r, p in zip(rows, posts))
    return GenErrReport(direct, via5, via6, gibbs, rows)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.17g}"


def write_generr_csv(report: GenErrReport, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["route", "value"])
    for name, value in report.routes().items():
        writer.writerow([name, _fmt(value)])
    writer.writerow(["dataset_id", "N", "risk_train", "risk_marginal", "gap"])
    for r in report.rows:
        writer.writerow([r.dataset_id, _fmt(r.N), _fmt(r.risk_train), _fmt(r.risk_marginal), _fmt(r.gap)])
