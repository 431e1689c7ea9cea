"""Reference measure Q as weighted atoms, and loss geometry on its support."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

__all__ = [
    "PRUNE_BELOW",
    "LossTable",
    "ModelSupport",
    "essential_extremes",
    "expectation",
    "is_separable",
    "load_support_csv",
    "rashomon_mass",
]

PRUNE_BELOW = 1e-14


@dataclass(frozen=True, eq=False)
class ModelSupport:
    """Probability measure on finitely many atoms.

    Use the ``finite``/``gaussian``/``interval`` constructors; they drop atoms
    with weight below ``PRUNE_BELOW`` and renormalise.  ``source_index`` maps
    each kept atom back to its position in the caller's original list, so
    arrays given over the original atoms can be realigned with ``align``.
    """

    atoms: tuple
    weights: np.ndarray
    kind: str = "finite"
    source_index: Optional[np.ndarray] = None
    n_source: int = 0

    @classmethod
    def finite(cls, weights: Sequence[float], atoms: Optional[Sequence[Any]] = None,
               kind: str = "finite") -> "ModelSupport":
        w = np.asarray(weights, dtype=float).ravel()
        if atoms is None:
            atoms = list(range(len(w)))
        atoms = list(atoms)
        if len(atoms) != len(w):
            raise ValueError(f"{len(atoms)} atoms but {len(w)} weights")
        if w.size == 0:
            raise ValueError("support needs at least one atom")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        keep = np.flatnonzero(w >= PRUNE_BELOW)
        if keep.size == 0:
            raise ValueError("all weights pruned; support is empty")
        kept = w[keep]
        kept = kept / kept.sum()
        kept.setflags(write=False)
        keep.setflags(write=False)
        return cls(tuple(atoms[i] for i in keep), kept, kind, keep, len(w))

    @classmethod
    def uniform(cls, n: int) -> "ModelSupport":
        return cls.finite(np.full(n, 1.0 / n))

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0, nodes: int = 64) -> "ModelSupport":
        """Gauss-Hermite nodes for N(mean, std^2)."""
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
        return cls.finite(w / w.sum(), [float(v) for v in mean + std * x],
                          kind=f"quadrature(gauss_hermite,{nodes})")

    @classmethod
    def interval(cls, a: float, b: float, nodes: int = 64) -> "ModelSupport":
        """Gauss-Legendre nodes for the uniform law on [a, b]."""
        if not b > a:
            raise ValueError("interval needs a < b")
        x, w = np.polynomial.legendre.leggauss(nodes)
        return cls.finite(w / w.sum(), [float(v) for v in 0.5 * (a + b) + 0.5 * (b - a) * x],
                          kind=f"quadrature(gauss_legendre,{nodes})")

    def __len__(self) -> int:
        return len(self.atoms)

    def align(self, values) -> np.ndarray:
        """Return ``values`` indexed by kept atoms (accepts pre-pruning length)."""
        v = np.asarray(values, dtype=float).ravel()
        if v.size == len(self.atoms):
            return v
        if self.source_index is not None and v.size == self.n_source:
            return v[self.source_index]
        raise ValueError(f"expected {len(self.atoms)} values (or {self.n_source} before pruning), got {v.size}")


@dataclass(frozen=True, eq=False)
class LossTable:
    """Empirical risk of each support atom for one dataset."""

    values: np.ndarray
    dataset_id: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("loss values must be finite")
        if np.any(v < 0):
            raise ValueError("loss values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def for_support(cls, support: ModelSupport, values, dataset_id: Optional[str] = None) -> "LossTable":
        return cls(support.align(values), dataset_id)

    def __len__(self) -> int:
        return self.values.size


def loss_values(support: ModelSupport, loss) -> np.ndarray:
    """Loss array aligned with ``support`` from a LossTable or raw sequence."""
    if isinstance(loss, LossTable):
        if len(loss) != len(support):
            raise ValueError(f"loss table has {len(loss)} entries, support has {len(support)} atoms")
        return loss.values
    return LossTable.for_support(support, loss).values


def expectation(support: ModelSupport, values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size != len(support):
        raise ValueError(f"expected {len(support)} values, got {v.size}")
    return float(np.dot(support.weights, v))


def essential_extremes(support: ModelSupport, loss) -> tuple[float, float]:
    """(delta_star, sup_loss): min and max loss over the support."""
    v = loss_values(support, loss)
    return float(v.min()), float(v.max())


def rashomon_mass(support: ModelSupport, loss, delta: float) -> float:
    """Q-mass of the models whose loss is at most ``delta``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    v = loss_values(support, loss)
    return float(min(1.0, support.weights[v <= delta].sum()))


def is_separable(support: ModelSupport, loss) -> bool:
    lo, hi = essential_extremes(support, loss)
    return lo < hi


def load_support_csv(path: str | Path, require_loss: bool = True) -> tuple[ModelSupport, Optional[LossTable]]:
    """Read ``atom_id,weight,loss`` rows (header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        need = ["atom_id", "weight"] + (["loss"] if require_loss else [])
        missing = [c for c in need if c not in fields]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        ids, weights, losses = [], [], []
        for row in reader:
            ids.append(row["atom_id"].strip())
            weights.append(float(row["weight"]))
            if "loss" in fields and row.get("loss") not in (None, ""):
                losses.append(float(row["loss"]))
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate atom_id")
    total = math.fsum(weights)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"{path}: weights sum to {total!r}, not 1")
    support = ModelSupport.finite(weights, ids)
    table = None
    if "loss" in fields and losses:
        if len(losses) != len(ids):
            raise ValueError(f"{path}: loss column incomplete")
        table = LossTable.for_support(support, losses)
    elif require_loss:
        raise ValueError(f"{path}: no loss values")
    return support, table
