"""Datasets, losses, finite data-generating laws and tabulated algorithms."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .model_space import LossTable, ModelSupport

__all__ = [
    "MAX_ENUMERATED",
    "DataGeneratingLaw",
    "LabeledDataset",
    "LossSpec",
    "StochasticAlgorithm",
    "empirical_risk",
    "enumerate_law",
    "iid_product_law",
    "load_algorithm_csv",
    "load_law_csv",
    "load_loss_csv",
    "loss_table",
    "make_loss_spec",
    "threshold_predictor",
    "linear_predictor",
]

MAX_ENUMERATED = 10**6


@dataclass(frozen=True)
class LabeledDataset:
    pairs: tuple[tuple[tuple[float, ...], float], ...]
    dataset_id: Optional[str] = None

    def __post_init__(self):
        pairs = tuple((tuple(float(v) for v in np.atleast_1d(x)), float(y)) for x, y in self.pairs)
        if not pairs:
            raise ValueError("dataset needs at least one labeled pair")
        for x, y in pairs:
            if not (all(math.isfinite(v) for v in x) and math.isfinite(y)):
                raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_arrays(cls, patterns, labels, dataset_id: Optional[str] = None) -> "LabeledDataset":
        return cls(tuple(zip(patterns, labels)), dataset_id)

    @property
    def n(self) -> int:
        return len(self.pairs)


_LOSSES: dict[str, Callable[[float, float], float]] = {
    "zero_one": lambda yhat, y: 0.0 if yhat == y else 1.0,
    "squared": lambda yhat, y: (yhat - y) ** 2,
    "absolute": lambda yhat, y: abs(yhat - y),
}


@dataclass(frozen=True)
class LossSpec:
    """A predictor h(model, pattern) paired with a per-pair loss l(yhat, y)."""

    predictor: Callable[[Any, tuple[float, ...]], float]
    loss: Callable[[float, float], float]
    name: str = "custom"


def make_loss_spec(name: str, predictor: Callable[[Any, tuple[float, ...]], float]) -> LossSpec:
    if name not in _LOSSES:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(_LOSSES)}")
    return LossSpec(predictor, _LOSSES[name], name)


def threshold_predictor(model, x) -> float:
    """Classifier 1[x_0 >= model] for scalar thresholds."""
    return 1.0 if x[0] >= float(model) else 0.0


def linear_predictor(model, x) -> float:
    return float(np.dot(np.atleast_1d(np.asarray(model, dtype=float)), np.asarray(x, dtype=float)))


def empirical_risk(model, dataset: LabeledDataset, spec: LossSpec) -> float:
    total = 0.0
    for x, y in dataset.pairs:
        yhat = float(spec.predictor(model, x))
        if not math.isfinite(yhat):
            raise ValueError(f"non-finite prediction for model {model!r} at pattern {x}")
        total += spec.loss(yhat, y)
    return total / dataset.n


def loss_table(support: ModelSupport, dataset: LabeledDataset, spec: LossSpec) -> LossTable:
    return LossTable([empirical_risk(a, dataset, spec) for a in support.atoms], dataset.dataset_id)


@dataclass(frozen=True, eq=False)
class DataGeneratingLaw:
    """Finite law over datasets.

    ``datasets`` may hold LabeledDataset objects or be left as ``None`` when
    only per-dataset loss tables are available (e.g. loaded from CSV).
    """

    ids: tuple[str, ...]
    probabilities: np.ndarray
    datasets: Optional[tuple[LabeledDataset, ...]] = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != p.size or p.size == 0:
            raise ValueError("law needs one probability per dataset id")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate dataset ids")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        if self.datasets is not None:
            if len(self.datasets) != p.size:
                raise ValueError("datasets and probabilities differ in length")
            if len({d.n for d in self.datasets}) != 1:
                raise ValueError("all datasets must share the same size n")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_datasets(cls, datasets: Sequence[LabeledDataset], probabilities) -> "DataGeneratingLaw":
        ids = [d.dataset_id if d.dataset_id is not None else f"z{i}" for i, d in enumerate(datasets)]
        return cls(tuple(ids), probabilities, tuple(datasets))

    def __len__(self) -> int:
        return len(self.ids)

    def loss_tables(self, support: ModelSupport, spec: LossSpec) -> list[LossTable]:
        if self.datasets is None:
            raise ValueError("law carries no raw datasets; supply loss tables instead")
        return [loss_table(support, d, spec) for d in self.datasets]


def enumerate_law(law: DataGeneratingLaw) -> Iterator[tuple[Any, float]]:
    """Yield (dataset or id, probability) once per dataset, in law order."""
    items = law.datasets if law.datasets is not None else law.ids
    for d, p in zip(items, law.probabilities):
        yield d, float(p)


def iid_product_law(pair_law: Sequence[tuple[tuple[Sequence[float], float], float]], n: int,
                    cap: int = MAX_ENUMERATED) -> DataGeneratingLaw:
    """All n-tuples of i.i.d. labeled pairs with their product probabilities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    count = len(pair_law) ** n
    if count > cap:
        raise ValueError(f"product law would enumerate {count} datasets (cap {cap})")
    datasets, probs = [], []
    for k, combo in enumerate(itertools.product(range(len(pair_law)), repeat=n)):
        datasets.append(LabeledDataset(tuple(pair_law[i][0] for i in combo), f"z{k}"))
        probs.append(math.prod(pair_law[i][1] for i in combo))
    probs = np.asarray(probs)
    return DataGeneratingLaw.from_datasets(datasets, probs / math.fsum(probs))


@dataclass(frozen=True, eq=False)
class StochasticAlgorithm:
    """Extensional algorithm: dataset id -> distribution over support atoms."""

    conditionals: Mapping[str, np.ndarray]

    def __post_init__(self):
        clean = {}
        for key, w in self.conditionals.items():
            w = np.asarray(w, dtype=float).ravel()
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"conditional for {key!r} has negative or non-finite mass")
            if abs(math.fsum(w) - 1.0) > 1e-9:
                raise ValueError(f"conditional for {key!r} sums to {math.fsum(w)!r}")
            w.setflags(write=False)
            clean[str(key)] = w
        object.__setattr__(self, "conditionals", clean)

    @classmethod
    def data_independent(cls, law: DataGeneratingLaw, weights) -> "StochasticAlgorithm":
        return cls({i: np.asarray(weights, dtype=float) for i in law.ids})

    def __getitem__(self, dataset_id: str) -> np.ndarray:
        return self.conditionals[dataset_id]


def _read_rows(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return [{c: row[c].strip() for c in columns} for row in reader]


def load_law_csv(path: str | Path) -> DataGeneratingLaw:
    """Read ``dataset_id,prob`` rows."""
    rows = _read_rows(path, ["dataset_id", "prob"])
    return DataGeneratingLaw(tuple(r["dataset_id"] for r in rows), [float(r["prob"]) for r in rows])


def _by_atom(path, rows, support: ModelSupport, value_col: str, key_col: str) -> dict[str, np.ndarray]:
    index = {str(a): i for i, a in enumerate(support.atoms)}
    out: dict[str, np.ndarray] = {}
    for r in rows:
        atom = r["atom_id"]
        if atom not in index:
            raise ValueError(f"{path}: atom {atom!r} is not in the support")
        vec = out.setdefault(r[key_col], np.zeros(len(support)))
        vec[index[atom]] += float(r[value_col])
    return out


def load_algorithm_csv(path: str | Path, support: ModelSupport) -> StochasticAlgorithm:
    """Read ``dataset_id,atom_id,mass`` rows; unlisted atoms get mass 0."""
    rows = _read_rows(path, ["dataset_id", "atom_id", "mass"])
    return StochasticAlgorithm(_by_atom(path, rows, support, "mass", "dataset_id"))


def load_loss_csv(path: str | Path, support: ModelSupport, law: DataGeneratingLaw) -> list[LossTable]:
    """Read ``dataset_id,atom_id,loss`` rows into tables in law order."""
    rows = _read_rows(path, ["dataset_id", "atom_id", "loss"])
    tables = _by_atom(path, rows, support, "loss", "dataset_id")
    seen: dict[str, set[str]] = {}
    for r in rows:
        atoms = seen.setdefault(r["dataset_id"], set())
        if r["atom_id"] in atoms:
            raise ValueError(f"{path}: duplicate loss for dataset {r['dataset_id']!r}, atom {r['atom_id']!r}")
        atoms.add(r["atom_id"])
    out = []
    for i in law.ids:
        if len(seen.get(i, ())) != len(support):
            raise ValueError(f"{path}: dataset {i!r} needs exactly one loss per atom")
        out.append(LossTable(tables[i], i))
    return out
