"""Expression-matrix ingestion, z-scoring, SMOTE balancing and stratified folds."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataFormatError, InsufficientSamplesError, MissingGeneError

logger = logging.getLogger(__name__)

PAM50_SUBTYPES = ("Basal", "Her2", "LumA", "LumB")


@dataclass(frozen=True)
class ExpressionMatrix:
    values: np.ndarray
    gene_names: tuple[str, ...]
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        genes = tuple(str(g) for g in self.gene_names)
        samples = tuple(str(s) for s in self.sample_ids)
        if values.ndim != 2 or values.shape != (len(samples), len(genes)):
            raise DataFormatError(
                f"values shape {values.shape} does not match {len(samples)} samples x {len(genes)} genes")
        _check_unique(genes, "gene name")
        _check_unique(samples, "sample id")
        if not np.all(np.isfinite(values)):
            raise DataFormatError("expression values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gene_names", genes)
        object.__setattr__(self, "sample_ids", samples)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def gene_index(self, genes: Sequence[str]) -> np.ndarray:
        lookup = {g: i for i, g in enumerate(self.gene_names)}
        missing = [g for g in genes if g not in lookup]
        if missing:
            raise MissingGeneError(missing)
        return np.array([lookup[g] for g in genes], dtype=int)

    def select_genes(self, genes: Sequence[str]) -> "ExpressionMatrix":
        idx = self.gene_index(genes)
        return ExpressionMatrix(self.values[:, idx], tuple(genes), self.sample_ids)

    def take(self, rows) -> "ExpressionMatrix":
        rows = np.asarray(rows, dtype=int)
        return ExpressionMatrix(self.values[rows], self.gene_names,
                                tuple(self.sample_ids[i] for i in rows))

    def with_values(self, values) -> "ExpressionMatrix":
        return ExpressionMatrix(values, self.gene_names, self.sample_ids)


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        names = tuple(str(c) for c in self.class_names)
        if labels.ndim != 1:
            raise DataFormatError("labels must be one-dimensional")
        if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
            raise DataFormatError(f"labels must lie in 0..{len(names) - 1}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, rows) -> "LabelVector":
        return LabelVector(self.labels[np.asarray(rows, dtype=int)], self.class_names)


def _check_unique(names, what):
    seen = set()
    for name in names:
        if name in seen:
            raise DataFormatError(f"duplicate {what}: {name!r}")
        seen.add(name)


def _delimiter(path: Path, delimiter: str | None) -> str:
    if delimiter is not None:
        return delimiter
    suffixes = [s.lower() for s in path.suffixes]
    return "\t" if (".tsv" in suffixes or ".txt" in suffixes) else ","


def read_expression(path, delimiter: str | None = None) -> ExpressionMatrix:
    """Read a samples x genes table: header row of gene names, first column sample ids."""
    path = Path(path)
    sep = _delimiter(path, delimiter)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=sep)
        header = next(reader, None)
        samples = [row[0].strip() for row in reader if row]
    if not header or len(header) < 2:
        raise DataFormatError(f"{path}: expected a header row with gene names")
    genes = [h.strip() for h in header[1:]]
    _check_unique(genes, "gene name")
    df = pd.read_csv(path, sep=sep, index_col=0, header=0)
    _check_unique(samples, "sample id")
    numeric = None
    if all(pd.api.types.is_numeric_dtype(t) for t in df.dtypes):
        numeric = df.to_numpy(dtype=float)
        if not np.all(np.isfinite(numeric)):
            numeric = None
    if numeric is None:
        # slow path only to locate the offending cell
        raw = pd.read_csv(path, sep=sep, index_col=0, header=0, dtype=str,
                          keep_default_na=False).to_numpy()
        coerced = pd.DataFrame(raw).apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
        r, c = np.argwhere(~np.isfinite(coerced))[0]
        # line: +1 for header, +1 for 1-based; column: +1 for sample ids, +1 for 1-based
        raise DataFormatError(
            f"{path}: non-numeric value {raw[r, c]!r} at line {r + 2}, column {c + 2} "
            f"(sample {samples[r]!r}, gene {genes[c]!r})")
    return ExpressionMatrix(numeric, tuple(genes), tuple(samples))


def read_labels(path, delimiter: str | None = None) -> dict[str, str]:
    """Read ``sample_id,label`` rows (a header row is detected and skipped)."""
    path = Path(path)
    sep = _delimiter(path, delimiter)
    mapping = {}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=sep) if r and any(c.strip() for c in r)]
    if rows and [c.strip().lower() for c in rows[0][:2]] in (["sample_id", "label"], ["sample", "label"],
                                                              ["sample_id", "class"], ["sample", "subtype"]):
        rows = rows[1:]
    for line, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise DataFormatError(f"{path}: row {line} needs sample id and label")
        sid, label = row[0].strip(), row[1].strip()
        if sid in mapping:
            raise DataFormatError(f"{path}: duplicate sample id {sid!r}")
        mapping[sid] = label
    return mapping


def _class_order(names, class_names):
    if class_names is not None:
        return tuple(class_names)
    present = set(names)
    if present <= set(PAM50_SUBTYPES):
        return tuple(c for c in PAM50_SUBTYPES if c in present)
    return tuple(sorted(present))


def load_expression(path, labels_path, delimiter: str | None = None,
                    class_names: Sequence[str] | None = None) -> tuple[ExpressionMatrix, LabelVector]:
    """Load an expression table and its label file.

    Samples without a label (or with a label outside ``class_names``) are
    dropped; the count is logged. Row order follows the expression file.
    """
    X = read_expression(path, delimiter)
    mapping = read_labels(labels_path, delimiter)
    order = _class_order([mapping[s] for s in X.sample_ids if s in mapping], class_names)
    code = {c: i for i, c in enumerate(order)}
    keep = [i for i, s in enumerate(X.sample_ids) if mapping.get(s) in code]
    dropped = len(X.sample_ids) - len(keep)
    if dropped:
        logger.warning("dropped %d sample(s) without a usable label", dropped)
    if not keep:
        raise DataFormatError("no sample in the expression file has a label")
    X = X.take(keep)
    y = LabelVector(np.array([code[mapping[s]] for s in X.sample_ids]), order)
    return X, y


def write_expression(X: ExpressionMatrix, path, delimiter: str | None = None) -> None:
    path = Path(path)
    sep = _delimiter(path, delimiter)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=sep, lineterminator="\n")
        w.writerow(["sample_id", *X.gene_names])
        for sid, row in zip(X.sample_ids, X.values):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def write_labels(sample_ids, y: LabelVector, path, delimiter: str | None = None) -> None:
    path = Path(path)
    sep = _delimiter(path, delimiter)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=sep, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, lab in zip(sample_ids, y.labels):
            w.writerow([sid, y.class_names[lab]])


# --------------------------------------------------------------------------
# z-score normalization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data) -> "NormalizationStats":
        return cls(np.asarray(data["mean"], dtype=float), np.asarray(data["std"], dtype=float))


def zscore_fit(X) -> NormalizationStats:
    """Per-gene mean and population standard deviation."""
    v = np.asarray(getattr(X, "values", X), dtype=float)
    mean = v.mean(axis=0)
    std = v.std(axis=0)
    # exact-constant columns can come out with std ~1e-17 from rounding
    std = np.where(np.all(v == v[:1], axis=0), 0.0, std)
    return NormalizationStats(mean, std)


def zscore_apply(X, stats: NormalizationStats):
    v = np.asarray(getattr(X, "values", X), dtype=float)
    if v.shape[-1] != stats.mean.shape[0]:
        raise DataFormatError(f"matrix has {v.shape[-1]} genes, stats describe {stats.mean.shape[0]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    out = np.where(stats.std > 0, (v - stats.mean) / safe, 0.0)
    return X.with_values(out) if isinstance(X, ExpressionMatrix) else out


# --------------------------------------------------------------------------
# SMOTE
# --------------------------------------------------------------------------

def interpolate(a, b, lam):
    """Point ``a + lam * (b - a)`` on the segment from ``a`` to ``b``."""
    a = np.asarray(a, dtype=float)
    return a + lam * (np.asarray(b, dtype=float) - a)


def _nearest_neighbors(Xc: np.ndarray, k: int) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Xc, Xc)
    d2 = sq[:, None] + sq[None, :] - 2.0 * Xc @ Xc.T
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_balance(X, y, k_neighbors: int = 5, seed: int = 0, return_info: bool = False):
    """Oversample every class up to the majority count.

    Each synthetic row is ``a + lam * (b - a)`` with ``a`` drawn uniformly
    from the class, ``b`` one of its ``k`` nearest same-class neighbours and
    ``lam ~ U[0, 1)``. Originals come first, unchanged. With
    ``return_info`` a third value lists ``(class, a_index, b_index, lam)``
    per synthetic row, indices into the input rows.
    """
    values = np.asarray(getattr(X, "values", X), dtype=float)
    labels = np.asarray(getattr(y, "labels", y), dtype=int)
    if values.shape[0] != labels.shape[0]:
        raise DataFormatError("X and y disagree on sample count")
    if k_neighbors < 1:
        raise ConfigError("k_neighbors must be >= 1")
    classes, counts = np.unique(labels, return_counts=True)
    target = counts.max()
    rng = np.random.default_rng(seed)
    new_rows, new_labels, info = [], [], []
    for c, n in zip(classes, counts):
        need = target - n
        if need == 0:
            continue
        if n < 2:
            raise InsufficientSamplesError(f"class {c} has {n} sample; SMOTE needs at least 2")
        members = np.flatnonzero(labels == c)
        Xc = values[members]
        k = min(k_neighbors, n - 1)
        nn = _nearest_neighbors(Xc, k)
        base = rng.integers(0, n, size=need)
        pick = nn[base, rng.integers(0, k, size=need)]
        lam = rng.random(need)
        new_rows.append(Xc[base] + lam[:, None] * (Xc[pick] - Xc[base]))
        new_labels.append(np.full(need, c))
        info += [(int(c), int(members[a]), int(members[b]), float(l)) for a, b, l in zip(base, pick, lam)]
    if new_rows:
        out_X = np.vstack([values] + new_rows)
        out_y = np.concatenate([labels] + new_labels)
    else:
        out_X, out_y = values.copy(), labels.copy()
    if isinstance(y, LabelVector):
        out_y = LabelVector(out_y, y.class_names)
    return (out_X, out_y, info) if return_info else (out_X, out_y)


# --------------------------------------------------------------------------
# stratified folds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[np.ndarray, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(train indices, test indices) for fold ``i``."""
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test


def stratified_kfold(y, k: int, seed: int = 0) -> FoldPlan:
    """Shuffle each class, then deal its members round-robin across folds.

    The dealing position carries over between classes so fold sizes stay
    within one sample of each other.
    """
    labels = np.asarray(getattr(y, "labels", y), dtype=int)
    if k < 2:
        raise ConfigError("k must be >= 2 so every fold has held-out data")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.size < 2:
        raise ConfigError("stratified folds need at least two classes")
    if k > counts.min():
        raise ConfigError(f"k={k} exceeds the smallest class size ({counts.min()})")
    rng = np.random.default_rng(seed)
    assigned = [[] for _ in range(k)]
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        for j, idx in enumerate(members):
            assigned[(offset + j) % k].append(idx)
        offset = (offset + len(members)) % k
    return FoldPlan(tuple(np.sort(np.array(f, dtype=int)) for f in assigned), seed)


def class_counts_ok(plan: FoldPlan, y) -> bool:
    """Every fold holds floor or ceil of n_c / k members of each class."""
    labels = np.asarray(getattr(y, "labels", y), dtype=int)
    for c in np.unique(labels):
        n_c = int(np.sum(labels == c))
        lo, hi = n_c // plan.k, math.ceil(n_c / plan.k)
        for f in plan.folds:
            if not lo <= int(np.sum(labels[f] == c)) <= hi:
                return False
    return True
