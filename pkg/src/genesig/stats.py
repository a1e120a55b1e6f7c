"""Mann-Whitney rank-sum testing and Pearson correlation matrices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DegenerateVarianceError

EXACT_MAX_N = 20


@dataclass(frozen=True)
class RankSumResult:
    u_statistic: float
    z_score: float
    p_two_sided: float
    n1: int
    n2: int
    tie_corrected: bool
    median_difference: float = 0.0


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def rank_sum_test(x, y) -> RankSumResult:
    """Two-sided Mann-Whitney U test, normal approximation.

    Uses average ranks for ties, the tie-corrected variance and a 0.5
    continuity correction. ``u_statistic`` is the U of ``x``; ``z_score``
    is signed (positive when ``x`` tends to be larger).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = x.size, y.size
    if n1 < 1 or n2 < 1:
        raise ConfigError("rank_sum_test needs at least one value in each sample")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        raise DegenerateVarianceError("all values are identical; rank-sum variance is zero")
    diff = u - n1 * n2 / 2.0
    z = math.copysign(max(abs(diff) - 0.5, 0.0), diff) / math.sqrt(var)
    p = min(1.0, 2.0 * _normal_sf(abs(z)))
    return RankSumResult(u, z, p, n1, n2, bool(tie_term > 0),
                         float(np.median(x) - np.median(y)))


def exact_rank_sum_p(x, y) -> float:
    """Exact two-sided p by enumerating every split of the pooled ranks.

    ``p = P(|R - E[R]| >= |r_obs - E[R]|)`` where ``R`` is the rank sum of a
    uniformly drawn size-``n1`` subset. Without ties this equals twice the
    smaller tail. Only feasible for small samples.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = x.size, y.size
    if n1 < 1 or n2 < 1:
        raise ConfigError("exact_rank_sum_p needs at least one value in each sample")
    if n1 + n2 > EXACT_MAX_N:
        raise ConfigError(f"exact enumeration limited to n1 + n2 <= {EXACT_MAX_N}, got {n1 + n2}")
    # doubled average ranks are integers, so comparisons are exact
    ranks2 = np.rint(2 * rankdata(np.concatenate([x, y]))).astype(np.int64)
    observed = int(ranks2[:n1].sum())
    sums = np.fromiter((sum(c) for c in combinations(ranks2.tolist(), n1)), dtype=np.int64)
    # E[R] doubled is n1 * (n + 1), also an integer
    center = n1 * (n1 + n2 + 1)
    dev = abs(observed - center)
    return float(np.count_nonzero(np.abs(sums - center) >= dev) / sums.size)


def rank_order_key(gene: str, result: RankSumResult):
    """Sort key: ascending p, then larger |median difference|, then name."""
    return (result.p_two_sided, -abs(result.median_difference), gene)


@dataclass(frozen=True)
class CorrelationMatrix:
    gene_names: tuple[str, ...]
    values: np.ndarray
    defined: np.ndarray

    @property
    def undefined_genes(self) -> list[str]:
        return [g for g, ok in zip(self.gene_names, self.defined) if not ok]

    def to_csv(self, path) -> None:
        """Header row of gene names; cells involving a constant gene are left empty."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gene", *self.gene_names])
            for i, g in enumerate(self.gene_names):
                row = [repr(float(v)) if self.defined[i] and self.defined[j] else ""
                       for j, v in enumerate(self.values[i])]
                w.writerow([g, *row])


def pearson_matrix(X, genes: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson r between the selected gene columns of ``X``.

    Constant genes are marked undefined; their rows and columns hold 0 and
    do not affect the other entries.
    """
    if genes is None:
        genes = list(X.gene_names)
    sub = X.values[:, X.gene_index(genes)]
    centered = sub - sub.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    defined = np.array([bool(np.any(col != col[0])) for col in sub.T]) if sub.size else np.zeros(0, bool)
    safe = np.where(defined, norms, 1.0)
    unit = np.where(defined, centered / safe, 0.0)
    r = unit.T @ unit
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    idx = np.flatnonzero(defined)
    r[idx, idx] = 1.0
    return CorrelationMatrix(tuple(genes), r, defined)
