"""Gene-signature discovery from attribution maps.

The pipeline, per attribution method and class:

1. explain every patient of the class w.r.t. that class;
2. keep each patient's top-k genes by relevance;
3. keep genes that show up in at least a given fraction of the class;

the union over classes and methods forms the candidate set. Each class then
contributes its most significant candidates under a one-vs-rest rank-sum
test, and genes ranked in every class's top third are added on top.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._config import to_dict
from .attribution import AttributionMethod, attribute_batch, default_methods
from .data import ExpressionMatrix, LabelVector
from .errors import ConfigError, DegenerateVarianceError, PipelineError
from .stats import RankSumResult, rank_order_key, rank_sum_test

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SignatureConfig:
    top_k_per_patient: int = 250
    patient_frequency_threshold: float = 0.30
    per_class_top: int = 10
    p_threshold: float = 0.001
    include_top_third_shared: bool = True
    ranking: str = "signed"
    methods: tuple[AttributionMethod, ...] = field(default_factory=lambda: tuple(default_methods()))
    batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(AttributionMethod.from_dict(m) for m in self.methods))
        if int(self.top_k_per_patient) < 1:
            raise ConfigError("top_k_per_patient must be positive")
        if not 0 < self.patient_frequency_threshold <= 1:
            raise ConfigError("patient_frequency_threshold must be in (0, 1]")
        if int(self.per_class_top) < 1:
            raise ConfigError("per_class_top must be positive")
        if not 0 < self.p_threshold < 1:
            raise ConfigError("p_threshold must be in (0, 1)")
        if self.ranking not in ("signed", "absolute"):
            raise ConfigError("ranking must be 'signed' or 'absolute'")
        if not self.methods:
            raise ConfigError("at least one attribution method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("attribution methods must be distinct")

    def to_dict(self) -> dict:
        out = to_dict(self)
        out["methods"] = [m.to_dict() for m in self.methods]
        return out

    @classmethod
    def from_dict(cls, data) -> "SignatureConfig":
        if data is None:
            return cls()
        data = dict(data)
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown SignatureConfig field(s): {', '.join(unknown)}")
        if "methods" in data:
            data["methods"] = tuple(AttributionMethod.from_dict(m) for m in data["methods"])
        return cls(**data)


# --------------------------------------------------------------------------
# per-patient and per-class filters
# --------------------------------------------------------------------------

def top_k_genes_for_patient(relevance, gene_names: Sequence[str], k: int,
                            absolute: bool = False) -> list[str]:
    """The ``k`` most relevant genes, descending; equal scores break by name."""
    relevance = np.asarray(relevance, dtype=float)
    if k > len(gene_names):
        raise ConfigError(f"k={k} exceeds gene count {len(gene_names)}")
    score = np.abs(relevance) if absolute else relevance
    order = np.lexsort((np.asarray(gene_names, dtype=object).astype(str), -score))
    return [gene_names[i] for i in order[:k]]


def _top_k_indices(R: np.ndarray, k: int, name_rank: np.ndarray, absolute: bool) -> np.ndarray:
    """Row-wise top-k column indices (as sets; order irrelevant for counting)."""
    score = np.abs(R) if absolute else R
    n_genes = R.shape[1]
    if k >= n_genes:
        return np.tile(np.arange(n_genes), (len(R), 1))
    out = np.empty((len(R), k), dtype=int)
    for i, row in enumerate(score):
        # partition picks the boundary value; ties at the boundary go by name
        part = np.argpartition(-row, k - 1)[:k]
        cutoff = row[part].min()
        above = np.flatnonzero(row > cutoff)
        at = np.flatnonzero(row == cutoff)
        at = at[np.argsort(name_rank[at], kind="stable")][: k - len(above)]
        out[i] = np.concatenate([above, at])
    return out


def min_patient_count(class_size: int, threshold: float) -> int:
    """Smallest patient count that is at least ``threshold`` of the class."""
    # round first so 0.3 * 10 counts as 3, not 3.0000000000000004 -> 4
    return max(1, math.ceil(round(threshold * class_size, 9)))


def frequent_genes_for_class(lists: Iterable[Sequence[str]], class_size: int, threshold: float) -> set[str]:
    """Genes present in at least ``ceil(threshold * class_size)`` patient lists."""
    counts: dict[str, int] = defaultdict(int)
    for genes in lists:
        for g in set(genes):
            counts[g] += 1
    need = min_patient_count(class_size, threshold)
    return {g for g, c in counts.items() if c >= need}


# --------------------------------------------------------------------------
# candidate set
# --------------------------------------------------------------------------

@dataclass
class MethodGeneSet:
    method: str
    per_class: dict[str, set[str]]

    @property
    def union(self) -> set[str]:
        out: set[str] = set()
        for genes in self.per_class.values():
            out |= genes
        return out


@dataclass
class CandidateGeneSet:
    genes: list[str]
    provenance: dict[str, list[tuple[str, str]]]
    by_method: dict[str, MethodGeneSet]

    def __len__(self) -> int:
        return len(self.genes)

    def __contains__(self, gene) -> bool:
        return gene in self.provenance


def _combine(method_sets: Sequence[MethodGeneSet], gene_order: Sequence[str]) -> CandidateGeneSet:
    provenance: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for ms in method_sets:
        for cls_name, genes in ms.per_class.items():
            for g in genes:
                provenance[g].append((ms.method, cls_name))
    rank = {g: i for i, g in enumerate(gene_order)}
    genes = sorted(provenance, key=lambda g: rank.get(g, len(rank)))
    prov = {g: sorted(set(provenance[g])) for g in genes}
    return CandidateGeneSet(genes, prov, {ms.method: ms for ms in method_sets})


def method_gene_set(network, X: ExpressionMatrix, y: LabelVector, method: AttributionMethod,
                    cfg: SignatureConfig) -> MethodGeneSet:
    """Frequency-filtered top-k genes of one method, per class."""
    genes = X.gene_names
    k = int(cfg.top_k_per_patient)
    if k > len(genes):
        raise ConfigError(f"top_k_per_patient={k} exceeds gene count {len(genes)}")
    name_rank = np.argsort(np.argsort(np.asarray(genes, dtype=str), kind="stable"), kind="stable")
    per_class = {}
    for c, cls_name in enumerate(y.class_names):
        rows = np.flatnonzero(y.labels == c)
        counts = np.zeros(len(genes), dtype=int)
        for start in range(0, len(rows), cfg.batch_size):
            chunk = rows[start:start + cfg.batch_size]
            R = attribute_batch(network, X.values[chunk], c, method)
            top = _top_k_indices(R, k, name_rank, cfg.ranking == "absolute")
            np.add.at(counts, top.ravel(), 1)
        need = min_patient_count(len(rows), cfg.patient_frequency_threshold) if len(rows) else 1
        per_class[cls_name] = {genes[i] for i in np.flatnonzero(counts >= need)} if len(rows) else set()
        logger.debug("%s/%s: %d frequent genes", method.name, cls_name, len(per_class[cls_name]))
    return MethodGeneSet(method.name, per_class)


def candidate_genes(network, X: ExpressionMatrix, y: LabelVector, cfg: SignatureConfig | None = None,
                    ) -> CandidateGeneSet:
    """Union of every method's per-class frequent genes, with provenance."""
    cfg = cfg or SignatureConfig()
    sets = [method_gene_set(network, X, y, m, cfg) for m in cfg.methods]
    for ms in sets:
        logger.info("method %s: %d relevant genes", ms.method, len(ms.union))
    return _combine(sets, X.gene_names)


# --------------------------------------------------------------------------
# rank-sum selection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RankedGene:
    gene: str
    p_value: float
    z_score: float
    median_difference: float
    tie_extended: bool = False


def one_vs_rest_tests(genes: Sequence[str], X: ExpressionMatrix, y: LabelVector, c: int,
                      ) -> dict[str, RankSumResult]:
    """Rank-sum result per gene, class ``c`` vs all other samples.

    Genes whose values are all identical are skipped with a warning.
    """
    in_class = y.labels == c
    idx = X.gene_index(list(genes))
    out = {}
    skipped = []
    for g, j in zip(genes, idx):
        col = X.values[:, j]
        try:
            out[g] = rank_sum_test(col[in_class], col[~in_class])
        except DegenerateVarianceError:
            skipped.append(g)
    if skipped:
        logger.warning("class %s: skipped %d constant gene(s): %s", y.class_names[c], len(skipped),
                       ", ".join(skipped[:10]))
    return out


def _ranked(results: dict[str, RankSumResult]) -> list[tuple[str, RankSumResult]]:
    return sorted(results.items(), key=lambda kv: rank_order_key(kv[0], kv[1]))


def per_class_top_genes(candidates, X: ExpressionMatrix, y: LabelVector, c: int,
                        cfg: SignatureConfig | None = None, tests=None) -> list[RankedGene]:
    """Most significant candidates for class ``c`` (one-vs-rest).

    Keeps genes with p below the threshold, takes the ``per_class_top``
    smallest, and extends the list with every further gene whose p equals
    the p at the cutoff position.
    """
    cfg = cfg or SignatureConfig()
    genes = list(getattr(candidates, "genes", candidates))
    if not genes:
        raise PipelineError("per_class_top_genes: candidate set is empty")
    if tests is None:
        tests = one_vs_rest_tests(genes, X, y, c)
    passing = [(g, r) for g, r in _ranked(tests) if r.p_two_sided < cfg.p_threshold]
    n = int(cfg.per_class_top)
    chosen = [RankedGene(g, r.p_two_sided, r.z_score, r.median_difference) for g, r in passing[:n]]
    if len(passing) > n:
        cutoff_p = passing[n - 1][1].p_two_sided
        for g, r in passing[n:]:
            if r.p_two_sided != cutoff_p:
                break
            chosen.append(RankedGene(g, r.p_two_sided, r.z_score, r.median_difference, True))
    return chosen


def shared_top_third(candidates, X: ExpressionMatrix, y: LabelVector, tests_by_class=None) -> list[str]:
    """Genes ranked in the top third of the candidates for every class."""
    genes = list(getattr(candidates, "genes", candidates))
    if not genes:
        raise PipelineError("shared_top_third: candidate set is empty")
    size = len(genes) // 3
    shared = None
    for c in range(y.n_classes):
        tests = tests_by_class[c] if tests_by_class is not None else one_vs_rest_tests(genes, X, y, c)
        top = {g for g, _ in _ranked(tests)[:size]}
        shared = top if shared is None else shared & top
    order = {g: i for i, g in enumerate(genes)}
    return sorted(shared or set(), key=order.__getitem__)


# --------------------------------------------------------------------------
# signature
# --------------------------------------------------------------------------

@dataclass
class GeneSignature:
    genes: list[str]
    class_names: tuple[str, ...]
    per_class: dict[str, list[RankedGene]]
    shared_top_third: list[str] = field(default_factory=list)
    panel: dict[str, list[RankedGene]] = field(default_factory=dict)
    candidates: CandidateGeneSet | None = None

    def __len__(self) -> int:
        return len(self.genes)

    def provenance(self) -> dict[str, list[dict]]:
        out: dict[str, list[dict]] = {g: [] for g in self.genes}
        for cls, entries in self.per_class.items():
            for e in entries:
                out[e.gene].append({"class": cls, "filter": "tie_extension" if e.tie_extended else "rank_sum_top"})
        for g in self.shared_top_third:
            out[g].append({"class": "*", "filter": "shared_top_third"})
        for cls, entries in self.panel.items():
            for e in entries:
                out[e.gene].append({"class": cls, "filter": "panel"})
        return out

    def to_dict(self) -> dict:
        def ranked(entries):
            return [{"gene": e.gene, "p_value": e.p_value, "z_score": e.z_score,
                     "median_difference": e.median_difference, "tie_extended": e.tie_extended}
                    for e in entries]

        doc = {
            "format": "genesig.signature",
            "version": 1,
            "genes": list(self.genes),
            "class_names": list(self.class_names),
            "per_class": {c: ranked(v) for c, v in self.per_class.items()},
            "tie_extended": {c: any(e.tie_extended for e in v) for c, v in self.per_class.items()},
            "shared_top_third": list(self.shared_top_third),
            "panel": {c: ranked(v) for c, v in self.panel.items()},
            "provenance": self.provenance(),
        }
        if self.candidates is not None:
            doc["candidates"] = {
                "count": len(self.candidates),
                "genes": list(self.candidates.genes),
                "provenance": {g: [list(p) for p in v] for g, v in self.candidates.provenance.items()},
                "per_method": {m: {c: sorted(s) for c, s in ms.per_class.items()}
                               for m, ms in self.candidates.by_method.items()},
            }
        return doc

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_text(self, path) -> None:
        Path(path).write_text("".join(g + "\n" for g in self.genes))


def read_signature_genes(path) -> list[str]:
    """Gene list from a signature JSON document or a one-gene-per-line file."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        if "genes" not in doc:
            raise ConfigError(f"{path}: signature JSON has no 'genes' field")
        return [str(g) for g in doc["genes"]]
    return [line.strip() for line in text.splitlines() if line.strip()]


def _dedup(seq):
    seen = set()
    out = []
    for g in seq:
        if g not in seen:
            seen.add(g)
            out.append(g)
    return out


def signature_from_candidates(candidates, X: ExpressionMatrix, y: LabelVector,
                              cfg: SignatureConfig | None = None) -> GeneSignature:
    """Rank-sum stage only: per-class top lists plus the shared top-third genes."""
    cfg = cfg or SignatureConfig()
    genes = list(getattr(candidates, "genes", candidates))
    if not genes:
        raise PipelineError("candidate set is empty after the patient-frequency filter")
    tests = [one_vs_rest_tests(genes, X, y, c) for c in range(y.n_classes)]
    per_class = {y.class_names[c]: per_class_top_genes(genes, X, y, c, cfg, tests=tests[c])
                 for c in range(y.n_classes)}
    ordered = _dedup(e.gene for c in y.class_names for e in per_class[c])
    shared = shared_top_third(genes, X, y, tests) if cfg.include_top_third_shared else []
    added = [g for g in shared if g not in set(ordered)]
    final = ordered + added
    if not final:
        raise PipelineError(f"no candidate gene passed the rank-sum filter (p < {cfg.p_threshold})")
    return GeneSignature(final, y.class_names, per_class, added,
                         candidates=candidates if isinstance(candidates, CandidateGeneSet) else None)


def build_signature(network, X: ExpressionMatrix, y: LabelVector,
                    cfg: SignatureConfig | None = None) -> GeneSignature:
    """Run the full selection: attributions, frequency filter, rank-sum stage."""
    cfg = cfg or SignatureConfig()
    cands = candidate_genes(network, X, y, cfg)
    logger.info("%d candidate genes", len(cands))
    if not len(cands):
        raise PipelineError("candidate set is empty after the patient-frequency filter")
    return signature_from_candidates(cands, X, y, cfg)


def augment_with_panel(signature: GeneSignature, panel: Sequence[str], X: ExpressionMatrix,
                       y: LabelVector, per_class: int = 5) -> GeneSignature:
    """Add each class's ``per_class`` most significant panel genes (one-vs-rest)."""
    if not panel:
        raise ConfigError("panel must contain at least one gene")
    if per_class < 0:
        raise ConfigError("per_class must be >= 0")
    known = set(X.gene_names)
    absent = [g for g in panel if g not in known]
    if absent:
        logger.warning("skipping %d panel gene(s) absent from data: %s", len(absent), ", ".join(absent))
    present = _dedup(g for g in panel if g in known)
    picks: dict[str, list[RankedGene]] = {}
    if per_class > 0 and present:
        for c, cls_name in enumerate(y.class_names):
            ranked = _ranked(one_vs_rest_tests(present, X, y, c))[:per_class]
            picks[cls_name] = [RankedGene(g, r.p_two_sided, r.z_score, r.median_difference) for g, r in ranked]
    genes = _dedup(list(signature.genes) + [e.gene for c in y.class_names for e in picks.get(c, [])])
    merged = {c: list(signature.panel.get(c, [])) + picks.get(c, []) for c in set(signature.panel) | set(picks)}
    merged = {c: merged[c] for c in y.class_names if c in merged}
    return GeneSignature(genes, signature.class_names, signature.per_class, list(signature.shared_top_third),
                         merged, signature.candidates)
