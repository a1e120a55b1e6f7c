"""Seeded synthetic cohorts with planted class-specific genes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ExpressionMatrix, LabelVector, write_expression, write_labels
from .errors import ConfigError


@dataclass(frozen=True)
class CorrelationBlock:
    """Genes sharing one latent factor; pairwise correlation is about loading**2."""

    genes: tuple[int, ...]
    loading: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Cohort recipe.

    ``planted`` maps each class to explicit gene indices; when omitted,
    ``n_planted`` distinct genes per class are drawn from the seed.
    ``blocks`` likewise defaults to one block over each class's planted
    genes with ``block_loading`` (set it to 0 for independent genes).
    """

    n_samples: tuple[int, ...] = (100, 50, 300, 150)
    n_genes: int = 2000
    n_planted: int = 10
    effect_size: float = 2.5
    noise_std: float = 1.0
    block_loading: float = 0.8
    planted: tuple[tuple[int, ...], ...] | None = None
    blocks: tuple[CorrelationBlock, ...] | None = None
    class_names: tuple[str, ...] | None = None
    seed: int = 7

    def __post_init__(self):
        n_samples = tuple(int(n) for n in self.n_samples)
        object.__setattr__(self, "n_samples", n_samples)
        if len(n_samples) < 2 or min(n_samples) < 1:
            raise ConfigError("need at least two classes with positive sample counts")
        if int(self.n_genes) < 1:
            raise ConfigError("n_genes must be positive")
        if self.effect_size < 0:
            raise ConfigError("effect_size must be >= 0")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be > 0")
        if not abs(self.block_loading) < 1:
            raise ConfigError("block loading must satisfy |rho| < 1")
        if self.class_names is not None and len(self.class_names) != len(n_samples):
            raise ConfigError("class_names must match the number of classes")
        if self.planted is not None:
            planted = tuple(tuple(int(g) for g in p) for p in self.planted)
            object.__setattr__(self, "planted", planted)
            if len(planted) != len(n_samples):
                raise ConfigError("planted needs one gene list per class")
            flat = [g for p in planted for g in p]
            bad = [g for g in flat if not 0 <= g < self.n_genes]
            if bad:
                raise ConfigError(f"planted gene index {bad[0]} outside 0..{self.n_genes - 1}")
            if len(set(flat)) != len(flat):
                raise ConfigError("planted gene sets must be disjoint across classes")
        elif self.n_planted * len(n_samples) > self.n_genes:
            raise ConfigError("not enough genes to plant n_planted per class")
        if self.blocks is not None:
            blocks = tuple(b if isinstance(b, CorrelationBlock)
                           else CorrelationBlock(tuple(int(g) for g in b["genes"]), float(b["loading"]))
                           for b in self.blocks)
            object.__setattr__(self, "blocks", blocks)
            for b in blocks:
                if not abs(b.loading) < 1:
                    raise ConfigError("block loading must satisfy |rho| < 1")
                if any(not 0 <= g < self.n_genes for g in b.genes):
                    raise ConfigError("block gene index outside the gene range")

    @property
    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return tuple(self.class_names)
        if len(self.n_samples) == 4:
            return ("Basal", "Her2", "LumA", "LumB")
        return tuple(f"class{i}" for i in range(len(self.n_samples)))

    def to_dict(self) -> dict:
        return {
            "n_samples": list(self.n_samples),
            "n_genes": self.n_genes,
            "n_planted": self.n_planted,
            "effect_size": self.effect_size,
            "noise_std": self.noise_std,
            "block_loading": self.block_loading,
            "planted": None if self.planted is None else [list(p) for p in self.planted],
            "blocks": None if self.blocks is None else [
                {"genes": list(b.genes), "loading": b.loading} for b in self.blocks],
            "class_names": None if self.class_names is None else list(self.class_names),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data) -> "SyntheticSpec":
        if data is None:
            return cls()
        data = dict(data)
        allowed = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown SyntheticSpec field(s): {', '.join(unknown)}")
        for key in ("n_samples", "class_names"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        if data.get("planted") is not None:
            data["planted"] = tuple(tuple(p) for p in data["planted"])
        if data.get("blocks") is not None:
            data["blocks"] = tuple(data["blocks"])
        return cls(**data)


@dataclass
class SyntheticCohort:
    X: ExpressionMatrix
    y: LabelVector
    planted: dict[str, list[str]]
    blocks: list[dict] = field(default_factory=list)

    @property
    def planted_genes(self) -> set[str]:
        return {g for genes in self.planted.values() for g in genes}

    def ground_truth(self) -> dict:
        return {"planted": self.planted, "blocks": self.blocks}


def gene_name(i: int, n_genes: int) -> str:
    return f"G{i:0{len(str(n_genes - 1))}d}"


def generate(spec: SyntheticSpec | None = None) -> SyntheticCohort:
    """Draw a cohort. Rows are shuffled; everything follows ``spec.seed``."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    n_classes = len(spec.n_samples)
    if spec.planted is not None:
        planted = [list(p) for p in spec.planted]
    else:
        chosen = rng.choice(spec.n_genes, size=spec.n_planted * n_classes, replace=False)
        planted = [sorted(chosen[c * spec.n_planted:(c + 1) * spec.n_planted].tolist()) for c in range(n_classes)]
    if spec.blocks is not None:
        blocks = list(spec.blocks)
    elif spec.block_loading != 0:
        blocks = [CorrelationBlock(tuple(p), spec.block_loading) for p in planted if p]
    else:
        blocks = []

    labels = np.concatenate([np.full(n, c) for c, n in enumerate(spec.n_samples)])
    labels = labels[rng.permutation(labels.size)]
    n = labels.size
    values = rng.standard_normal((n, spec.n_genes))
    for b in blocks:
        idx = list(b.genes)
        factor = rng.standard_normal(n)
        values[:, idx] = b.loading * factor[:, None] + math.sqrt(1 - b.loading ** 2) * values[:, idx]
    values *= spec.noise_std
    for c, genes in enumerate(planted):
        if genes:
            values[np.ix_(labels == c, genes)] += spec.effect_size * spec.noise_std

    names = [gene_name(i, spec.n_genes) for i in range(spec.n_genes)]
    sample_ids = [f"S{i:0{len(str(n - 1))}d}" for i in range(n)]
    class_names = spec.names
    X = ExpressionMatrix(values, tuple(names), tuple(sample_ids))
    y = LabelVector(labels, class_names)
    truth = {class_names[c]: [names[g] for g in genes] for c, genes in enumerate(planted)}
    block_info = [{"genes": [names[g] for g in b.genes], "loading": b.loading} for b in blocks]
    return SyntheticCohort(X, y, truth, block_info)


def write_cohort(cohort: SyntheticCohort, out_dir) -> dict[str, str]:
    """Write expression.csv, labels.csv and ground_truth.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "expression": out / "expression.csv",
        "labels": out / "labels.csv",
        "ground_truth": out / "ground_truth.json",
    }
    write_expression(cohort.X, paths["expression"])
    write_labels(cohort.X.sample_ids, cohort.y, paths["labels"])
    paths["ground_truth"].write_text(json.dumps(cohort.ground_truth(), indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
