"""Cross-validated scoring of a gene signature with a small dense classifier."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._config import from_dict, to_dict
from .data import ExpressionMatrix, LabelVector, smote_balance, stratified_kfold, zscore_apply, zscore_fit
from .errors import ConfigError
from .nn import TrainingConfig, chain_specs, predict, train_classifier

logger = logging.getLogger(__name__)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def _ratio(num, den):
    return (float(num) / float(den), False) if den else (0.0, True)


def classification_metrics(cm, class_weights=None, class_names: Sequence[str] | None = None) -> dict:
    """Per-class and aggregate precision, recall and F1 from a confusion matrix.

    Zero denominators give 0 and are listed under ``zero_division``.
    ``class_weights`` default to true-class support (row sums).
    """
    cm = np.asarray(cm, dtype=int)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise ConfigError("confusion matrix must be a nonempty square matrix")
    k = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    weights = support if class_weights is None else np.asarray(class_weights, dtype=float)
    per_class = {}
    zero_div = []
    precisions, recalls, f1s = [], [], []
    for i in range(k):
        p, pz = _ratio(tp[i], predicted[i])
        r, rz = _ratio(tp[i], support[i])
        f, fz = _ratio(2 * p * r, p + r)
        if pz:
            zero_div.append(f"precision:{names[i]}")
        if rz:
            zero_div.append(f"recall:{names[i]}")
        per_class[names[i]] = {"precision": p, "recall": r, "f1": f, "support": int(support[i])}
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    total = int(cm.sum())
    acc, _ = _ratio(tp.sum(), total)
    micro_p, _ = _ratio(tp.sum(), predicted.sum())
    micro_r, _ = _ratio(tp.sum(), support.sum())
    micro_f, _ = _ratio(2 * micro_p * micro_r, micro_p + micro_r)
    wsum = float(np.sum(weights))

    def weighted(vals):
        return float(np.dot(weights, vals) / wsum) if wsum else 0.0

    return {
        "accuracy": acc,
        "per_class": per_class,
        "micro": {"precision": micro_p, "recall": micro_r, "f1": micro_f},
        "macro": {"precision": float(np.mean(precisions)), "recall": float(np.mean(recalls)),
                  "f1": float(np.mean(f1s))},
        "weighted": {"precision": weighted(precisions), "recall": weighted(recalls), "f1": weighted(f1s)},
        "n_samples": total,
        "zero_division": zero_div,
    }


@dataclass(frozen=True)
class EvaluationConfig:
    hidden: tuple[int, ...] = (90, 50)
    dropout: float = 0.3
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(epochs=150))
    smote_k: int = 5
    smote: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if isinstance(self.training, dict):
            object.__setattr__(self, "training", TrainingConfig.from_dict(self.training))

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "EvaluationConfig":
        return from_dict(cls, data)


@dataclass
class MetricsReport:
    class_names: tuple[str, ...]
    genes: list[str]
    k_folds: int
    seed: int
    folds: list[dict]
    confusion: list[np.ndarray]
    pooled: dict

    @property
    def pooled_confusion(self) -> np.ndarray:
        return np.sum(self.confusion, axis=0)

    @property
    def fold_accuracies(self) -> list[float]:
        return [f["accuracy"] for f in self.folds]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    def summary(self) -> dict:
        out = {}
        keys = ["accuracy"] + [f"{agg}_{m}" for agg in ("micro", "macro", "weighted")
                               for m in ("precision", "recall", "f1")]
        for key in keys:
            if key == "accuracy":
                vals = [f["accuracy"] for f in self.folds]
            else:
                agg, m = key.split("_")
                vals = [f[agg][m] for f in self.folds]
            out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return out

    def to_dict(self) -> dict:
        return {
            "format": "genesig.metrics",
            "version": 1,
            "class_names": list(self.class_names),
            "genes": list(self.genes),
            "k_folds": self.k_folds,
            "seed": self.seed,
            "summary": self.summary(),
            "pooled": self.pooled,
            "pooled_confusion": self.pooled_confusion.tolist(),
            "folds": [dict(f, confusion=cm.tolist()) for f, cm in zip(self.folds, self.confusion)],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_confusion_csv(self, path) -> None:
        """Long format: fold (or 'pooled'), true class, predicted class, count."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "true", "predicted", "count"])
            tables = [(str(i), cm) for i, cm in enumerate(self.confusion)] + [("pooled", self.pooled_confusion)]
            for label, cm in tables:
                for i, t in enumerate(self.class_names):
                    for j, p in enumerate(self.class_names):
                        w.writerow([label, t, p, int(cm[i, j])])

    def write_fold_csv(self, path) -> None:
        """One row per fold: accuracy and per-class precision/recall/F1."""
        cols = [f"{c}_{m}" for c in self.class_names for m in ("precision", "recall", "f1")]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "accuracy", "macro_f1", "weighted_f1", *cols])
            for i, f in enumerate(self.folds):
                per = [f["per_class"][c][m] for c in self.class_names for m in ("precision", "recall", "f1")]
                w.writerow([i, f["accuracy"], f["macro"]["f1"], f["weighted"]["f1"], *per])


def _fold(i, train, test, values, labels, n_classes, cfg, seed):
    stats = zscore_fit(values[train])
    Xtr = zscore_apply(values[train], stats)
    ytr = labels[train]
    if cfg.smote:
        Xtr, ytr = smote_balance(Xtr, ytr, cfg.smote_k, seed=seed)
    specs = chain_specs([values.shape[1], *cfg.hidden, n_classes], dropout=cfg.dropout)
    tcfg = replace(cfg.training, seed=seed, batch_size=min(cfg.training.batch_size, len(Xtr)))
    net, _ = train_classifier(specs, Xtr, ytr, tcfg)
    pred = predict(net, zscore_apply(values[test], stats))
    return confusion_matrix(labels[test], pred, n_classes)


def evaluate_signature(X: ExpressionMatrix, y: LabelVector, signature, k_folds: int = 10, seed: int = 0,
                       cfg: EvaluationConfig | None = None) -> MetricsReport:
    """k-fold CV of the signature genes.

    Per fold: z-score on training rows, SMOTE the training rows, train the
    classifier, predict held-out rows at their natural class balance. Fold
    ``i`` uses seed ``seed + i``.
    """
    cfg = cfg or EvaluationConfig()
    genes = list(getattr(signature, "genes", signature))
    if not genes:
        raise ConfigError("signature is empty")
    sub = X.select_genes(genes)
    plan = stratified_kfold(y, k_folds, seed)
    folds, cms = [], []
    for i in range(plan.k):
        train, test = plan.split(i)
        cm = _fold(i, train, test, sub.values, y.labels, y.n_classes, cfg, seed + i)
        metrics = classification_metrics(cm, class_names=y.class_names)
        logger.info("fold %d accuracy %.4f", i, metrics["accuracy"])
        folds.append(metrics)
        cms.append(cm)
    pooled = classification_metrics(np.sum(cms, axis=0), class_names=y.class_names)
    return MetricsReport(y.class_names, genes, plan.k, seed, folds, cms, pooled)
