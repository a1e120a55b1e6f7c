"""``genesig`` command line.

Exit codes: 0 success, 1 usage/config error, 2 data-format error,
3 numerical failure. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import AttributionMap, AttributionMethod, METHOD_KINDS, attribute_batch, write_maps_csv
from .data import load_expression, read_expression
from .errors import ConfigError, GenesigError
from .evaluation import EvaluationConfig, evaluate_signature
from .nn import TrainingConfig, load_network, predict, save_network
from .pipeline import (
    SCHEMA_VERSION,
    PipelineConfig,
    apply_overrides,
    load_config,
    normalize_for_model,
    resolve_seeds,
    run_pipeline,
    train_full_classifier,
)
from .signature import SignatureConfig, build_signature, read_signature_genes, top_k_genes_for_patient
from .stats import pearson_matrix
from .synth import SyntheticSpec, generate, write_cohort

logger = logging.getLogger("genesig")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report(ConfigError(message), 1)
        raise SystemExit(1)


def _report(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("genes", "epoch"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _config_from_args(args) -> PipelineConfig:
    data = _read_json(args.config) if getattr(args, "config", None) else {}
    flags = {}
    for name in ("seed", "expression", "labels", "delimiter"):
        v = getattr(args, name, None)
        if v is not None:
            flags[name] = v
    if getattr(args, "output_dir", None):
        flags["output_dir"] = args.output_dir
    data.update(flags)
    apply_overrides(data, getattr(args, "set", None))
    return PipelineConfig.from_dict(data)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = SyntheticSpec.from_dict(_read_json(args.spec)) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    paths = write_cohort(generate(spec), args.out)
    print(json.dumps(paths, indent=2))


def _data_from(cfg: PipelineConfig):
    if cfg.expression is not None:
        return load_expression(cfg.expression, cfg.labels, cfg.delimiter)
    cohort = generate(cfg.synthetic)
    return cohort.X, cohort.y


def cmd_train(args) -> None:
    cfg = resolve_seeds(_config_from_args(args))
    X, y = _data_from(cfg)
    net = train_full_classifier(X, y, cfg)
    save_network(net, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(net.metadata["train_report"], indent=2) + "\n")
    print(json.dumps({"model": args.out, "train_accuracy": net.metadata["train_report"]["train_accuracy"]}))


def _method_from_args(args) -> AttributionMethod:
    params = {"kind": args.method}
    if args.steps is not None:
        params["steps"] = args.steps
    if args.n_samples is not None:
        params["n_samples"] = args.n_samples
    if args.sigma_fraction is not None:
        params["sigma_fraction"] = args.sigma_fraction
    if args.epsilon is not None:
        params["epsilon"] = args.epsilon
    if args.seed is not None:
        params["seed"] = args.seed
    return AttributionMethod.from_dict(params)


def cmd_attribute(args) -> None:
    net = load_network(args.model)
    classes = net.metadata.get("class_names")
    if args.labels:
        X, y = load_expression(args.data, args.labels, args.delimiter, class_names=classes)
        Z = normalize_for_model(net, X)
        targets = y.labels
    else:
        X = read_expression(args.data, args.delimiter)
        Z = normalize_for_model(net, X)
        targets = predict(net, Z.values)
    method = _method_from_args(args)
    R = attribute_batch(net, Z.values, targets, method)
    maps = [AttributionMap(sid, int(t), method, r) for sid, t, r in zip(Z.sample_ids, targets, R)]
    write_maps_csv(maps, Z.gene_names, args.out)
    if args.ranked_out:
        k = min(args.top_k, len(Z.gene_names))
        with open(args.ranked_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "target_class", "genes"])
            for m in maps:
                w.writerow([m.sample_id, m.target_class,
                            ";".join(top_k_genes_for_patient(m.relevance, Z.gene_names, k))])


def _signature_config(path) -> SignatureConfig:
    if not path:
        return SignatureConfig()
    data = _read_json(path)
    if "signature" in data or "schema_version" in data:
        return PipelineConfig.from_dict(data).signature
    return SignatureConfig.from_dict(data)


def cmd_signature(args) -> None:
    net = load_network(args.model)
    X, y = load_expression(args.data, args.labels, args.delimiter, class_names=net.metadata.get("class_names"))
    Z = normalize_for_model(net, X)
    sig = build_signature(net, Z, y, _signature_config(args.config))
    sig.write_json(args.out)
    if args.text:
        sig.write_text(args.text)
    print(json.dumps({"signature": args.out, "n_genes": len(sig), "n_candidates": len(sig.candidates)}))


def cmd_evaluate(args) -> None:
    X, y = load_expression(args.data, args.labels, args.delimiter)
    genes = read_signature_genes(args.signature)
    cfg = EvaluationConfig()
    if args.config:
        data = _read_json(args.config)
        cfg = PipelineConfig.from_dict(data).evaluation if "evaluation" in data else EvaluationConfig.from_dict(data)
    if args.epochs is not None:
        cfg = replace(cfg, training=replace(cfg.training, epochs=args.epochs))
    report = evaluate_signature(X, y, genes, args.folds, args.seed, cfg)
    out = Path(args.out)
    report.write_json(out)
    confusion = Path(args.confusion_out) if args.confusion_out else out.with_name(out.stem + "_confusion.csv")
    folds = Path(args.folds_out) if args.folds_out else out.with_name(out.stem + "_folds.csv")
    report.write_confusion_csv(confusion)
    report.write_fold_csv(folds)
    print(json.dumps({"report": str(out), "mean_accuracy": report.mean_accuracy}))


def cmd_correlate(args) -> None:
    X = read_expression(args.data, args.delimiter)
    corr = pearson_matrix(X, read_signature_genes(args.signature))
    corr.to_csv(args.out)
    if corr.undefined_genes:
        logger.warning("constant genes left undefined: %s", ", ".join(corr.undefined_genes))


def cmd_pipeline(args) -> None:
    manifest = run_pipeline(_config_from_args(args))
    print(json.dumps({"manifest": str(Path(manifest["config"]["output_dir"]) / "manifest.json"),
                      **manifest["results"]}))


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="genesig", description="Discover and validate compact gene signatures.")
    p.add_argument("--version", action="version",
                   version=f"genesig {__version__} (config schema {SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic cohort")
    s.add_argument("--spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def data_flags(q, required=True):
        q.add_argument("--data", required=required, help="expression CSV/TSV")
        q.add_argument("--labels", help="sample_id,label CSV")
        q.add_argument("--delimiter")

    t = sub.add_parser("train", help="train the full-gene classifier")
    t.add_argument("--config")
    t.add_argument("--data", dest="expression")
    t.add_argument("--labels")
    t.add_argument("--delimiter")
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attribute", help="per-sample attribution maps")
    a.add_argument("--model", required=True)
    data_flags(a)
    a.add_argument("--method", required=True, choices=METHOD_KINDS)
    a.add_argument("--steps", type=int)
    a.add_argument("--n-samples", type=int)
    a.add_argument("--sigma-fraction", type=float)
    a.add_argument("--epsilon", type=float)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--ranked-out", help="also write each sample's top genes")
    a.add_argument("--top-k", type=int, default=250)
    a.set_defaults(func=cmd_attribute)

    g = sub.add_parser("signature", help="select the gene signature")
    g.add_argument("--model", required=True)
    data_flags(g)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--text", help="also write one gene per line")
    g.set_defaults(func=cmd_signature)

    e = sub.add_parser("evaluate", help="k-fold evaluation of a signature")
    data_flags(e)
    e.add_argument("--signature", required=True)
    e.add_argument("--folds", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--epochs", type=int)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--confusion-out")
    e.add_argument("--folds-out")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("correlate", help="Pearson matrix of signature genes")
    c.add_argument("--data", required=True)
    c.add_argument("--delimiter")
    c.add_argument("--signature", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_correlate)

    pl = sub.add_parser("pipeline", help="run every stage and write a manifest")
    pl.add_argument("--config")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--data", dest="expression")
    pl.add_argument("--labels")
    pl.add_argument("--delimiter")
    pl.add_argument("--out", dest="output_dir")
    pl.add_argument("--set", action="append", metavar="KEY=VALUE")
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        if args.command == "evaluate" and not args.labels:
            raise ConfigError("evaluate needs --labels")
        if args.command == "signature" and not args.labels:
            raise ConfigError("signature needs --labels")
        args.func(args)
    except GenesigError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _report(exc, 1)
        return 1
    except IndexError as exc:
        _report(exc, 1)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
