import json
from pathlib import Path

import numpy as np

from genesig import __version__
from genesig.cli import main
from genesig.data import ExpressionMatrix, write_expression
from genesig.nn import save_network
from genesig.pipeline import PipelineConfig

from conftest import random_net

SMALL = {
    "seed": 5,
    "k_folds": 3,
    "synthetic": {"n_samples": [20, 15, 25], "n_genes": 60, "n_planted": 3, "effect_size": 3.0},
    "classifier": {"encoder_dims": [16, 8], "head_dims": [8]},
    "autoencoder": {"encoder_dims": [16, 8], "epochs": 3},
    "training": {"epochs": 15, "batch_size": 16},
    "signature": {"top_k_per_patient": 10, "methods": ["gradient", "lrp_z", {"kind": "smoothgrad", "n_samples": 3}]},
    "evaluation": {"hidden": [12, 8], "training": {"epochs": 15}},
}


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip() == f"genesig {__version__} (config schema 1)"


def test_usage_error_is_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert _err(capsys)["exit_code"] == 1
    assert main(["evaluate", "--data", "x.csv", "--signature", "s.txt", "--out", "r.json"]) == 1


def test_bad_config_value(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"training": {"learning_rate": -1}}))
    assert main(["pipeline", "--config", str(p)]) == 1
    assert _err(capsys)["error"] == "ConfigError"


def test_data_format_error_is_exit_2(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("id,G1\na,1\nb,zz\n")
    (tmp_path / "sig.txt").write_text("G1\n")
    assert main(["correlate", "--data", str(tmp_path / "x.csv"), "--signature", str(tmp_path / "sig.txt"),
                 "--out", str(tmp_path / "r.csv")]) == 2
    assert _err(capsys)["exit_code"] == 2


def test_diverged_training_is_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = ExpressionMatrix(rng.normal(size=(40, 3)) * 1e150, ("A", "B", "C"), tuple(f"s{i}" for i in range(40)))
    write_expression(X, tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("sample_id,label\n" + "".join(f"s{i},{'ab'[i % 2]}\n" for i in range(40)))
    cfg = {"classifier": {"pretrain": False, "smote": False, "encoder_dims": [4], "head_dims": []},
           "training": {"optimizer": "sgd", "learning_rate": 1e150, "epochs": 3}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code = main(["train", "--config", str(tmp_path / "c.json"), "--data", str(tmp_path / "x.csv"),
                 "--labels", str(tmp_path / "y.csv"), "--out", str(tmp_path / "m.json")])
    assert code == 3
    err = _err(capsys)
    assert err["error"] == "TrainingDivergedError" and err["epoch"] >= 1


def test_synth_then_evaluate_missing_gene(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_samples": [12, 12], "n_genes": 20, "n_planted": 2}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "d")]) == 0
    truth = json.loads((tmp_path / "d" / "ground_truth.json").read_text())
    assert set(truth["planted"]) == {"class0", "class1"}
    (tmp_path / "sig.txt").write_text("G03\nNOT_A_GENE\n")
    code = main(["evaluate", "--data", str(tmp_path / "d" / "expression.csv"),
                 "--labels", str(tmp_path / "d" / "labels.csv"), "--signature", str(tmp_path / "sig.txt"),
                 "--folds", "3", "--out", str(tmp_path / "r.json")])
    assert code == 2
    err = _err(capsys)
    assert err["genes"] == ["NOT_A_GENE"] and "NOT_A_GENE" in err["message"]


def test_lrp_z_and_input_x_gradient_rank_identically(tmp_path):
    rng = np.random.default_rng(4)
    genes = tuple(f"g{i:02d}" for i in range(20))
    net = random_net(rng, [20, 16, 12, 3], zero_bias=True).with_metadata(gene_names=list(genes))
    save_network(net, tmp_path / "m.json")
    X = ExpressionMatrix(rng.normal(size=(25, 20)), genes, tuple(f"p{i}" for i in range(25)))
    write_expression(X, tmp_path / "x.csv")
    outs = []
    for method in ("lrp_z", "input_x_gradient"):
        ranked = tmp_path / f"{method}.ranked.csv"
        assert main(["attribute", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "x.csv"),
                     "--method", method, "--top-k", "8", "--out", str(tmp_path / f"{method}.csv"),
                     "--ranked-out", str(ranked)]) == 0
        outs.append(ranked.read_bytes())
    assert outs[0] == outs[1]
    header = (tmp_path / "lrp_z.csv").read_text().splitlines()[0]
    assert header == "sample_id,method,target_class," + ",".join(genes)


def test_subcommands_chain(tmp_path):
    cfg = _small_config(tmp_path)
    d = tmp_path / "d"
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SMALL["synthetic"]))
    assert main(["synth", "--spec", str(spec), "--seed", "5", "--out", str(d)]) == 0
    data = ["--data", str(d / "expression.csv"), "--labels", str(d / "labels.csv")]
    assert main(["train", "--config", str(cfg), *data, "--out", str(tmp_path / "m.json"),
                 "--report", str(tmp_path / "train.json")]) == 0
    assert json.loads((tmp_path / "train.json").read_text())["epochs_run"] == 15
    assert main(["attribute", "--model", str(tmp_path / "m.json"), *data, "--method", "integrated_gradients",
                 "--steps", "5", "--out", str(tmp_path / "maps.csv")]) == 0
    assert len((tmp_path / "maps.csv").read_text().splitlines()) == 61
    assert main(["signature", "--model", str(tmp_path / "m.json"), *data, "--config", str(cfg),
                 "--out", str(tmp_path / "sig.json"), "--text", str(tmp_path / "sig.txt")]) == 0
    genes = (tmp_path / "sig.txt").read_text().split()
    assert genes == json.loads((tmp_path / "sig.json").read_text())["genes"]
    assert main(["evaluate", *data, "--signature", str(tmp_path / "sig.json"), "--folds", "3", "--epochs", "10",
                 "--out", str(tmp_path / "rep.json")]) == 0
    assert (tmp_path / "rep_confusion.csv").exists() and (tmp_path / "rep_folds.csv").exists()
    assert main(["correlate", "--data", str(d / "expression.csv"), "--signature", str(tmp_path / "sig.txt"),
                 "--out", str(tmp_path / "corr.csv")]) == 0
    assert (tmp_path / "corr.csv").read_text().splitlines()[0] == "gene," + ",".join(genes)


def test_pipeline_manifest_and_rerun(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["artifacts"]) == 6
    assert all(Path(p).is_file() for p in manifest["artifacts"].values())
    assert manifest["seed"] == 5
    assert manifest["config_sha256"] == PipelineConfig.from_dict(manifest["config"]).sha256()
    first = {k: (out / f"{k}.json").read_bytes() for k in ("signature", "metrics", "model")}
    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    assert {k: (out / f"{k}.json").read_bytes() for k in first} == first


def test_flags_override_config(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "run"
    assert main(["-q", "pipeline", "--config", str(cfg), "--seed", "9", "--set", "k_folds=2",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9 and manifest["config"]["k_folds"] == 2
    assert len(json.loads((out / "metrics.json").read_text())["folds"]) == 2
