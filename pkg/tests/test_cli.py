"""End-to-end tests for the main.py subcommands on the bundled sample data."""

import filecmp
import json
import os
from unittest.mock import patch

import pandas as pd
import pytest

import main
from config import settings
from data.loader import load_bundle
from data.splits import SplitPlan, make_split
from network.checkpoint import load_checkpoint
from utils.errors import NonFiniteLossError

TINY = ["--gcn-hidden", "8", "--embed-dim", "6", "--heads", "2", "--ffn-hidden", "8",
        "--cell-hidden", "10,8", "--cell-embed-dim", "6", "--head-hidden", "12,6",
        "--batch-size", "16", "--folds", "3", "--seed", "7"]


@pytest.fixture
def data_args(sample_paths):
    return ["--data", *sample_paths]


@pytest.fixture
def trained(tmp_path, data_args):
    ckpt = str(tmp_path / "ckpt" / "model.json")
    code = main.main(["train", *data_args, *TINY, "--variant", "EGTSyn", "--epochs", "2",
                      "--no-progress", "--out", ckpt])
    assert code == 0
    return ckpt


class TestFeaturize:

    def test_sample_drugs(self, tmp_path, sample_paths):
        out = tmp_path / "graphs"
        assert main.main(["featurize", "--drugs", sample_paths[0], "--out", str(out)]) == 0
        assert (out / "manifest.json").exists()
        summary = pd.read_csv(out / "summary.csv")
        assert len(summary) == 8
        with open(out / "ASPIRIN.json") as f:
            dump = json.load(f)
        assert (dump["n_atoms"], dump["n_bonds"]) == (13, 13)
        assert dump["atom_bond_graph"]["N"] == 26

    def test_rejected_smiles(self, tmp_path):
        drugs = tmp_path / "drugs.csv"
        drugs.write_text("drug_id,smiles\nOK,CCO\nBAD,C1CC\n")
        out = tmp_path / "graphs"
        assert main.main(["featurize", "--drugs", str(drugs), "--out", str(out)]) == 1
        rejects = pd.read_csv(out / "rejects.csv")
        assert list(rejects.columns) == ["drug_id", "smiles", "error"]
        assert rejects["drug_id"].tolist() == ["BAD"]
        assert (out / "OK.json").exists()


class TestSplit:

    def test_writes_audited_plan(self, tmp_path, data_args, capsys):
        plan = tmp_path / "plan.json"
        code = main.main(["split", *data_args, "--split", "leave_tissue", "--out", str(plan)])
        assert code == 0
        with open(plan) as f:
            doc = json.load(f)
        assert doc["protocol"] == "leave_tissue"
        assert doc["audit"]["passed"]
        assert len(doc["folds"]) == 3
        assert "13 positive / 14 negative / 3 excluded" in capsys.readouterr().out


class TestTrainEvaluatePredict:

    def test_train_outputs(self, trained):
        stem = os.path.splitext(trained)[0]
        model, metadata = load_checkpoint(trained)
        assert model.variant == "EGTSyn"
        assert model.config.cell_input_dim == 8
        assert metadata["epoch"] == 2
        assert len(pd.read_csv(stem + ".history.csv")) == 2
        with open(stem + ".manifest.json") as f:
            manifest = json.load(f)
        assert manifest["subcommand"] == "train"
        assert manifest["seed"] == 7
        assert len(manifest["inputs"]) == 3

    def test_evaluate(self, trained, tmp_path, data_args):
        report = tmp_path / "reports" / "fold0.json"
        code = main.main(["evaluate", "--ckpt", trained, *data_args, "--folds", "3", "--seed", "7",
                          "--report", str(report)])
        assert code == 0
        with open(report) as f:
            doc = json.load(f)
        assert doc["n"] == 9
        assert (tmp_path / "reports" / "fold0.csv").exists()

    def test_evaluate_on_train(self, trained, tmp_path, data_args):
        report = tmp_path / "train_report.json"
        code = main.main(["evaluate", "--ckpt", trained, *data_args, "--folds", "3", "--seed", "7",
                          "--on-train", "--report", str(report)])
        assert code == 0
        with open(report) as f:
            assert json.load(f)["n"] == 18

    def test_predict(self, trained, sample_paths, capsys):
        code = main.main(["predict", "--ckpt", trained, "--drug-a", "CC(=O)Oc1ccccc1C(=O)O",
                          "--drug-b", "CN(C)C(=N)N=C(N)N", "--cell-id", "MCF7", "--cells", sample_paths[1]])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        prob_line = next(l for l in lines if l.startswith("probability="))
        value = prob_line.split("=", 1)[1]
        assert len(value.split(".")[1]) == 8
        assert 0.0 < float(value) < 1.0
        assert any(l.startswith("label=") for l in lines)

    def test_predict_is_order_symmetric(self, trained, sample_paths, capsys):
        outputs = []
        for a, b in (("CCO", "c1ccccc1"), ("c1ccccc1", "CCO")):
            main.main(["predict", "--ckpt", trained, "--drug-a", a, "--drug-b", b,
                       "--cell-id", "A549", "--cells", sample_paths[1]])
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]

    def test_predict_unknown_cell(self, trained, sample_paths):
        code = main.main(["predict", "--ckpt", trained, "--drug-a", "CCO", "--drug-b", "CCN",
                          "--cell-id", "NOPE", "--cells", sample_paths[1]])
        assert code == 1

    def test_predict_bad_smiles(self, trained, sample_paths):
        code = main.main(["predict", "--ckpt", trained, "--drug-a", "C(", "--drug-b", "CCN",
                          "--cell-id", "A549", "--cells", sample_paths[1]])
        assert code == 1


class TestReproducibility:

    def test_same_seed_gives_byte_identical_outputs(self, tmp_path, data_args):
        outputs = []
        for run in ("first", "second"):
            ckpt = tmp_path / run / "model.json"
            code = main.main(["train", *data_args, *TINY, "--variant", "EGTSyn", "--epochs", "3",
                              "--no-progress", "--out", str(ckpt)])
            assert code == 0
            outputs.append((ckpt, tmp_path / run / "model.history.csv"))
        (ckpt_a, hist_a), (ckpt_b, hist_b) = outputs
        assert filecmp.cmp(ckpt_a, ckpt_b, shallow=False)
        assert filecmp.cmp(hist_a, hist_b, shallow=False)


class TestExitCodes:

    def test_unknown_variant_is_usage_error(self, tmp_path, data_args):
        with pytest.raises(SystemExit) as exc:
            main.main(["train", *data_args, "--variant", "Foo", "--out", str(tmp_path / "m.json")])
        assert exc.value.code == 2

    def test_indivisible_heads(self, tmp_path, data_args):
        code = main.main(["train", *data_args, *TINY, "--heads", "4", "--epochs", "1", "--no-progress",
                          "--out", str(tmp_path / "m.json")])
        assert code == 1

    def test_missing_checkpoint(self, tmp_path, data_args):
        code = main.main(["evaluate", "--ckpt", str(tmp_path / "absent.json"), *data_args,
                          "--report", str(tmp_path / "r.json")])
        assert code == 1

    def test_non_finite_loss_exit_code(self, tmp_path, data_args, capsys):
        with patch("cli.commands.train", side_effect=NonFiniteLossError(1, 3, 0.5)):
            code = main.main(["train", *data_args, *TINY, "--epochs", "1", "--no-progress",
                              "--out", str(tmp_path / "m.json")])
        assert code == 3
        assert "epoch 1, batch 3" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()

    def test_missing_data_file(self, tmp_path, sample_paths):
        code = main.main(["split", "--data", str(tmp_path / "nope.csv"), *sample_paths[1:],
                          "--out", str(tmp_path / "plan.json")])
        assert code == 1
        assert list(tmp_path.iterdir()) == []

    def test_missing_checkpoint_leaves_no_artifacts(self, tmp_path, sample_paths):
        ckpt_dir = tmp_path / "never"
        code = main.main(["predict", "--ckpt", str(ckpt_dir / "model.json"), "--drug-a", "CCO",
                          "--drug-b", "CCN", "--cell-id", "A549", "--cells", sample_paths[1]])
        assert code == 1
        assert not ckpt_dir.exists()


class TestConfigFile:

    def test_config_values_become_defaults(self, tmp_path, data_args):
        config = tmp_path / "run.cfg"
        config.write_text("# tiny run\nvariant = GSyn\nepochs = 1\nno-progress = true\n")
        ckpt = str(tmp_path / "m.json")
        assert main.main(["--config", str(config), "train", *data_args, *TINY, "--out", ckpt]) == 0
        model, metadata = load_checkpoint(ckpt)
        assert model.variant == "GSyn"
        assert metadata["epoch"] == 1

    def test_explicit_flag_wins(self, tmp_path, data_args):
        config = tmp_path / "run.cfg"
        config.write_text("variant = GSyn\nepochs = 1\n")
        ckpt = str(tmp_path / "m.json")
        code = main.main(["--config", str(config), "train", *data_args, *TINY, "--epochs", "2",
                          "--no-progress", "--out", ckpt])
        assert code == 0
        assert load_checkpoint(ckpt)[1]["epoch"] == 2

    def test_unknown_key(self, tmp_path, data_args):
        config = tmp_path / "run.cfg"
        config.write_text("learning_rate = 0.1\n")
        assert main.main(["--config", str(config), "split", *data_args, "--out", str(tmp_path / "p.json")]) == 2

    def test_malformed_line(self, tmp_path, data_args):
        config = tmp_path / "run.cfg"
        config.write_text("epochs\n")
        assert main.main(["--config", str(config), "split", *data_args, "--out", str(tmp_path / "p.json")]) == 2


class TestGradcheck:

    @pytest.fixture(autouse=True)
    def manifest_dir(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "CHECKPOINT_DIR", str(tmp_path / "checkpoints"))
        return tmp_path / "checkpoints"

    def test_passes(self, capsys, manifest_dir):
        assert main.main(["gradcheck", "--variant", "GSyn", "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out
        with open(manifest_dir / "gradcheck.manifest.json") as f:
            manifest = json.load(f)
        assert manifest["subcommand"] == "gradcheck"
        assert manifest["seed"] == 1

    def test_corrupted_rule_fails(self, capsys):
        assert main.main(["gradcheck", "--variant", "GSyn", "--corrupt-rule", "matmul"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_sampled_entries(self, tmp_path):
        manifest = tmp_path / "gradcheck.json"
        assert main.main(["gradcheck", "--variant", "EGSyn", "--max-entries", "5", "--out", str(manifest)]) == 0
        assert manifest.exists()


class TestAblate:

    def test_one_fold_all_variants(self, tmp_path, data_args):
        out = tmp_path / "ablation"
        code = main.main(["ablate", *data_args, *TINY, "--epochs", "1", "--max-folds", "1", "--out", str(out)])
        assert code == 0
        table = pd.read_csv(out / "ablation.csv")
        assert table["variant"].tolist() == ["EGTSyn", "GTSyn", "EGSyn", "GSyn"]
        assert list(table.columns) == ["variant", "params", "ROC AUC", "PR AUC", "ACC", "BACC", "KAPPA"]
        assert table["params"].is_unique
        with open(out / "ablation.json") as f:
            details = json.load(f)
        bundle = load_bundle(*data_args[1:])
        expected = make_split("kfold", bundle.labeled_records, bundle.tissues, k=3, seed=7)
        assert all(d["split_digest"] == expected.digest() for d in details.values())
        assert all(d["fold_names"] == [expected.folds[0].name] for d in details.values())
        with open(out / "split.json") as f:
            assert SplitPlan.from_dict(json.load(f)).digest() == expected.digest()
