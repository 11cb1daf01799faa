"""Tests for utils/trainer.py: the training loop and fold evaluation."""

import numpy as np
import pandas as pd
import pytest

import utils.trainer as trainer
from analysis.metrics import accuracy, confusion_counts
from config import settings
from data.graph_cache import GraphCache
from data.loader import DatasetBundle, SynergyRecord
from data.splits import kfold_split
from engine.tensor_core import Tensor
from network.egtsyn import ModelConfig, build_variant
from utils.errors import NonFiniteLossError, ProtocolError
from utils.trainer import TrainResult, evaluate, predict_records, train

from tests.conftest import small_config


@pytest.fixture
def fold(sample_bundle):
    return kfold_split(sample_bundle.labeled_records, k=3, seed=0).fold(0)


def _snapshot(model):
    return {name: p.data.copy() for name, p in model.parameters().items()}


def _norm(model):
    return float(sum(np.sum(p.data ** 2) for p in model.parameters().values()))


class TestTrain:

    def test_zero_learning_rate_keeps_parameters(self, sample_bundle, fold):
        model = build_variant(small_config())
        before = _snapshot(model)
        train(model, sample_bundle, fold, epochs=1, batch_size=16, lr=0.0, progress=False)
        after = _snapshot(model)
        assert all(np.array_equal(before[n], after[n]) for n in before)

    def test_deterministic(self, sample_bundle, fold):
        runs = []
        for _ in range(2):
            model = build_variant(small_config(seed=4))
            result = train(model, sample_bundle, fold, epochs=2, batch_size=8, lr=1e-3, seed=4, progress=False)
            runs.append((result.history, _snapshot(model)))
        assert runs[0][0] == runs[1][0]
        assert all(np.array_equal(runs[0][1][n], runs[1][1][n]) for n in runs[0][1])

    def test_history_and_validation(self, sample_bundle, fold):
        model = build_variant(small_config("GSyn"))
        result = train(model, sample_bundle, fold, epochs=2, batch_size=16, lr=1e-3, progress=False)
        assert [h["epoch"] for h in result.history] == [1, 2]
        assert all(h["val_loss"] is not None and h["val_loss"] > 0 for h in result.history)
        assert result.metadata() == {"epoch": 2, "loss": result.history[-1]["train_loss"]}

    def test_plain_index_list_has_no_validation(self, sample_bundle, fold):
        model = build_variant(small_config("GSyn"))
        result = train(model, sample_bundle, fold.train, epochs=1, batch_size=16, lr=1e-3, progress=False)
        assert result.history[0]["val_loss"] is None

    def test_loss_decreases(self, sample_bundle, fold):
        model = build_variant(small_config("GSyn", dropout_rate=0.0))
        result = train(model, sample_bundle, fold, epochs=30, batch_size=8, lr=1e-2, delta=1e5,
                       validate=False, progress=False)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]

    def test_stronger_penalty_shrinks_weights(self, sample_bundle, fold):
        norms = {}
        for delta in (0.1, 1e5):
            model = build_variant(small_config("GSyn", dropout_rate=0.0))
            train(model, sample_bundle, fold, epochs=3, batch_size=8, lr=1e-2, delta=delta,
                  validate=False, progress=False)
            norms[delta] = _norm(model)
        assert norms[0.1] < norms[1e5]

    def test_empty_fold(self, sample_bundle):
        with pytest.raises(ProtocolError):
            train(build_variant(small_config()), sample_bundle, [], epochs=1, progress=False)

    def test_non_finite_loss_aborts(self, sample_bundle, fold, monkeypatch):
        def broken_bce(probs, labels):
            t = Tensor([[1.0]])
            t.data = np.array([[np.nan]])
            return t

        monkeypatch.setattr(trainer, "bce_loss", broken_bce)
        with pytest.raises(NonFiniteLossError) as exc:
            train(build_variant(small_config()), sample_bundle, fold, epochs=2, lr=0.5, progress=False)
        assert (exc.value.epoch, exc.value.batch, exc.value.lr) == (1, 1, 0.5)


class TestEvaluate:

    def test_report_covers_test_set(self, sample_bundle, fold):
        model = build_variant(small_config())
        report = evaluate(model, sample_bundle, fold)
        assert report.n == len(fold.test)
        assert report.confusion == (report.tp, report.fp, report.tn, report.fn)

    def test_empty_set(self, sample_bundle):
        with pytest.raises(ProtocolError):
            evaluate(build_variant(small_config()), sample_bundle, [])

    def test_predict_records_order_and_batching(self, sample_bundle, fold):
        model = build_variant(small_config())
        cache = GraphCache(sample_bundle.drugs)
        whole = predict_records(model, sample_bundle, fold.test, cache=cache, batch_size=64)
        chunked = predict_records(model, sample_bundle, fold.test, cache=cache, batch_size=2)
        assert whole.shape == (len(fold.test),)
        np.testing.assert_allclose(whole, chunked, rtol=0, atol=1e-12)


class TestTrainResult:

    def test_write_history(self, tmp_path):
        result = TrainResult(history=[{"epoch": 1, "train_loss": 0.7, "val_loss": None},
                                      {"epoch": 2, "train_loss": 0.6, "val_loss": 0.65}], epochs_run=2)
        df = pd.read_csv(result.write_history(str(tmp_path / "history.csv")))
        assert list(df.columns) == ["epoch", "train_loss", "val_loss"]
        assert df["train_loss"].tolist() == [0.7, 0.6]


# ── Overfit oracle ───────────────────────────────────────────────────────

def _separable_bundle(width=settings.CELL_INPUT_DIM):
    """32 records whose label follows the cell line: two responsive lines, two resistant."""
    rng = np.random.default_rng(0)
    drugs = {f"D{i}": smiles for i, smiles in enumerate(
        ["CCO", "c1ccccc1O", "CC(=O)N", "CCN(CC)CC", "OC(=O)C=C", "C1CCNCC1", "CC(C)Cl", "c1ccncc1"])}
    cells = {
        "R1": rng.normal(1.0, 0.1, width), "R2": rng.normal(1.0, 0.1, width),
        "S1": rng.normal(-1.0, 0.1, width), "S2": rng.normal(-1.0, 0.1, width),
    }
    pairs = [("D0", "D1"), ("D2", "D3"), ("D4", "D5"), ("D6", "D7"),
             ("D0", "D2"), ("D1", "D3"), ("D4", "D6"), ("D5", "D7")]
    records = [SynergyRecord(a, b, cell, 25.0 if cell.startswith("R") else -8.0)
               for a, b in pairs for cell in cells]
    return DatasetBundle(drugs=drugs, cells=cells, tissues={c: None for c in cells}, records=records)


class TestOverfit:

    def test_separable_records_reach_full_accuracy(self):
        bundle = _separable_bundle()
        assert len(bundle.labeled_records) == 32
        model = build_variant(ModelConfig())
        cache = GraphCache(bundle.drugs)
        indices = list(range(32))
        labels = [r.label for r in bundle.labeled_records]

        acc, epochs = 0.0, 0
        while acc < 1.0 and epochs < 500:
            train(model, bundle, indices, epochs=10, batch_size=16, lr=1e-3, seed=epochs,
                  cache=cache, progress=False)
            epochs += 10
            scores = predict_records(model, bundle, indices, cache=cache)
            acc = accuracy(confusion_counts(labels, scores))
        assert acc == 1.0, f"train ACC {acc} after {epochs} epochs"
