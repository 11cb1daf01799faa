"""Tests for data/splits.py: the four split protocols and the audit."""

import json
import logging

import numpy as np
import pytest

from data.loader import SynergyRecord
from data.splits import (
    LEAVE_COMBINATION,
    LEAVE_DRUG,
    LEAVE_TISSUE,
    PROTOCOLS,
    Fold,
    SplitPlan,
    audit_split,
    kfold_split,
    leave_combination_out_split,
    leave_drug_out_split,
    leave_tissue_out_split,
    make_split,
)
from utils.errors import DataError, ParameterError, ProtocolError


@pytest.fixture
def records(sample_bundle):
    return sample_bundle.labeled_records


@pytest.fixture
def tissues(sample_bundle):
    return sample_bundle.tissues


def _drugs(record):
    return {record.drug_a, record.drug_b}


class TestKFold:

    def test_sizes(self, records):
        plan = kfold_split(records, k=5, seed=42)
        assert len(plan) == 5
        assert sorted(len(f.test) for f in plan.folds) == [5, 5, 5, 6, 6]
        assert [len(f.test) for f in plan.folds][:2] == [6, 6]

    def test_tests_partition_records(self, records):
        plan = kfold_split(records, k=4, seed=1)
        assert sorted(i for f in plan.folds for i in f.test) == list(range(len(records)))
        for fold in plan.folds:
            assert sorted(fold.train + fold.test) == list(range(len(records)))

    def test_deterministic(self, records):
        assert kfold_split(records, 5, 7).to_dict() == kfold_split(records, 5, 7).to_dict()
        assert kfold_split(records, 5, 7).to_dict() != kfold_split(records, 5, 8).to_dict()

    def test_k_too_small(self, records):
        with pytest.raises(ParameterError):
            kfold_split(records, k=1)

    def test_too_few_records(self, records):
        with pytest.raises(ProtocolError):
            kfold_split(records[:3], k=5)

    def test_audit_passes(self, records):
        summary = audit_split(kfold_split(records, 5, 42), records)
        assert summary["passed"]
        assert summary["records"] == 27


class TestLeaveDrugOut:

    def test_held_out_drugs_never_in_train(self, records):
        plan = leave_drug_out_split(records, seed=3, k=4)
        assert len(plan) >= 1
        for fold in plan.folds:
            held = set(fold.held_out)
            assert all(not _drugs(records[i]) & held for i in fold.train)
            assert all(_drugs(records[i]) & held for i in fold.test)
        assert audit_split(plan, records)["protocol"] == LEAVE_DRUG

    def test_deterministic(self, records):
        assert leave_drug_out_split(records, 3).to_dict() == leave_drug_out_split(records, 3).to_dict()

    def test_single_drug(self):
        recs = [SynergyRecord("A", "A", "X", 12.0, 1)]
        with pytest.raises(ProtocolError):
            leave_drug_out_split(recs)

    def test_audit_catches_leak(self, records):
        plan = leave_drug_out_split(records, seed=3, k=4)
        fold = plan.folds[0]
        leaked = Fold(name="bad", train=fold.train + fold.test[:1], test=fold.test[1:], held_out=fold.held_out)
        with pytest.raises(ProtocolError):
            audit_split(SplitPlan(LEAVE_DRUG, [leaked]), records)


class TestLeaveCombinationOut:

    def test_pairs_disjoint(self, records):
        plan = leave_combination_out_split(records, seed=5, k=5)
        for fold in plan.folds:
            train_pairs = {records[i].pair_key for i in fold.train}
            test_pairs = {records[i].pair_key for i in fold.test}
            assert not train_pairs & test_pairs
            assert {"|".join(records[i].pair_key) for i in fold.test} <= set(fold.held_out)
        assert audit_split(plan, records)["protocol"] == LEAVE_COMBINATION

    def test_swapped_orders_share_a_fold(self):
        recs = [SynergyRecord("A", "B", "X", 12.0, 1), SynergyRecord("B", "A", "Y", -3.0, 0),
                SynergyRecord("A", "C", "X", 15.0, 1), SynergyRecord("C", "B", "Y", -1.0, 0)]
        plan = leave_combination_out_split(recs, seed=0, k=3)
        for fold in plan.folds:
            assert ({0, 1} <= set(fold.test)) or not ({0, 1} & set(fold.test))


class TestLeaveTissueOut:

    def test_one_fold_per_tissue(self, records, tissues):
        plan = leave_tissue_out_split(records, tissues)
        assert [f.name for f in plan.folds] == ["tissue:breast", "tissue:colon", "tissue:lung"]
        assert [len(f.test) for f in plan.folds] == [7, 9, 11]
        assert audit_split(plan, records, tissues)["protocol"] == LEAVE_TISSUE

    def test_two_tissues(self, records, tissues, caplog):
        subset = [r for r in records if tissues[r.cell_line] in ("lung", "breast")]
        with caplog.at_level(logging.WARNING):
            plan = leave_tissue_out_split(subset, tissues)
        assert len(plan) == 2
        assert "colon" in caplog.text

    def test_single_tissue(self, records, tissues):
        subset = [r for r in records if tissues[r.cell_line] == "lung"]
        with pytest.raises(ProtocolError):
            leave_tissue_out_split(subset, tissues)

    def test_missing_tissue_tag(self, records):
        with pytest.raises(DataError):
            leave_tissue_out_split(records, {})

    def test_audit_needs_tissues(self, records, tissues):
        plan = leave_tissue_out_split(records, tissues)
        with pytest.raises(ProtocolError):
            audit_split(plan, records)


class TestPlan:

    @pytest.mark.parametrize("protocol", PROTOCOLS)
    def test_make_split_dispatch(self, protocol, records, tissues):
        plan = make_split(protocol, records, tissues, k=3, seed=11)
        assert plan.protocol == protocol
        audit_split(plan, records, tissues)

    def test_unknown_protocol(self, records):
        with pytest.raises(ParameterError):
            make_split("random", records)

    def test_fold_out_of_range(self, records):
        plan = kfold_split(records, 3, 0)
        assert plan.fold(2).name == "fold2"
        with pytest.raises(ParameterError):
            plan.fold(3)

    def test_json_round_trip(self, records, tmp_path):
        plan = kfold_split(records, 3, 0)
        path = plan.to_json(str(tmp_path / "plan.json"), audit=audit_split(plan, records))
        with open(path) as f:
            doc = json.load(f)
        assert doc["audit"]["passed"]
        assert SplitPlan.from_dict(doc).to_dict() == plan.to_dict()

    def test_audit_catches_overlap(self, records):
        plan = SplitPlan("kfold", [Fold("f0", train=[0, 1], test=[1, 2])])
        with pytest.raises(ProtocolError):
            audit_split(plan, records)

    def test_audit_catches_incomplete_kfold(self, records):
        plan = SplitPlan("kfold", [Fold("f0", train=[2], test=[0]), Fold("f1", train=[0], test=[1])])
        with pytest.raises(ProtocolError):
            audit_split(plan, records)


def _random_dataset(seed):
    rng = np.random.default_rng(seed)
    n_drugs, n_tissues = int(rng.integers(3, 10)), int(rng.integers(2, 5))
    n_cells = n_tissues + int(rng.integers(0, 5))
    drugs = [f"D{i}" for i in range(n_drugs)]
    tissues = {f"C{i}": f"T{i % n_tissues}" for i in range(n_cells)}
    # first records cover two pairs and every tissue
    records = [SynergyRecord("D0", "D1", "C0", 20.0, 1), SynergyRecord("D2", "D0", "C1", -5.0, 0)]
    records += [SynergyRecord("D1", "D2", f"C{i}", 0.0, 0) for i in range(2, n_tissues)]
    for _ in range(int(rng.integers(20, 80))):
        a, b = rng.choice(n_drugs, size=2, replace=False)
        label = int(rng.integers(0, 2))
        records.append(SynergyRecord(drugs[a], drugs[b], f"C{rng.integers(n_cells)}",
                                     20.0 if label else -5.0, label))
    return records, tissues, n_tissues


class TestRandomDatasets:

    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("protocol", PROTOCOLS)
    def test_audit_passes(self, protocol, seed):
        records, tissues, n_tissues = _random_dataset(seed)
        plan = make_split(protocol, records, tissues, k=5, seed=seed)
        assert audit_split(plan, records, tissues)["passed"]
        for fold in plan.folds:
            assert not set(fold.train) & set(fold.test)
        if protocol == "kfold":
            sizes = [len(f.test) for f in plan.folds]
            assert len(sizes) == 5
            assert max(sizes) - min(sizes) <= 1
        elif protocol == LEAVE_TISSUE:
            assert len(plan.folds) == n_tissues
            for fold in plan.folds:
                assert {tissues[records[i].cell_line] for i in fold.test} == set(fold.held_out)
        elif protocol == LEAVE_DRUG:
            for fold in plan.folds:
                assert all(_drugs(records[i]) & set(fold.held_out) for i in fold.test)
                assert not any(_drugs(records[i]) & set(fold.held_out) for i in fold.train)
