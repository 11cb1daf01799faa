"""
Split Protocols
===============

  kfold              seeded shuffle, round-robin into k folds
  leave_drug         drugs partitioned into folds; any record touching a
                     held-out drug is test-only
  leave_tissue       one fold per tissue (LeaveOneGroupOut over cell tissues)
  leave_combination  unordered drug pairs partitioned into folds

All indices refer to positions in the labeled record list. ``audit_split``
re-checks the defining property of each protocol.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.model_selection import LeaveOneGroupOut

from config import settings
from utils.errors import DataError, ParameterError, ProtocolError

logger = logging.getLogger(__name__)

KFOLD, LEAVE_DRUG, LEAVE_TISSUE, LEAVE_COMBINATION = "kfold", "leave_drug", "leave_tissue", "leave_combination"
PROTOCOLS = (KFOLD, LEAVE_DRUG, LEAVE_TISSUE, LEAVE_COMBINATION)


@dataclass
class Fold:
    name: str
    train: list
    test: list
    held_out: list = field(default_factory=list)   # drugs, tissues or "a|b" pair keys


@dataclass
class SplitPlan:
    protocol: str
    folds: list
    seed: int | None = None

    def __len__(self):
        return len(self.folds)

    def fold(self, k):
        if not 0 <= k < len(self.folds):
            raise ParameterError(f"fold {k} out of range: {self.protocol} plan has {len(self.folds)} folds")
        return self.folds[k]

    def to_dict(self):
        return {"protocol": self.protocol, "seed": self.seed, "folds": [asdict(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, d):
        return cls(protocol=d["protocol"], seed=d.get("seed"), folds=[Fold(**f) for f in d["folds"]])

    def digest(self):
        """SHA-256 of the fold assignments; equal plans give equal digests."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_json(self, path, audit=None):
        doc = self.to_dict()
        if audit is not None:
            doc["audit"] = audit
        doc["digest"] = self.digest()
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
        return path


def _pair_label(key):
    return "|".join(key)


def kfold_split(records, k=settings.N_FOLDS, seed=settings.SEED):
    if k < 2:
        raise ParameterError(f"k-fold needs k >= 2, got {k}")
    n = len(records)
    if n < k:
        raise ProtocolError(f"k-fold with k={k} needs at least {k} labeled records, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    everything = set(range(n))
    folds = []
    for f in range(k):
        test = sorted(int(i) for i in perm[f::k])
        folds.append(Fold(name=f"fold{f}", train=sorted(everything - set(test)), test=test))
    return SplitPlan(protocol=KFOLD, folds=folds, seed=seed)


def _group_folds(records, groups_of, groups, k, seed, protocol, label):
    """Partition ``groups`` into min(k, len) folds; a record is test when any of its groups is held out."""
    order = np.random.default_rng(seed).permutation(len(groups))
    shuffled = [groups[i] for i in order]
    folds = []
    for f, chunk in enumerate(np.array_split(np.arange(len(shuffled)), min(k, len(shuffled)))):
        held = {shuffled[i] for i in chunk}
        test, train = [], []
        for idx, record in enumerate(records):
            (test if held & groups_of(record) else train).append(idx)
        if not test or not train:
            logger.warning("Skipping %s fold %d: %d train / %d test records", protocol, f, len(train), len(test))
            continue
        folds.append(Fold(name=f"fold{f}", train=train, test=test, held_out=sorted(label(g) for g in held)))
    if not folds:
        raise ProtocolError(f"{protocol} produced no usable folds")
    return SplitPlan(protocol=protocol, folds=folds, seed=seed)


def leave_drug_out_split(records, seed=settings.SEED, k=settings.N_FOLDS):
    drugs = sorted({d for r in records for d in (r.drug_a, r.drug_b)})
    if len(drugs) < 2:
        raise ProtocolError(f"leave-drug-out needs at least 2 distinct drugs, got {len(drugs)}")
    return _group_folds(records, lambda r: {r.drug_a, r.drug_b}, drugs, k, seed, LEAVE_DRUG, str)


def leave_combination_out_split(records, seed=settings.SEED, k=settings.N_FOLDS):
    pairs = sorted({r.pair_key for r in records})
    if len(pairs) < 2:
        raise ProtocolError(f"leave-combination-out needs at least 2 distinct drug pairs, got {len(pairs)}")
    return _group_folds(records, lambda r: {r.pair_key}, pairs, k, seed, LEAVE_COMBINATION, _pair_label)


def _tissue_of(record, tissues):
    tissue = tissues.get(record.cell_line)
    if not tissue:
        raise DataError(f"cell line '{record.cell_line}' has no tissue tag")
    return tissue


def leave_tissue_out_split(records, tissues):
    """One fold per tissue present in the records. ``tissues`` maps cell_id -> tissue."""
    groups = np.array([_tissue_of(r, tissues) for r in records])
    present = sorted(set(groups))
    for tissue in sorted({t for t in tissues.values() if t} - set(present)):
        logger.warning("Tissue '%s' has no labeled records; fold skipped", tissue)
    if len(present) < 2:
        raise ProtocolError(f"leave-tissue-out needs records from at least 2 tissues, got {len(present)}")
    folds = []
    X = np.zeros((len(records), 1))
    for train, test in LeaveOneGroupOut().split(X, groups=groups):
        tissue = str(groups[test[0]])
        folds.append(Fold(name=f"tissue:{tissue}", train=[int(i) for i in train],
                          test=[int(i) for i in test], held_out=[tissue]))
    return SplitPlan(protocol=LEAVE_TISSUE, folds=folds)


def make_split(protocol, records, tissues=None, k=settings.N_FOLDS, seed=settings.SEED):
    if protocol == KFOLD:
        return kfold_split(records, k, seed)
    if protocol == LEAVE_DRUG:
        return leave_drug_out_split(records, seed, k)
    if protocol == LEAVE_COMBINATION:
        return leave_combination_out_split(records, seed, k)
    if protocol == LEAVE_TISSUE:
        return leave_tissue_out_split(records, tissues or {})
    raise ParameterError(f"Unknown split protocol '{protocol}'. Use one of {', '.join(PROTOCOLS)}")


def audit_split(plan, records, tissues=None):
    """
    Verifies train/test disjointness and the protocol's exclusion property.
    Returns a summary dict; raises ProtocolError on the first violation.
    """
    n = len(records)
    for fold in plan.folds:
        train, test = set(fold.train), set(fold.test)
        if train & test:
            raise ProtocolError(f"{fold.name}: {len(train & test)} record(s) in both train and test")
        if any(i < 0 or i >= n for i in train | test):
            raise ProtocolError(f"{fold.name}: index out of range for {n} records")

        if plan.protocol == LEAVE_DRUG:
            train_drugs = {d for i in train for d in (records[i].drug_a, records[i].drug_b)}
            leaked = train_drugs & set(fold.held_out)
            if leaked:
                raise ProtocolError(f"{fold.name}: held-out drug(s) {sorted(leaked)} appear in train")
            for i in test:
                if not {records[i].drug_a, records[i].drug_b} & set(fold.held_out):
                    raise ProtocolError(f"{fold.name}: test record {i} touches no held-out drug")
        elif plan.protocol == LEAVE_COMBINATION:
            train_pairs = {records[i].pair_key for i in train}
            test_pairs = {records[i].pair_key for i in test}
            if train_pairs & test_pairs:
                raise ProtocolError(f"{fold.name}: drug pair(s) shared by train and test")
        elif plan.protocol == LEAVE_TISSUE:
            if tissues is None:
                raise ProtocolError("auditing a leave-tissue-out plan needs the tissue table")
            train_t = {_tissue_of(records[i], tissues) for i in train}
            test_t = {_tissue_of(records[i], tissues) for i in test}
            if train_t & test_t:
                raise ProtocolError(f"{fold.name}: tissue(s) {sorted(train_t & test_t)} in train and test")

    if plan.protocol == KFOLD:
        tests = [fold.test for fold in plan.folds]
        covered = sorted(i for t in tests for i in t)
        if covered != list(range(n)):
            raise ProtocolError("k-fold test sets do not partition the records")
        sizes = [len(t) for t in tests]
        if max(sizes) - min(sizes) > 1:
            raise ProtocolError(f"k-fold test sizes differ by more than 1: {sizes}")

    summary = {
        "protocol": plan.protocol,
        "folds": len(plan.folds),
        "records": n,
        "test_sizes": [len(f.test) for f in plan.folds],
        "passed": True,
    }
    logger.info("Split audit passed: %s, %d folds", plan.protocol, len(plan.folds))
    return summary
