"""
Dataset Bundle Loader
=====================

Reads the three comma-separated tables a synergy run needs:

  drugs     drug_id,smiles
  cells     cell_id,tissue,g1,...,gD      (tissue column optional)
  synergy   drug_a,drug_b,cell_line,loewe

Lines starting with '#' are ignored. Every SMILES is run through the parser
up front; bad SMILES, unknown ids and non-numeric cells are collected into
``bundle.rejects`` instead of aborting the load. Structural problems
(missing column, empty table, duplicate pair keys, ragged expression widths)
raise IngestionError with the offending entries.
"""

import io
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from chem.smiles import parse
from utils.errors import DataError, IngestionError, SmilesError

logger = logging.getLogger(__name__)

DRUG_COLUMNS = ("drug_id", "smiles")
CELL_ID_COLUMN = "cell_id"
TISSUE_COLUMN = "tissue"
SYNERGY_COLUMNS = ("drug_a", "drug_b", "cell_line", "loewe")


@dataclass(frozen=True)
class SynergyRecord:
    drug_a: str
    drug_b: str
    cell_line: str
    loewe: float | None
    label: int | None = None

    @property
    def pair_key(self):
        """Unordered drug pair."""
        return tuple(sorted((self.drug_a, self.drug_b)))

    @property
    def key(self):
        return self.pair_key + (self.cell_line,)


@dataclass
class Reject:
    table: str
    key: str
    reason: str
    value: str = ""


@dataclass
class DatasetBundle:
    drugs: dict                      # drug_id -> SMILES
    cells: dict                      # cell_id -> 1-D expression vector
    tissues: dict                    # cell_id -> tissue tag or None
    records: list                    # SynergyRecord, unlabeled
    rejects: list = field(default_factory=list)
    _labeled: list = field(default=None, repr=False)

    @property
    def cell_width(self):
        return len(next(iter(self.cells.values()))) if self.cells else 0

    @property
    def labeled_records(self):
        """Records with a label; the [0, 10] Loewe band is dropped."""
        if self._labeled is None:
            from data.labels import apply_labels
            self._labeled, _ = apply_labels(self.records)
        return self._labeled

    def cell_matrix(self, cell_ids):
        """Stacks expression vectors, one row per id."""
        missing = [c for c in cell_ids if c not in self.cells]
        if missing:
            raise DataError(f"Unknown cell line id(s): {', '.join(sorted(set(missing)))}")
        return np.vstack([self.cells[c] for c in cell_ids])

    def summary(self):
        return {
            "drugs": len(self.drugs),
            "cells": len(self.cells),
            "records": len(self.records),
            "rejects": len(self.rejects),
            "cell_width": self.cell_width,
        }


def _read_table(path, required, table):
    # whole-line comments only; "#" is also the SMILES triple bond
    try:
        with open(path) as f:
            body = "".join(line for line in f if not line.lstrip().startswith("#"))
    except FileNotFoundError:
        raise IngestionError(f"{table} table {path} does not exist", [path])
    try:
        df = pd.read_csv(io.StringIO(body), skipinitialspace=True, dtype={c: str for c in required})
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{table} table {path} is empty", [path])
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestionError(f"{table} table {path} is missing column(s)", missing)
    if df.empty:
        raise IngestionError(f"{table} table {path} has no rows", [path])
    return df


def load_drugs(path):
    """drug_id -> SMILES for parsable rows, plus rejects for the rest."""
    df = _read_table(path, DRUG_COLUMNS, "drug")
    drugs, rejects = {}, []
    dupes = df["drug_id"][df["drug_id"].duplicated()].tolist()
    if dupes:
        raise IngestionError("duplicate drug ids", dupes)
    for drug_id, smiles in zip(df["drug_id"], df["smiles"]):
        drug_id = str(drug_id).strip()
        if pd.isna(smiles) or not str(smiles).strip():
            rejects.append(Reject("drugs", drug_id, "missing SMILES"))
            continue
        smiles = str(smiles).strip()
        try:
            parse(smiles)
        except SmilesError as e:
            rejects.append(Reject("drugs", drug_id, e.reason, smiles))
            continue
        drugs[drug_id] = smiles
    return drugs, rejects


def load_cells(path):
    """cell_id -> expression vector, cell_id -> tissue."""
    df = _read_table(path, (CELL_ID_COLUMN,), "cell")
    dupes = df[CELL_ID_COLUMN][df[CELL_ID_COLUMN].duplicated()].tolist()
    if dupes:
        raise IngestionError("duplicate cell ids", dupes)
    gene_columns = [c for c in df.columns if c not in (CELL_ID_COLUMN, TISSUE_COLUMN)]
    if not gene_columns:
        raise IngestionError(f"cell table {path} has no expression columns", [path])
    values = df[gene_columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    has_tissue = TISSUE_COLUMN in df.columns

    cells, tissues, rejects = {}, {}, []
    for row, cell_id in enumerate(df[CELL_ID_COLUMN]):
        cell_id = str(cell_id).strip()
        vector = values[row]
        if not np.all(np.isfinite(vector)):
            bad = [gene_columns[j] for j in np.flatnonzero(~np.isfinite(vector))[:5]]
            rejects.append(Reject("cells", cell_id, f"non-numeric expression value(s) in {', '.join(bad)}"))
            continue
        cells[cell_id] = vector
        tissue = df[TISSUE_COLUMN].iloc[row] if has_tissue else None
        tissues[cell_id] = None if tissue is None or pd.isna(tissue) else str(tissue).strip()
    return cells, tissues, rejects


def load_records(path, drugs, cells):
    df = _read_table(path, SYNERGY_COLUMNS, "synergy")
    loewe = pd.to_numeric(df["loewe"], errors="coerce")
    records, rejects = [], []
    seen = {}
    duplicates = []
    for row in range(len(df)):
        a = str(df["drug_a"].iloc[row]).strip()
        b = str(df["drug_b"].iloc[row]).strip()
        c = str(df["cell_line"].iloc[row]).strip()
        label = f"{a},{b},{c}"
        unknown = [x for x in (a, b) if x not in drugs]
        if unknown:
            rejects.append(Reject("synergy", label, f"unknown or rejected drug id(s): {', '.join(unknown)}"))
            continue
        if c not in cells:
            rejects.append(Reject("synergy", label, f"unknown or rejected cell line '{c}'"))
            continue
        score = loewe.iloc[row]
        if pd.isna(score):
            rejects.append(Reject("synergy", label, "missing or non-numeric loewe score"))
            continue
        record = SynergyRecord(drug_a=a, drug_b=b, cell_line=c, loewe=float(score))
        if record.key in seen:
            duplicates.append(f"{label} (line {row + 1} repeats line {seen[record.key] + 1})")
            continue
        seen[record.key] = row
        records.append(record)
    if duplicates:
        raise IngestionError("duplicate unordered (drug_a, drug_b, cell_line) keys", duplicates)
    return records, rejects


def load_bundle(drug_csv, cell_csv, synergy_csv):
    drugs, drug_rejects = load_drugs(drug_csv)
    cells, tissues, cell_rejects = load_cells(cell_csv)
    records, record_rejects = load_records(synergy_csv, drugs, cells)
    rejects = drug_rejects + cell_rejects + record_rejects
    for r in rejects:
        logger.warning("Rejected %s entry %s: %s", r.table, r.key, r.reason)
    if not records:
        raise IngestionError("no usable synergy records after validation", [r.key for r in record_rejects])
    bundle = DatasetBundle(drugs=drugs, cells=cells, tissues=tissues, records=records, rejects=rejects)
    logger.info("Loaded bundle: %s", bundle.summary())
    return bundle


def write_rejects(rejects, path):
    pd.DataFrame(
        [(r.table, r.key, r.reason) for r in rejects], columns=["table", "key", "reason"]
    ).to_csv(path, index=False)
    return path
