"""
Training & Evaluation Loops
===========================

``train`` minimizes mean BCE + (2/delta)·Σθ² with Adam over shuffled
mini-batches. Every record is fed in both drug orders (A, B) and (B, A).
All randomness (batch order, dropout masks) comes from ``seed``, so two
runs with the same inputs produce identical parameters and history.

``evaluate`` scores a fold's test records with symmetrized probabilities
and returns a MetricsReport.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from analysis.metrics import compute_report
from config import settings
from data.graph_cache import GraphCache
from engine.optim import Adam
from engine.tensor_core import add, backward, bce_loss, constant
from utils.errors import NonFiniteLossError, ProtocolError

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # dicts: epoch, train_loss, val_loss
    epochs_run: int = 0
    final_loss: float | None = None

    def metadata(self):
        return {"epoch": self.epochs_run, "loss": self.final_loss}

    def write_history(self, path):
        df = pd.DataFrame(self.history, columns=["epoch", "train_loss", "val_loss"])
        df.to_csv(path, index=False, float_format="%.10g")
        return path


def _indices(fold_or_indices, attr):
    return list(getattr(fold_or_indices, attr)) if hasattr(fold_or_indices, attr) else list(fold_or_indices)


def _batch_inputs(records, pairs, bundle, cache):
    """pairs: (record index, swapped) -> graphs A, graphs B, cell matrix, label column."""
    drugs_a, drugs_b, cells, labels = [], [], [], []
    for idx, swapped in pairs:
        r = records[idx]
        a, b = (r.drug_b, r.drug_a) if swapped else (r.drug_a, r.drug_b)
        drugs_a.append(cache.get(a))
        drugs_b.append(cache.get(b))
        cells.append(r.cell_line)
        labels.append(float(r.label))
    return drugs_a, drugs_b, bundle.cell_matrix(cells), np.asarray(labels).reshape(-1, 1)


def predict_records(model, bundle, indices, records=None, cache=None, batch_size=settings.BATCH_SIZE):
    """Symmetrized probabilities for the given record indices, in order."""
    records = bundle.labeled_records if records is None else records
    cache = cache or GraphCache(bundle.drugs)
    out = []
    for start in range(0, len(indices), batch_size):
        chunk = [(i, False) for i in indices[start:start + batch_size]]
        drugs_a, drugs_b, cells, _ = _batch_inputs(records, chunk, bundle, cache)
        out.append(model.predict_proba(drugs_a, drugs_b, cells))
    return np.concatenate(out) if out else np.zeros(0)


def _bce_value(probs, labels):
    return bce_loss(constant(probs.reshape(-1, 1)), labels.reshape(-1, 1)).item()


def train(model, bundle, fold, epochs=settings.EPOCHS, batch_size=settings.BATCH_SIZE,
          lr=settings.LEARNING_RATE, delta=settings.L2_DELTA, seed=settings.SEED,
          records=None, cache=None, validate=True, progress=True):
    """
    fold: a Fold (train/test index lists) or a plain list of train indices.
    With ``validate`` and a Fold, the fold's test records give val_loss per epoch.
    """
    records = bundle.labeled_records if records is None else records
    cache = cache or GraphCache(bundle.drugs)
    train_idx = _indices(fold, "train")
    val_idx = list(fold.test) if (validate and hasattr(fold, "test")) else []
    if not train_idx:
        raise ProtocolError("training fold has no records")

    cache.build_all({d for i in train_idx + val_idx for d in (records[i].drug_a, records[i].drug_b)})
    val_labels = np.asarray([records[i].label for i in val_idx], dtype=np.float64)

    params = model.parameters()
    optimizer = Adam(params, lr=lr)
    order_rng = np.random.default_rng(seed)
    dropout_rng = np.random.default_rng(seed + 1)
    stream = [(i, swapped) for i in train_idx for swapped in (False, True)]

    result = TrainResult()
    epoch_bar = tqdm(range(epochs), desc=f"Training {model.variant}", unit="epoch", disable=not progress)
    for epoch in epoch_bar:
        perm = order_rng.permutation(len(stream))
        total, seen = 0.0, 0
        for batch_no, start in enumerate(range(0, len(perm), batch_size)):
            pairs = [stream[j] for j in perm[start:start + batch_size]]
            drugs_a, drugs_b, cells, labels = _batch_inputs(records, pairs, bundle, cache)

            probs = model.forward(drugs_a, drugs_b, cells, training=True, rng=dropout_rng)
            loss = add(bce_loss(probs, labels), model.regularizer(delta))
            if not loss.is_finite():
                raise NonFiniteLossError(epoch + 1, batch_no + 1, lr)

            optimizer.zero_grad()
            backward(loss)
            optimizer.step()

            total += loss.item() * len(pairs)
            seen += len(pairs)

        train_loss = total / seen
        val_loss = None
        if val_idx:
            val_probs = predict_records(model, bundle, val_idx, records, cache, batch_size)
            val_loss = _bce_value(val_probs, val_labels)
        result.history.append({"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss})
        result.epochs_run = epoch + 1
        result.final_loss = train_loss

        if progress:
            val_text = f"{val_loss:.6f}" if val_loss is not None else "n/a"
            tqdm.write(f"  Epoch {epoch + 1:>3}/{epochs} | Train: {train_loss:.6f} | Val: {val_text}")
            epoch_bar.set_postfix({"Train": f"{train_loss:.6f}"})

    logger.info("Trained %s for %d epoch(s), final loss %s", model.variant, result.epochs_run, result.final_loss)
    return result


def evaluate(model, bundle, test_indices, records=None, cache=None, threshold=settings.DECISION_THRESHOLD):
    """MetricsReport over the given records (a Fold uses its test set)."""
    records = bundle.labeled_records if records is None else records
    indices = _indices(test_indices, "test")
    if not indices:
        raise ProtocolError("evaluation set is empty")
    probs = predict_records(model, bundle, indices, records, cache)
    labels = [records[i].label for i in indices]
    report = compute_report(labels, probs, threshold)
    logger.info("Evaluated %s on %d records: %s", model.variant, len(indices), report.summary_line())
    return report
