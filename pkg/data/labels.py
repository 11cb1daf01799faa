"""
Synergy labels from Loewe scores.

  loewe > SYNERGY_THRESHOLD      -> 1 (synergistic)
  loewe < ANTAGONISM_THRESHOLD   -> 0
  anything in between            -> excluded (noisy band)
"""

import math
from dataclasses import replace

from config import settings
from utils.errors import DataError


def label_for(loewe, synergy_threshold=settings.SYNERGY_THRESHOLD,
              antagonism_threshold=settings.ANTAGONISM_THRESHOLD):
    if loewe is None or (isinstance(loewe, float) and math.isnan(loewe)):
        raise DataError("synergy record has no Loewe score")
    if loewe > synergy_threshold:
        return 1
    if loewe < antagonism_threshold:
        return 0
    return None


def apply_labels(records, synergy_threshold=settings.SYNERGY_THRESHOLD,
                 antagonism_threshold=settings.ANTAGONISM_THRESHOLD):
    """Returns (labeled records in input order, excluded count)."""
    labeled = []
    excluded = 0
    for record in records:
        label = label_for(record.loewe, synergy_threshold, antagonism_threshold)
        if label is None:
            excluded += 1
        else:
            labeled.append(replace(record, label=label))
    return labeled, excluded


def label_stats(records, synergy_threshold=settings.SYNERGY_THRESHOLD,
                antagonism_threshold=settings.ANTAGONISM_THRESHOLD):
    """Label distribution over raw records."""
    labels = [label_for(r.loewe, synergy_threshold, antagonism_threshold) for r in records]
    positive = sum(1 for l in labels if l == 1)
    negative = sum(1 for l in labels if l == 0)
    excluded = len(labels) - positive - negative
    kept = positive + negative
    return {
        "total": len(labels),
        "positive": positive,
        "negative": negative,
        "excluded": excluded,
        "positive_rate": round(positive / kept, 4) if kept else 0.0,
    }
