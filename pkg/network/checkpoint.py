"""
Checkpoint I/O.

A checkpoint is a JSON document:

    {"format_version": 1,
     "config": {...ModelConfig...},
     "metadata": {"epoch": ..., "loss": ...},
     "parameters": [{"name": ..., "shape": [r, c], "values": [...row-major...]}, ...]}

Floats are written with Python's shortest round-trip repr, so a reload
reproduces every parameter bit for bit.
"""

import json
import logging
import os

import numpy as np

from network.egtsyn import ModelConfig, build_variant
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def checkpoint_document(model, metadata=None):
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "metadata": dict(metadata or {}),
        "parameters": [
            {"name": name, "shape": list(p.shape), "values": [float(v) for v in p.data.reshape(-1)]}
            for name, p in model.named_parameters()
        ],
    }


def save_checkpoint(model, path, metadata=None):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(checkpoint_document(model, metadata), f, allow_nan=False)
    logger.info("Saved %s checkpoint (%d parameters) to %s", model.variant, model.param_count(), path)
    return path


def _entry_fields(entry):
    if not isinstance(entry, dict) or not {"name", "shape", "values"} <= entry.keys() \
            or not isinstance(entry["name"], str):
        raise CheckpointError(f"Checkpoint parameter entry needs name, shape and values: {str(entry)[:80]}")
    return entry["name"], entry["shape"], entry["values"]


def model_from_document(doc):
    if not isinstance(doc, dict):
        raise CheckpointError(f"Checkpoint document must be a JSON object, got {type(doc).__name__}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    for key in ("config", "parameters"):
        if key not in doc:
            raise CheckpointError(f"Checkpoint is missing '{key}'")
    if not isinstance(doc["config"], dict) or not isinstance(doc["parameters"], list):
        raise CheckpointError("Checkpoint 'config' must be an object and 'parameters' a list")

    model = build_variant(ModelConfig.from_dict(doc["config"]))
    expected = model.parameters()
    seen = set()
    for entry in doc["parameters"]:
        name, shape, values = _entry_fields(entry)
        if name not in expected:
            raise CheckpointError(f"Checkpoint parameter '{name}' does not exist in a {model.variant} model")
        if name in seen:
            raise CheckpointError(f"Checkpoint parameter '{name}' appears twice")
        seen.add(name)
        param = expected[name]
        shape = tuple(shape) if isinstance(shape, list) else shape
        if shape != param.shape:
            raise CheckpointError(f"Parameter '{name}' has shape {shape}, model expects {param.shape}")
        try:
            values = np.asarray(values, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"Parameter '{name}' has non-numeric values: {e}") from e
        if values.size != param.data.size:
            raise CheckpointError(f"Parameter '{name}' holds {values.size} values, shape needs {param.data.size}")
        param.data[...] = values.reshape(shape)
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"Checkpoint lacks parameters: {', '.join(sorted(missing))}")
    return model, dict(doc.get("metadata", {}))


def load_checkpoint(path):
    """Returns (model, metadata)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} is not a valid checkpoint document: {e}") from e
    model, metadata = model_from_document(doc)
    logger.info("Loaded %s checkpoint from %s", model.variant, path)
    return model, metadata
