"""Shared fixtures and numerical helpers for the test suite."""

import os
import sys

import numpy as np
import pytest

# Add project root to path
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, ROOT)

from engine.tensor_core import Tensor, backward, constant, mul, sum_all  # noqa: E402
from network.egtsyn import ModelConfig  # noqa: E402

SAMPLE_DIR = os.path.join(ROOT, "sample_data")


# ─── Numerical helpers ───────────────────────────────────────────────────

def numeric_gradient(closure, tensor, h=1e-5):
    """Central differences of a scalar closure w.r.t. every entry of ``tensor``."""
    grad = np.zeros_like(tensor.data)
    for idx in np.ndindex(tensor.shape):
        original = tensor.data[idx]
        tensor.data[idx] = original + h
        plus = closure().item()
        tensor.data[idx] = original - h
        minus = closure().item()
        tensor.data[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(closure, tensors):
    for t in tensors:
        t.zero_grad()
    backward(closure())
    return [t.grad.copy() for t in tensors]


def assert_gradients_match(closure, tensors, rtol=1e-5, atol=1e-8):
    for t, analytic in zip(tensors, analytic_gradients(closure, tensors)):
        np.testing.assert_allclose(analytic, numeric_gradient(closure, t), rtol=rtol, atol=atol)


def weighted_sum(out, seed=7):
    """Scalar readout with non-uniform upstream gradient."""
    w = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
    return sum_all(mul(out, constant(w)))


def leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# ─── Random SMILES generator ─────────────────────────────────────────────

ORGANIC = ("C", "N", "O", "S", "Cl", "Br", "F")


def _ring_token(label):
    return str(label) if label < 10 else f"%{label:02d}"


def random_smiles(rng, max_atoms=12):
    """
    Random, syntactically valid SMILES with branches, bond symbols and ring
    closures. Tracks bonds as it goes so no closure duplicates an existing
    bond. Returns (smiles, atom_count, bond_count).
    """
    tokens = []
    prev = None
    stack = []
    bonded = set()
    open_rings = {}          # label -> atom index
    atoms = 0
    target = int(rng.integers(1, max_atoms + 1))

    def bond(a, b):
        bonded.add((min(a, b), max(a, b)))

    while atoms < target:
        if prev is not None:
            if rng.random() < 0.15 and atoms < target - 1:
                tokens.append("(")
                stack.append(prev)
            elif stack and rng.random() < 0.2 and tokens[-1] != "(":
                tokens.append(")")
                prev = stack.pop()
            if rng.random() < 0.2:
                tokens.append(str(rng.choice(["-", "=", "#"])))
        symbol = str(rng.choice(ORGANIC))
        if rng.random() < 0.1:
            symbol = f"[{symbol}-]" if symbol in ("Cl", "Br", "F") else f"[{symbol}H]"
        tokens.append(symbol)
        current = atoms
        atoms += 1
        if prev is not None:
            bond(prev, current)
        prev = current

        closable = [l for l, s in open_rings.items() if s != current and (min(s, current), max(s, current)) not in bonded]
        if closable and rng.random() < 0.4:
            label = closable[0]
            bond(open_rings.pop(label), current)
            tokens.append(_ring_token(label))
        elif len(open_rings) < 2 and rng.random() < 0.2:
            label = next(l for l in (1, 2, 3, 12, 15) if l not in open_rings)
            open_rings[label] = current
            tokens.append(_ring_token(label))
    tokens.extend(")" * len(stack))
    if stack:
        prev = stack[0]
    if open_rings:
        # two fresh atoms so the closing atom is bonded to nothing but its neighbour
        tokens.append("CC")
        bond(prev, atoms)
        bond(atoms, atoms + 1)
        atoms += 2
        for label, start in open_rings.items():
            bond(start, atoms - 1)
            tokens.append(_ring_token(label))
    return "".join(tokens), atoms, len(bonded)


# ─── Fixtures ────────────────────────────────────────────────────────────

@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sample_paths():
    return tuple(os.path.join(SAMPLE_DIR, name) for name in ("drugs.csv", "cells.csv", "synergy.csv"))


@pytest.fixture
def sample_bundle(sample_paths):
    from data.loader import load_bundle
    return load_bundle(*sample_paths)


def small_config(variant="EGTSyn", seed=0, cell_input_dim=8, **overrides):
    base = dict(variant=variant, gcn_layers=2, gcn_hidden=8, graph_embed_dim=6, attention_heads=2,
                ffn_hidden=8, cell_input_dim=cell_input_dim, cell_hidden=(10, 8), cell_embed_dim=6,
                head_hidden=(12, 6), dropout_rate=0.2, pooling="max", seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_config():
    return small_config()
