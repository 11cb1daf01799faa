"""
Molecular Graphs
================

Builds the two graphs the EGNN reads for each drug:

  atom graph       nodes = atoms, edges = chemical bonds
  atom-bond graph  nodes = atoms then bonds, each bond node joined to its two
                   atoms (bipartite, no atom-atom or bond-bond edges)

Both use one 78-wide feature space. Atom rows are one-hot blocks
(44 symbols + degree 11 + valence 11 + H count 11 + aromatic 1); bond rows
hold 11 informative flags and are zero-padded.
"""

import logging
from dataclasses import dataclass

import numpy as np

from chem.smiles import (
    AROMATIC,
    BOND_DIRECTIONS,
    BOND_ORDERS,
    implicit_hydrogens,
    parse,
    total_valence,
)
from config import settings
from engine.tensor_core import Tensor
from utils.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

ATOM_SYMBOLS = (
    "C", "N", "O", "S", "F", "Si", "P", "Cl", "Br", "Mg", "Na", "Ca", "Fe", "As",
    "Al", "I", "B", "V", "K", "Tl", "Yb", "Sb", "Sn", "Ag", "Pd", "Co", "Se", "Ti",
    "Zn", "H", "Li", "Ge", "Cu", "Au", "Ni", "Cd", "In", "Mn", "Zr", "Cr", "Pt",
    "Hg", "Pb", "Unknown",
)
_SYMBOL_SLOT = {s: i for i, s in enumerate(ATOM_SYMBOLS)}
COUNT_SLOTS = 11   # one-hot range 0..10, larger values land in the last slot

DEGREE_OFFSET = len(ATOM_SYMBOLS)
VALENCE_OFFSET = DEGREE_OFFSET + COUNT_SLOTS
HCOUNT_OFFSET = VALENCE_OFFSET + COUNT_SLOTS
AROMATIC_SLOT = HCOUNT_OFFSET + COUNT_SLOTS
BOND_FEATURE_WIDTH = len(BOND_ORDERS) + len(BOND_DIRECTIONS) + 4

ATOM_KIND, BOND_KIND = "atom", "bond"

assert AROMATIC_SLOT + 1 == settings.NODE_FEATURE_DIM


@dataclass
class FeatureGraph:
    node_features: Tensor      # N x 78
    adjacency_norm: Tensor     # N x N, D^-1/2 (A+I) D^-1/2
    node_kind: list
    adjacency: np.ndarray      # raw 0/1 adjacency, kept for dumps and checks

    @property
    def N(self):
        return len(self.node_kind)

    def edges(self):
        """Undirected edge list (i < j)."""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]


@dataclass
class DualGraph:
    atom_graph: FeatureGraph
    atom_bond_graph: FeatureGraph
    drug_id: str = ""

    @property
    def n_atoms(self):
        return self.atom_graph.N

    @property
    def n_bonds(self):
        return self.atom_bond_graph.N - self.atom_graph.N


def _count_slot(value):
    return min(max(int(value), 0), COUNT_SLOTS - 1)


def featurize_atom(mol, atom_index):
    atom = mol.atoms[atom_index]
    vec = np.zeros(settings.NODE_FEATURE_DIM)
    vec[_SYMBOL_SLOT.get(atom.element, _SYMBOL_SLOT["Unknown"])] = 1.0
    vec[DEGREE_OFFSET + _count_slot(mol.degree(atom_index))] = 1.0
    vec[VALENCE_OFFSET + _count_slot(total_valence(mol, atom_index))] = 1.0
    vec[HCOUNT_OFFSET + _count_slot(implicit_hydrogens(mol, atom_index))] = 1.0
    vec[AROMATIC_SLOT] = 1.0 if atom.aromatic else 0.0
    return vec


def featurize_bond(mol, bond_index):
    bond = mol.bonds[bond_index]
    vec = np.zeros(settings.NODE_FEATURE_DIM)
    vec[BOND_ORDERS.index(bond.order)] = 1.0
    offset = len(BOND_ORDERS)
    vec[offset + BOND_DIRECTIONS.index(bond.direction)] = 1.0
    offset += len(BOND_DIRECTIONS)
    vec[offset] = float(bond.conjugated)
    vec[offset + 1] = float(bond.order == AROMATIC)
    vec[offset + 2] = float(bond.in_ring)
    # owning-component flag: parity of the component the bond belongs to
    vec[offset + 3] = float(mol.atoms[bond.a].component % 2)
    return vec


def normalize_adjacency(adjacency):
    """D~^-1/2 (A + I) D~^-1/2 with D~ the row sums of A + I."""
    a = adjacency.data if isinstance(adjacency, Tensor) else np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency matrix is not symmetric")
    if np.any(np.diag(a) != 0):
        raise ContractError("adjacency matrix must have a zero diagonal")
    if not np.all((a == 0) | (a == 1)):
        raise ContractError("adjacency entries must be 0 or 1")
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    norm = d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]
    # bitwise symmetry; the two triangles can differ in the last ulp otherwise
    norm = np.triu(norm) + np.triu(norm, k=1).T
    return Tensor(norm)


def _require_atoms(mol):
    if mol.n_atoms < 1:
        raise DimensionError(f"molecule '{mol.source}' has no atoms")


def build_atom_graph(mol):
    _require_atoms(mol)
    n = mol.n_atoms
    adjacency = np.zeros((n, n))
    for bond in mol.bonds:
        adjacency[bond.a, bond.b] = adjacency[bond.b, bond.a] = 1.0
    features = np.vstack([featurize_atom(mol, i) for i in range(n)])
    return FeatureGraph(
        node_features=Tensor(features),
        adjacency_norm=normalize_adjacency(adjacency),
        node_kind=[ATOM_KIND] * n,
        adjacency=adjacency,
    )


def build_atom_bond_graph(mol):
    _require_atoms(mol)
    n, m = mol.n_atoms, mol.n_bonds
    adjacency = np.zeros((n + m, n + m))
    for j, bond in enumerate(mol.bonds):
        for end in (bond.a, bond.b):
            adjacency[end, n + j] = adjacency[n + j, end] = 1.0
    rows = [featurize_atom(mol, i) for i in range(n)] + [featurize_bond(mol, j) for j in range(m)]
    return FeatureGraph(
        node_features=Tensor(np.vstack(rows)),
        adjacency_norm=normalize_adjacency(adjacency),
        node_kind=[ATOM_KIND] * n + [BOND_KIND] * m,
        adjacency=adjacency,
    )


def build_dual_graph(mol, drug_id=""):
    return DualGraph(
        atom_graph=build_atom_graph(mol),
        atom_bond_graph=build_atom_bond_graph(mol),
        drug_id=drug_id,
    )


def featurize_smiles(smiles, drug_id=""):
    """parse + build_dual_graph; raises SmilesError on bad input."""
    return build_dual_graph(parse(smiles), drug_id)


def graph_dump(dual):
    """JSON-ready inspection record: node kinds, set feature indices and edges per graph."""
    def _one(graph):
        return {
            "N": graph.N,
            "node_kind": list(graph.node_kind),
            "features": [
                [int(k) for k in np.flatnonzero(row)] for row in graph.node_features.data
            ],
            "edges": [list(e) for e in graph.edges()],
        }

    return {
        "drug_id": dual.drug_id,
        "n_atoms": dual.n_atoms,
        "n_bonds": dual.n_bonds,
        "atom_graph": _one(dual.atom_graph),
        "atom_bond_graph": _one(dual.atom_bond_graph),
    }
