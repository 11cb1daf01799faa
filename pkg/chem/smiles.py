"""
SMILES Parser
=============

Reads the practical subset of SMILES that drug tables use into a heavy-atom
``Molecule``:

  - organic-subset atoms (B C N O P S F Cl Br I, aromatic b c n o p s)
  - bracket atoms; isotope and chirality are read and ignored, H count and
    charge are kept
  - bonds - = # : / \\ (slashes only record a direction)
  - branches, ring closures (digits and %nn), and "." component separators

There is no aromaticity perception and no kekulization: aromaticity comes
only from lowercase symbols (or ':'), so features need just a flag.
"""

import logging
import math
import re
from dataclasses import dataclass, field, replace

from utils.errors import LexError, ParseError

logger = logging.getLogger(__name__)

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)
NONE, UP, DOWN = "none", "up", "down"
BOND_DIRECTIONS = (NONE, UP, DOWN)

BOND_SYMBOLS = {
    "-": (SINGLE, NONE),
    "=": (DOUBLE, NONE),
    "#": (TRIPLE, NONE),
    ":": (AROMATIC, NONE),
    "/": (SINGLE, UP),
    "\\": (SINGLE, DOWN),
}
ORDER_VALUE = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# Standard valences used to fill implicit hydrogens on organic-subset atoms
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn
Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La
Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po
At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr
""".split())

_BRACKET_RE = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|se|as|te|[bcnops])"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>\+\d+|-\d+|\++|-+)?"
    r"(?::\d+)?$"
)

# Token kinds
ATOM, BOND, OPEN, CLOSE, RING, DOT = "atom", "bond", "open", "close", "ring", "dot"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int   # byte offset into the UTF-8 source


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None   # set for bracket atoms only
    index: int = 0
    component: int = 0

    @property
    def bracketed(self):
        return self.explicit_h is not None


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: str = SINGLE
    direction: str = NONE
    in_ring: bool = False
    conjugated: bool = False
    explicit: bool = False   # written with a bond symbol

    def other(self, atom_index):
        return self.b if atom_index == self.a else self.a


@dataclass
class Molecule:
    atoms: list
    bonds: list
    source: str = ""
    _neighbors: list = field(default=None, repr=False, compare=False)

    @property
    def n_atoms(self):
        return len(self.atoms)

    @property
    def n_bonds(self):
        return len(self.bonds)

    def bonds_of(self, atom_index):
        """Indices of the bonds touching an atom."""
        if self._neighbors is None:
            table = [[] for _ in self.atoms]
            for j, bond in enumerate(self.bonds):
                table[bond.a].append(j)
                table[bond.b].append(j)
            self._neighbors = table
        return self._neighbors[atom_index]

    def degree(self, atom_index):
        return len(self.bonds_of(atom_index))

    def permuted(self, order):
        """
        Relabels atoms: new atom i is old atom ``order[i]``. Bond order in the
        list is kept; endpoints are remapped.
        """
        if sorted(order) != list(range(self.n_atoms)):
            raise ValueError("order must be a permutation of the atom indices")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = [replace(self.atoms[old], index=new) for new, old in enumerate(order)]
        bonds = [replace(b, a=new_index[b.a], b=new_index[b.b]) for b in self.bonds]
        return Molecule(atoms=atoms, bonds=bonds, source=self.source)


def _byte_offset(text, char_index):
    return len(text[:char_index].encode("utf-8"))


# ═══════════════════════════════════════════════════════════════════════════
#  LEXER
# ═══════════════════════════════════════════════════════════════════════════

def tokenize(smiles):
    """Splits a SMILES string into atom, bond, branch, ring and dot tokens."""
    if not smiles:
        raise LexError("empty SMILES string", smiles, 0)
    tokens = []
    i = 0
    n = len(smiles)
    while i < n:
        ch = smiles[i]
        offset = _byte_offset(smiles, i)
        if ch == "[":
            end = smiles.find("]", i + 1)
            if end < 0:
                raise LexError("unterminated bracket atom", smiles, offset)
            tokens.append(Token(ATOM, smiles[i:end + 1], offset))
            i = end + 1
        elif smiles.startswith(("Cl", "Br"), i):
            tokens.append(Token(ATOM, smiles[i:i + 2], offset))
            i += 2
        elif ch in "BCNOPSFI" or ch in AROMATIC_ORGANIC:
            tokens.append(Token(ATOM, ch, offset))
            i += 1
        elif ch in BOND_SYMBOLS:
            tokens.append(Token(BOND, ch, offset))
            i += 1
        elif ch == "(":
            tokens.append(Token(OPEN, ch, offset))
            i += 1
        elif ch == ")":
            tokens.append(Token(CLOSE, ch, offset))
            i += 1
        elif ch.isdigit() and ch.isascii():
            tokens.append(Token(RING, ch, offset))
            i += 1
        elif ch == "%":
            digits = smiles[i + 1:i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise LexError("'%' must be followed by two digits", smiles, offset)
            tokens.append(Token(RING, digits, offset))
            i += 3
        elif ch == ".":
            tokens.append(Token(DOT, ch, offset))
            i += 1
        else:
            raise LexError(f"unrecognized character {ch!r}", smiles, offset)
    return tokens


def _parse_charge(text):
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    if len(text) > 1 and text[1:].isdigit():
        return sign * int(text[1:])
    return sign * len(text)


def _read_atom(token, smiles, index, component):
    text = token.text
    if not text.startswith("["):
        aromatic = text.islower()
        element = text.capitalize() if aromatic else text
        return Atom(element=element, aromatic=aromatic, index=index, component=component)

    match = _BRACKET_RE.match(text[1:-1])
    if match is None:
        raise ParseError(f"malformed bracket atom {text}", smiles, token.offset)
    symbol = match.group("symbol")
    aromatic = symbol in AROMATIC_BRACKET and symbol.islower()
    element = symbol.capitalize() if aromatic else symbol
    if element not in ELEMENTS:
        raise ParseError(f"unknown element '{symbol}'", smiles, token.offset)
    hcount = match.group("hcount")
    explicit_h = 0 if not hcount else (int(hcount[1:]) if len(hcount) > 1 else 1)
    return Atom(
        element=element,
        aromatic=aromatic,
        formal_charge=_parse_charge(match.group("charge")),
        explicit_h=explicit_h,
        index=index,
        component=component,
    )


# ═══════════════════════════════════════════════════════════════════════════
#  PARSER
# ═══════════════════════════════════════════════════════════════════════════

def parse(smiles):
    """Parses a SMILES string into a Molecule with ring and conjugation flags set."""
    tokens = tokenize(smiles)
    atoms = []
    bonds = []
    bonded = set()
    branch_stack = []      # (atom index, offset of '(')
    open_rings = {}        # label -> (atom index, bond token or None, offset)
    prev = None
    pending = None         # bond token waiting for its second atom
    component = 0

    def add_bond(a, b, bond_token, at_offset):
        key = (min(a, b), max(a, b))
        if a == b:
            raise ParseError("ring closure bonds an atom to itself", smiles, at_offset)
        if key in bonded:
            raise ParseError("duplicate bond between the same two atoms", smiles, at_offset)
        bonded.add(key)
        if bond_token is not None:
            order, direction = BOND_SYMBOLS[bond_token.text]
            explicit = True
        else:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            order, direction = (AROMATIC if both_aromatic else SINGLE), NONE
            explicit = False
        bonds.append(Bond(a=a, b=b, order=order, direction=direction, explicit=explicit))

    for token in tokens:
        if token.kind == ATOM:
            index = len(atoms)
            atoms.append(_read_atom(token, smiles, index, component))
            if prev is not None:
                add_bond(prev, index, pending, token.offset)
            elif pending is not None:
                raise ParseError("bond symbol with no preceding atom", smiles, pending.offset)
            pending = None
            prev = index
        elif token.kind == BOND:
            if pending is not None:
                raise ParseError("two consecutive bond symbols", smiles, token.offset)
            if prev is None:
                raise ParseError("bond symbol with no preceding atom", smiles, token.offset)
            pending = token
        elif token.kind == OPEN:
            if prev is None:
                raise ParseError("branch opened before any atom", smiles, token.offset)
            if pending is not None:
                raise ParseError("bond symbol with no following atom", smiles, pending.offset)
            branch_stack.append((prev, token.offset))
        elif token.kind == CLOSE:
            if not branch_stack:
                raise ParseError("unbalanced parentheses: unmatched ')'", smiles, token.offset)
            if pending is not None:
                raise ParseError("bond symbol with no following atom", smiles, pending.offset)
            if prev == branch_stack[-1][0]:
                raise ParseError("empty branch", smiles, token.offset)
            prev = branch_stack.pop()[0]
        elif token.kind == RING:
            if prev is None:
                raise ParseError("ring-closure digit before any atom", smiles, token.offset)
            label = token.text
            if label in open_rings:
                start, start_bond, _ = open_rings.pop(label)
                bond_token = pending or start_bond
                if pending is not None and start_bond is not None and pending.text != start_bond.text:
                    if BOND_SYMBOLS[pending.text][0] != BOND_SYMBOLS[start_bond.text][0]:
                        raise ParseError("conflicting ring-closure bond symbols", smiles, token.offset)
                add_bond(start, prev, bond_token, token.offset)
            else:
                open_rings[label] = (prev, pending, token.offset)
            pending = None
        elif token.kind == DOT:
            if pending is not None:
                raise ParseError("bond symbol with no following atom", smiles, pending.offset)
            prev = None
            component += 1

    if pending is not None:
        raise ParseError("bond symbol with no following atom", smiles, pending.offset)
    if branch_stack:
        raise ParseError("unbalanced parentheses: unclosed '('", smiles, branch_stack[-1][1])
    if open_rings:
        label, (_, _, offset) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise ParseError(f"unmatched ring-closure digit '{label}'", smiles, offset)
    if not atoms:
        raise ParseError("no atoms in SMILES", smiles, 0)

    mol = Molecule(atoms=_renumber_components(atoms, bonds), bonds=bonds, source=smiles)
    ring_flags = ring_membership(mol)
    # implicit aromatic links outside any ring (biphenyl-style) are single bonds
    mol.bonds = [
        replace(b, in_ring=flag,
                order=SINGLE if (b.order == AROMATIC and not flag and not b.explicit) else b.order)
        for b, flag in zip(mol.bonds, ring_flags)
    ]
    conj = conjugation(mol)
    mol.bonds = [replace(b, conjugated=flag) for b, flag in zip(mol.bonds, conj)]
    mol._neighbors = None
    return mol


def _renumber_components(atoms, bonds):
    """Connected components numbered in order of their lowest atom index."""
    parent = list(range(len(atoms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for bond in bonds:
        ra, rb = find(bond.a), find(bond.b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    labels = {}
    renumbered = []
    for atom in atoms:
        root = find(atom.index)
        if root not in labels:
            labels[root] = len(labels)
        renumbered.append(replace(atom, component=labels[root]))
    return renumbered


# ═══════════════════════════════════════════════════════════════════════════
#  DERIVED PROPERTIES
# ═══════════════════════════════════════════════════════════════════════════

def _bond_order_sum(mol, atom_index):
    return sum(ORDER_VALUE[mol.bonds[j].order] for j in mol.bonds_of(atom_index))


def implicit_hydrogens(mol, atom_index):
    """
    Hydrogen count for an atom. Bracket atoms report their written H count;
    organic-subset atoms are filled up to the lowest default valence that
    covers their bond-order sum (aromatic bonds count 1.5, result floored).
    """
    atom = mol.atoms[atom_index]
    if atom.bracketed:
        return atom.explicit_h
    valences = DEFAULT_VALENCES.get(atom.element)
    if valences is None:
        return 0
    total = _bond_order_sum(mol, atom_index)
    target = next((v for v in valences if v >= total), valences[-1])
    count = max(0, math.floor(target - total - abs(atom.formal_charge)))
    if is_over_valent(mol, atom_index):
        logger.warning("Over-valent atom %d (%s) in %s", atom_index, atom.element, mol.source)
    return count


def is_over_valent(mol, atom_index):
    """True when a non-aromatic organic atom carries more bond order than any default valence."""
    atom = mol.atoms[atom_index]
    valences = DEFAULT_VALENCES.get(atom.element)
    if atom.bracketed or atom.aromatic or valences is None:
        return False
    return _bond_order_sum(mol, atom_index) > valences[-1]


def total_valence(mol, atom_index):
    """Floored bond-order sum plus hydrogens."""
    return math.floor(_bond_order_sum(mol, atom_index)) + implicit_hydrogens(mol, atom_index)


def ring_membership(mol):
    """
    Per-bond ring flags: a bond lies on a cycle iff it is not a bridge.
    Bridges are found with an iterative low-link DFS.
    """
    n = mol.n_atoms
    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * mol.n_bonds
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frame: (atom, bond used to enter it, iterator over incident bonds)
        stack = [(root, -1, iter(mol.bonds_of(root)))]
        while stack:
            atom, via, edges = stack[-1]
            advanced = False
            for j in edges:
                if j == via:
                    continue
                nxt = mol.bonds[j].other(atom)
                if disc[nxt] < 0:
                    disc[nxt] = low[nxt] = timer
                    timer += 1
                    stack.append((nxt, j, iter(mol.bonds_of(nxt))))
                    advanced = True
                    break
                low[atom] = min(low[atom], disc[nxt])
            if advanced:
                continue
            stack.pop()
            if stack:
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[atom])
                if low[atom] > disc[parent]:
                    is_bridge[via] = True
    return [not bridge for bridge in is_bridge]


def conjugation(mol):
    """
    Per-bond conjugation flags: aromatic bonds, plus any bond whose two
    endpoints each carry another double/triple/aromatic bond (single links
    between unsaturations, and unsaturations next to one another).
    """
    def unsaturated(j):
        return mol.bonds[j].order != SINGLE

    flags = []
    for j, bond in enumerate(mol.bonds):
        if bond.order == AROMATIC:
            flags.append(True)
            continue
        a_side = any(unsaturated(k) for k in mol.bonds_of(bond.a) if k != j)
        b_side = any(unsaturated(k) for k in mol.bonds_of(bond.b) if k != j)
        if bond.order == SINGLE:
            flags.append(a_side and b_side)
        else:
            flags.append(_multiple_bond_conjugated(mol, j))
    return flags


def _multiple_bond_conjugated(mol, j):
    """A double/triple bond is conjugated when a single bond links it to another unsaturation."""
    bond = mol.bonds[j]
    for end in (bond.a, bond.b):
        for k in mol.bonds_of(end):
            if k == j:
                continue
            if mol.bonds[k].order != SINGLE:
                return True
            far = mol.bonds[k].other(end)
            if any(mol.bonds[m].order != SINGLE for m in mol.bonds_of(far) if m != k):
                return True
    return False
