"""Minimal SMILES reader producing heavy-atom graphs.

Supported: organic-subset atoms (B C N O P S F Cl Br I and aromatic
b c n o p s), bracket atoms over the same elements (isotope, chirality,
hydrogen count and charge are read and discarded), explicit bonds
``- = # : / \\``, ring closures (``1``..``9`` and ``%nn``), branches and
``.`` fragment separators.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import MoleculeParseError

ATOM_TYPES = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "b", "c", "n", "o", "p", "s")
ATOM_INDEX = {s: i for i, s in enumerate(ATOM_TYPES)}
BOND_TYPES = ("single", "double", "triple", "aromatic")
SINGLE, DOUBLE, TRIPLE, AROMATIC = range(4)

_BOND_SYMBOLS = {"-": SINGLE, "/": SINGLE, "\\": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_BRACKET = re.compile(
    r"\[(?P<iso>\d+)?(?P<sym>Cl|Br|[BCNOPSFI]|[bcnops])(?P<chiral>@{1,2})?(?P<h>H\d*)?"
    r"(?P<charge>[+-]+\d*)?(?::\d+)?\]"
)


@dataclass(frozen=True)
class MoleculeGraph:
    """Atoms as type ids; each bond stored once as ``(i, j, bond_type)``."""

    atoms: tuple[int, ...]
    bonds: tuple[tuple[int, int, int], ...]
    drug_code: str

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for i, j, b in self.bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"invalid bond ({i}, {j})")
            if not 0 <= b < len(BOND_TYPES):
                raise ValueError(f"invalid bond type {b}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def directed_edges(self) -> list[tuple[int, int, int]]:
        """Each bond in both directions, as ``(src, dst, type)``."""
        out = []
        for i, j, b in self.bonds:
            out.append((i, j, b))
            out.append((j, i, b))
        return out


def _is_aromatic(atom_type: int) -> bool:
    return ATOM_TYPES[atom_type].islower()


def parse_molecule(smiles: str, drug_code: str = "") -> MoleculeGraph:
    atoms: list[int] = []
    bonds: dict[tuple[int, int], int] = {}
    stack: list[int] = []
    rings: dict[int, tuple[int, int | None, int]] = {}
    prev: int | None = None
    pending_bond: int | None = None
    pending_pos = 0
    pos = 0
    n = len(smiles)

    def add_bond(a, b, explicit, where):
        key = (min(a, b), max(a, b))
        if a == b or key in bonds:
            raise MoleculeParseError("invalid or duplicate bond", smiles, where)
        if explicit is None:
            explicit = AROMATIC if _is_aromatic(atoms[a]) and _is_aromatic(atoms[b]) else SINGLE
        bonds[key] = explicit

    if not smiles:
        raise MoleculeParseError("empty SMILES", smiles, 0)

    while pos < n:
        ch = smiles[pos]
        atom = None
        width = 1
        if ch == "[":
            m = _BRACKET.match(smiles, pos)
            if m is None:
                raise MoleculeParseError("unsupported bracket atom", smiles, pos)
            atom = ATOM_INDEX[m.group("sym")]
            width = m.end() - pos
        elif smiles.startswith(("Cl", "Br"), pos):
            atom = ATOM_INDEX[smiles[pos : pos + 2]]
            width = 2
        elif ch in ATOM_INDEX:
            atom = ATOM_INDEX[ch]

        if atom is not None:
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending_bond, pos)
            elif pending_bond is not None:
                raise MoleculeParseError("bond with no preceding atom", smiles, pending_pos)
            prev, pending_bond = idx, None
            pos += width
            continue

        if ch in _BOND_SYMBOLS:
            if pending_bond is not None or prev is None:
                raise MoleculeParseError("misplaced bond symbol", smiles, pos)
            pending_bond, pending_pos = _BOND_SYMBOLS[ch], pos
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                if not smiles[pos + 1 : pos + 3].isdigit() or len(smiles[pos + 1 : pos + 3]) != 2:
                    raise MoleculeParseError("ring label after % must be two digits", smiles, pos)
                label, width = int(smiles[pos + 1 : pos + 3]), 3
            else:
                label = int(ch)
            if prev is None:
                raise MoleculeParseError("ring closure with no preceding atom", smiles, pos)
            if label in rings:
                other, bond, _ = rings.pop(label)
                if bond is not None and pending_bond is not None and bond != pending_bond:
                    raise MoleculeParseError("conflicting ring-closure bonds", smiles, pos)
                add_bond(other, prev, bond if bond is not None else pending_bond, pos)
            else:
                rings[label] = (prev, pending_bond, pos)
            pending_bond = None
            pos += width
            continue
        elif ch == "(":
            if prev is None or pending_bond is not None:
                raise MoleculeParseError("branch with no preceding atom", smiles, pos)
            stack.append(prev)
        elif ch == ")":
            if not stack or pending_bond is not None:
                raise MoleculeParseError("unbalanced ')'", smiles, pos)
            prev = stack.pop()
        elif ch == ".":
            if stack or pending_bond is not None or prev is None:
                raise MoleculeParseError("misplaced '.'", smiles, pos)
            prev = None
        else:
            raise MoleculeParseError(f"unsupported token {ch!r}", smiles, pos)
        pos += 1

    if pending_bond is not None:
        raise MoleculeParseError("dangling bond", smiles, pending_pos)
    if prev is None:
        raise MoleculeParseError("trailing '.'", smiles, n - 1)
    if stack:
        raise MoleculeParseError("unclosed '('", smiles, n)
    if rings:
        label, (_, _, where) = next(iter(rings.items()))
        raise MoleculeParseError(f"unclosed ring {label}", smiles, where)

    return MoleculeGraph(tuple(atoms), tuple((i, j, b) for (i, j), b in sorted(bonds.items())), drug_code)
