"""Three views of the drug vocabulary.

* internal: a bond-typed message-passing network over each drug's molecule
  graph, mean-pooled into the drug memory ``M_s``;
* interactive: two-layer graph attention over the co-prescription and the
  interaction graphs, fused as ``M_ed = E_ehr + E_ddi @ W_fuse.T``;
* temporal: a per-patient key-value memory of past queries and prescriptions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn

from .ehr.smiles import ATOM_TYPES, BOND_TYPES, MoleculeGraph
from .errors import ConfigError, ShapeError
from .layers import gat_layer, get_activation, uniform_

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MoleculeBatch:
    """All drug molecules flattened into one disjoint graph.

    ``drug_to_mol[k]`` is the molecule slot of drug ``k`` or -1 when the drug
    has no parsed molecule.
    """

    atoms: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    bond: torch.Tensor
    atom_mol: torch.Tensor
    n_mols: int
    drug_to_mol: torch.Tensor

    @property
    def n_missing(self) -> int:
        return int((self.drug_to_mol < 0).sum())


def batch_molecules(molecules: Sequence[MoleculeGraph | None]) -> MoleculeBatch:
    """Flatten per-drug graphs (vocabulary order; ``None`` for missing)."""
    atoms, src, dst, bond, atom_mol, drug_to_mol = [], [], [], [], [], []
    offset = 0
    n_mols = 0
    for g in molecules:
        if g is None or g.n_atoms == 0:
            drug_to_mol.append(-1)
            continue
        atoms.extend(g.atoms)
        for i, j, b in g.directed_edges():
            src.append(i + offset)
            dst.append(j + offset)
            bond.append(b)
        atom_mol.extend([n_mols] * g.n_atoms)
        drug_to_mol.append(n_mols)
        offset += g.n_atoms
        n_mols += 1
    missing = drug_to_mol.count(-1)
    if missing:
        logger.warning("%d drug(s) have no molecule graph; using the shared fallback embedding", missing)
    as_long = lambda x: torch.as_tensor(x, dtype=torch.long)  # noqa: E731
    return MoleculeBatch(as_long(atoms), as_long(src), as_long(dst), as_long(bond), as_long(atom_mol), n_mols, as_long(drug_to_mol))


class MPNN(nn.Module):
    """Message passing with one message matrix per (round, bond type).

    Round ``l``: ``e_i = sum_j W[l, bond(i,j)] h_j`` then
    ``h_i = act(U[l] h_i + e_i + b[l])``. The molecule vector is the mean of
    the final atom states.
    """

    def __init__(self, dim: int, depth: int = 2, n_atom_types: int = len(ATOM_TYPES),
                 n_bond_types: int = len(BOND_TYPES), activation: str = "tanh"):
        super().__init__()
        self.dim = dim
        self.depth = depth
        self.n_bond_types = n_bond_types
        self.atom_embedding = nn.Parameter(uniform_(torch.empty(n_atom_types, dim), dim))
        self.message = nn.Parameter(uniform_(torch.empty(depth, n_bond_types, dim, dim), dim))
        self.update = nn.Parameter(uniform_(torch.empty(depth, dim, dim), dim))
        self.update_bias = nn.Parameter(uniform_(torch.empty(depth, dim), dim))
        self.fallback = nn.Parameter(uniform_(torch.empty(dim), dim))
        self.activation = get_activation(activation)

    def atom_states(self, atoms, src, dst, bond) -> torch.Tensor:
        if len(bond) and int(bond.max()) >= self.n_bond_types:
            raise ConfigError(f"bond type {int(bond.max())} has no message parameters")
        h = self.atom_embedding[atoms]
        for l in range(self.depth):
            messages = torch.zeros_like(h)
            for b in range(self.n_bond_types):
                sel = bond == b
                if bool(sel.any()):
                    messages = messages.index_add(0, dst[sel], h[src[sel]] @ self.message[l, b].T)
            h = self.activation(h @ self.update[l].T + messages + self.update_bias[l])
        return h

    def forward(self, batch: MoleculeBatch) -> torch.Tensor:
        """Drug memory ``M_s``: one row per drug, fallback row where missing."""
        h = self.atom_states(batch.atoms, batch.src, batch.dst, batch.bond)
        sums = h.new_zeros(batch.n_mols, self.dim).index_add(0, batch.atom_mol, h)
        counts = torch.bincount(batch.atom_mol, minlength=batch.n_mols).to(h.dtype)
        mols = sums / counts[:, None]
        rows = torch.cat([mols, self.fallback[None]])
        return rows[torch.where(batch.drug_to_mol >= 0, batch.drug_to_mol, batch.n_mols)]


def molecule_embedding(graph: MoleculeGraph, params: MPNN) -> torch.Tensor:
    """Embedding of a single molecule (mean of final atom states)."""
    if graph.n_atoms == 0:
        raise ValueError("empty molecule graph")
    edges = graph.directed_edges()
    src = torch.as_tensor([e[0] for e in edges], dtype=torch.long)
    dst = torch.as_tensor([e[1] for e in edges], dtype=torch.long)
    bond = torch.as_tensor([e[2] for e in edges], dtype=torch.long)
    h = params.atom_states(torch.as_tensor(graph.atoms, dtype=torch.long), src, dst, bond)
    return h.mean(dim=0)


def build_drug_memory(molecules: Mapping[str, MoleculeGraph], med_codes: Sequence[str], params: MPNN) -> torch.Tensor:
    return params(batch_molecules([molecules.get(c) for c in med_codes]))


class DrugGAT(nn.Module):
    """Stacked graph attention over a binary drug graph with self-loops added."""

    def __init__(self, dim: int, layers: int = 2, heads: int = 1, activation: str = "tanh"):
        super().__init__()
        self.weights = nn.ParameterList(nn.Parameter(uniform_(torch.empty(dim, dim), dim)) for _ in range(layers))
        self.attn = nn.ParameterList(
            nn.Parameter(uniform_(torch.empty(heads, 2 * dim), 2 * dim)) for _ in range(layers)
        )
        self.activation = get_activation(activation)

    def forward(self, h: torch.Tensor, adjacency: torch.Tensor, return_attention: bool = False):
        support = adjacency.to(h.dtype).clone()
        support.fill_diagonal_(1.0)
        attention = []
        for weight, attn in zip(self.weights, self.attn):
            h, alpha = gat_layer(support, h, weight, attn, self.activation, log_bias=False)
            attention.append(alpha)
        return (h, attention) if return_attention else h


def drug_graph_attention(m_s: torch.Tensor, adjacency: torch.Tensor, gat: DrugGAT) -> torch.Tensor:
    return gat(m_s, adjacency)


def fuse_drug_views(e_ehr: torch.Tensor, e_ddi: torch.Tensor, w_fuse: torch.Tensor) -> torch.Tensor:
    if e_ehr.shape != e_ddi.shape or w_fuse.shape != (e_ddi.shape[1], e_ddi.shape[1]):
        raise ShapeError(
            f"cannot fuse E_ehr {tuple(e_ehr.shape)}, E_ddi {tuple(e_ddi.shape)}, W {tuple(w_fuse.shape)}"
        )
    return e_ehr + e_ddi @ w_fuse.T


@dataclass(frozen=True)
class DrugMemory:
    molecular: torch.Tensor  # M_s
    fused: torch.Tensor  # M_ed


class DrugEncoder(nn.Module):
    """Builds ``M_s`` and ``M_ed`` from the current parameters.

    Args:
        use_internal: encode molecules; when False ``M_s`` is the patient
            encoder's medication table (the ``internal`` ablation).
        use_interactive: run the graph views; when False ``M_ed = M_s``
            (the ``interactive`` ablation).
    """

    def __init__(
        self,
        dim: int,
        molecules: MoleculeBatch,
        a_ehr: np.ndarray,
        a_ddi: np.ndarray,
        mpnn_depth: int = 2,
        heads: int = 1,
        activation: str = "tanh",
        use_internal: bool = True,
        use_interactive: bool = True,
    ):
        super().__init__()
        self.molecules = molecules
        self.register_buffer("a_ehr", torch.as_tensor(np.asarray(a_ehr), dtype=torch.float64))
        self.register_buffer("a_ddi", torch.as_tensor(np.asarray(a_ddi), dtype=torch.float64))
        self.mpnn = MPNN(dim, mpnn_depth, activation=activation)
        self.ehr_gat = DrugGAT(dim, 2, heads, activation)
        self.ddi_gat = DrugGAT(dim, 2, heads, activation)
        self.fuse = nn.Parameter(uniform_(torch.empty(dim, dim), dim))
        self.use_internal = use_internal
        self.use_interactive = use_interactive

    def forward(self, med_table: torch.Tensor) -> DrugMemory:
        m_s = self.mpnn(self.molecules) if self.use_internal else med_table
        if not self.use_interactive:
            return DrugMemory(m_s, m_s)
        e_ehr = self.ehr_gat(m_s, self.a_ehr)
        e_ddi = self.ddi_gat(m_s, self.a_ddi)
        return DrugMemory(m_s, fuse_drug_views(e_ehr, e_ddi, self.fuse))


class KeyValueMemory:
    """Append-only per-patient history of (query, prescription multi-hot) pairs."""

    def __init__(self):
        self._keys: list[torch.Tensor] = []
        self._values: list[torch.Tensor] = []

    def __len__(self):
        return len(self._keys)

    def append(self, query: torch.Tensor, medications: torch.Tensor) -> "KeyValueMemory":
        self._keys.append(query)
        self._values.append(medications.to(query.dtype))
        return self

    @property
    def keys(self) -> torch.Tensor:
        return torch.stack(self._keys)

    @property
    def values(self) -> torch.Tensor:
        return torch.stack(self._values)


def kv_memory_append(memory: KeyValueMemory, query: torch.Tensor, medications: torch.Tensor) -> KeyValueMemory:
    return memory.append(query, medications)
