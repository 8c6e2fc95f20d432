"""Longitudinal patient representation over a dynamic network.

Per visit: gather code embeddings for the snapshot's nodes, run a stack of
graph-attention layers whose weight matrices are advanced from visit to
visit by a recurrent cell, mean-pool node states by code type, feed the
pooled vectors to per-type GRUs and map the diagnosis/procedure states to
the patient query ``q_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dynamic_graph import DynamicNetwork, NodeType
from .errors import ShapeError
from .layers import gat_layer, get_activation, uniform_


class EmbeddingTables(nn.Module):
    def __init__(self, n_diag: int, n_proc: int, n_med: int, dim: int):
        super().__init__()
        self.dim = dim
        self.diag = nn.Parameter(uniform_(torch.empty(n_diag, dim), dim))
        self.proc = nn.Parameter(uniform_(torch.empty(n_proc, dim), dim))
        self.med = nn.Parameter(uniform_(torch.empty(n_med, dim), dim))

    @property
    def tables(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.diag, self.proc, self.med

    def embed_nodes(self, codes: torch.Tensor, node_types: torch.Tensor) -> torch.Tensor:
        """One row per node, taken from the table matching the node's type."""
        positions, rows = [], []
        for kind, table in zip(NodeType, self.tables):
            sel = torch.nonzero(node_types == kind, as_tuple=True)[0]
            positions.append(sel)
            rows.append(table[codes[sel]])
        rows = torch.cat(rows)
        return rows.new_zeros(len(codes), self.dim).index_copy(0, torch.cat(positions), rows)


def embed_visit(d_t, p_t, m_prev, tables: EmbeddingTables) -> torch.Tensor:
    """Embed a visit from its multi-hot vectors, rows in snapshot node order.

    Equivalent to ``diag(x) @ E`` restricted to active codes, per type.
    """
    rows = []
    for vec, table in zip((d_t, p_t, m_prev), tables.tables):
        vec = torch.as_tensor(vec)
        if vec.ndim != 1 or vec.shape[0] != table.shape[0]:
            raise ShapeError(f"multi-hot of shape {tuple(vec.shape)} does not match table with {table.shape[0]} rows")
        rows.append(table[torch.nonzero(vec > 0.5, as_tuple=True)[0]])
    return torch.cat(rows, dim=0)


class EvolveGATLayer(nn.Module):
    """Graph-attention layer whose ``dim x dim`` weight is evolved by an LSTM cell.

    The cell runs over the columns of the weight matrix, each column acting
    as both input and previous hidden state. ``W_0`` is learnable and starts
    as the all-ones matrix.
    """

    def __init__(self, dim: int, heads: int = 1, index: int = 0):
        super().__init__()
        self.dim = dim
        self.index = index
        self.initial_weight = nn.Parameter(torch.ones(dim, dim))
        self.cell = nn.LSTMCell(dim, dim)
        for p in self.cell.parameters():
            uniform_(p, dim)
        self.attn = nn.Parameter(uniform_(torch.empty(heads, 2 * dim), 2 * dim))

    def initial_state(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.initial_weight, torch.zeros_like(self.initial_weight)


def evolve_weights(layer: EvolveGATLayer, weight: torch.Tensor, cell_state: torch.Tensor):
    """Advance ``weight`` by one step of the layer's recurrent cell.

    Returns ``(new_weight, new_cell_state)``; both are ``dim x dim`` with one
    column per cell lane.
    """
    cols = weight.T
    h, c = layer.cell(cols, (cols, cell_state.T))
    return h.T, c.T


def pool_by_type(h: torch.Tensor, node_types: torch.Tensor):
    """Mean node state per code type ``(diag, proc, med)``; empty type gives zeros."""
    pooled = []
    for kind in NodeType:
        sel = node_types == kind
        if bool(sel.any()):
            pooled.append(h[sel].mean(dim=0))
        else:
            pooled.append(torch.zeros(h.shape[1], dtype=h.dtype))
    return tuple(pooled)


@dataclass
class EncoderTrace:
    """Intermediate values recorded during a forward pass, for inspection and tests."""

    weights: list[list[torch.Tensor]] = field(default_factory=list)
    attention: list[list[torch.Tensor]] = field(default_factory=list)
    node_states: list[torch.Tensor] = field(default_factory=list)
    pooled: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = field(default_factory=list)
    gat_calls: int = 0


@dataclass(frozen=True)
class SnapshotTensors:
    codes: torch.Tensor
    node_types: torch.Tensor
    adjacency: torch.Tensor


def snapshot_tensors(network: DynamicNetwork) -> list[SnapshotTensors]:
    return [
        SnapshotTensors(
            torch.as_tensor(s.codes, dtype=torch.long),
            torch.as_tensor(s.node_types, dtype=torch.long),
            torch.as_tensor(np.asarray(s.adjacency), dtype=torch.float64),
        )
        for s in network.snapshots
    ]


class PatientEncoder(nn.Module):
    """Dynamic network -> sequence of patient queries ``q_1 .. q_T``.

    Args:
        evolve: advance GAT weights with the recurrent cell; when False every
            visit uses ``W_0`` (the ``lstm`` ablation).
        use_graph: run the EvolveGAT stack; when False raw code embeddings are
            pooled directly (the ``dynn`` ablation).
    """

    def __init__(
        self,
        n_diag: int,
        n_proc: int,
        n_med: int,
        dim: int,
        gat_layers: int = 2,
        heads: int = 1,
        activation: str = "tanh",
        dropout: float = 0.0,
        gat_dropout: bool = False,
        evolve: bool = True,
        use_graph: bool = True,
    ):
        super().__init__()
        self.dim = dim
        self.tables = EmbeddingTables(n_diag, n_proc, n_med, dim)
        self.layers = nn.ModuleList(EvolveGATLayer(dim, heads, i) for i in range(gat_layers))
        self.gru_d = nn.GRUCell(dim, dim)
        self.gru_p = nn.GRUCell(dim, dim)
        self.gru_m = nn.GRUCell(dim, dim)
        for gru in (self.gru_d, self.gru_p, self.gru_m):
            for p in gru.parameters():
                uniform_(p, dim)
        self.query = nn.Linear(2 * dim, dim)
        uniform_(self.query.weight, dim)
        uniform_(self.query.bias, dim)
        self.activation_name = activation
        self.activation = get_activation(activation)
        self.dropout = dropout
        self.gat_dropout = gat_dropout
        self.evolve = evolve
        self.use_graph = use_graph

    def encode_snapshots(self, snapshots: list[SnapshotTensors], trace: EncoderTrace | None = None) -> list[torch.Tensor]:
        """Node-state matrices ``H_t`` for every visit."""
        dtype = self.tables.diag.dtype
        states = [layer.initial_state() for layer in self.layers]
        outputs = []
        for snap in snapshots:
            h = self.tables.embed_nodes(snap.codes, snap.node_types)
            h = F.dropout(h, self.dropout, self.training)
            if self.use_graph:
                adjacency = snap.adjacency.to(dtype)
                visit_weights, visit_attn = [], []
                for i, layer in enumerate(self.layers):
                    weight, cell = states[i]
                    if self.evolve:
                        weight, cell = evolve_weights(layer, weight, cell)
                        states[i] = (weight, cell)
                    if i > 0 and self.gat_dropout:
                        h = F.dropout(h, self.dropout, self.training)
                    h, alpha = gat_layer(adjacency, h, weight, layer.attn, self.activation)
                    visit_weights.append(weight)
                    visit_attn.append(alpha)
                if trace is not None:
                    trace.weights.append(visit_weights)
                    trace.attention.append(visit_attn)
                    trace.gat_calls += len(self.layers)
            outputs.append(h)
            if trace is not None:
                trace.node_states.append(h)
        return outputs

    def forward(self, snapshots: list[SnapshotTensors], trace: EncoderTrace | None = None) -> torch.Tensor:
        """``(T, dim)`` stacked patient queries."""
        dtype = self.tables.diag.dtype
        hd = torch.zeros(1, self.dim, dtype=dtype)
        hp = torch.zeros(1, self.dim, dtype=dtype)
        hm = torch.zeros(1, self.dim, dtype=dtype)
        queries = []
        for t, (h, snap) in enumerate(zip(self.encode_snapshots(snapshots, trace), snapshots)):
            pd, pp, pm = pool_by_type(h, snap.node_types)
            if trace is not None:
                trace.pooled.append((pd, pp, pm))
            hd = self.gru_d(pd[None], hd)
            hp = self.gru_p(pp[None], hp)
            if t > 0:
                # snapshot t holds visit t-1's medications
                hm = self.gru_m(pm[None], hm)
            queries.append(self.activation(self.query(torch.cat([hd[0], hp[0]]))))
        self.last_medication_state = hm[0]
        return torch.stack(queries)


def temporal_encode(gru: nn.GRUCell, sequence: list[torch.Tensor], dim: int) -> torch.Tensor:
    """Final GRU state after consuming ``sequence``; zeros for an empty one."""
    h = torch.zeros(1, dim, dtype=gru.weight_ih.dtype)
    for x in sequence:
        h = gru(x[None], h)
    return h[0]


def patient_query(encoder: PatientEncoder, h_diag: torch.Tensor, h_proc: torch.Tensor) -> torch.Tensor:
    return encoder.activation(encoder.query(torch.cat([h_diag, h_proc])))
