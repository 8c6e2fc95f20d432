"""Per-visit heterogeneous snapshots and the dynamic network of a patient.

A snapshot's nodes are the visit's diagnoses, its procedures, and the
medications of the *previous* visit. Medication nodes may connect to
diagnosis and procedure nodes; every other off-diagonal pair is forbidden.
Edge weights are corpus conditional probabilities, normalised row-wise with a
softmax restricted to the allowed entries, and the diagonal is pinned to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .ehr.records import Cohort, PatientHistory, Vocabularies
from .errors import DataError, NumericsError


class NodeType(IntEnum):
    DIAGNOSIS = 0
    PROCEDURE = 1
    MEDICATION = 2


# Mask cell values mirror the -inf / 0 / +inf offsets they stand for.
FORBIDDEN, ALLOWED, SELF = -1, 0, 1


@dataclass(frozen=True)
class CooccurrenceStats:
    """Training-split visit counts for single codes and medication pairs.

    ``pair_diag[m, d]`` counts visits containing medication ``m`` and
    diagnosis ``d``; ``pair_proc`` likewise for procedures.
    """

    vocabularies: Vocabularies
    single_diag: np.ndarray
    single_proc: np.ndarray
    single_med: np.ndarray
    pair_diag: np.ndarray
    pair_proc: np.ndarray

    def single(self, node_type: NodeType) -> np.ndarray:
        return (self.single_diag, self.single_proc, self.single_med)[node_type]

    def count_single(self, code: int, node_type: NodeType) -> int:
        return int(self.single(node_type)[code])

    def count_pair(self, a: tuple[int, NodeType], b: tuple[int, NodeType]) -> int:
        (ia, ta), (ib, tb) = a, b
        if ta == NodeType.MEDICATION and tb != NodeType.MEDICATION:
            m, (x, tx) = ia, (ib, tb)
        elif tb == NodeType.MEDICATION and ta != NodeType.MEDICATION:
            m, (x, tx) = ib, (ia, ta)
        else:
            return 0
        table = self.pair_diag if tx == NodeType.DIAGNOSIS else self.pair_proc
        return int(table[m, x])

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "single_diag": self.single_diag,
            "single_proc": self.single_proc,
            "single_med": self.single_med,
            "pair_diag": self.pair_diag,
            "pair_proc": self.pair_proc,
        }

    @classmethod
    def from_arrays(cls, vocabularies: Vocabularies, arrays) -> "CooccurrenceStats":
        return cls(vocabularies, *(np.asarray(arrays[k]) for k in (
            "single_diag", "single_proc", "single_med", "pair_diag", "pair_proc")))


def collect_cooccurrence(train_cohort: Cohort) -> CooccurrenceStats:
    if len(train_cohort) == 0:
        raise DataError("cannot collect co-occurrence statistics from an empty cohort")
    vocabs = train_cohort.vocabularies
    nd, np_, nm = vocabs.sizes
    single_diag = np.zeros(nd, dtype=np.int64)
    single_proc = np.zeros(np_, dtype=np.int64)
    single_med = np.zeros(nm, dtype=np.int64)
    pair_diag = np.zeros((nm, nd), dtype=np.int64)
    pair_proc = np.zeros((nm, np_), dtype=np.int64)
    for v in train_cohort.visits():
        d = vocabs.diagnosis.indices(v.diagnoses)
        p = vocabs.procedure.indices(v.procedures)
        m = vocabs.medication.indices(v.medications)
        single_diag[d] += 1
        single_proc[p] += 1
        single_med[m] += 1
        pair_diag[np.ix_(m, d)] += 1
        pair_proc[np.ix_(m, p)] += 1
    for a in (single_diag, single_proc, single_med, pair_diag, pair_proc):
        a.setflags(write=False)
    return CooccurrenceStats(vocabs, single_diag, single_proc, single_med, pair_diag, pair_proc)


def build_mask(node_types: Sequence[NodeType]) -> np.ndarray:
    t = np.asarray(node_types, dtype=np.int64)
    is_med = t == NodeType.MEDICATION
    allowed = is_med[:, None] ^ is_med[None, :]
    mask = np.where(allowed, ALLOWED, FORBIDDEN).astype(np.int8)
    np.fill_diagonal(mask, SELF)
    return mask


def conditional_weights(
    codes: Sequence[int],
    node_types: Sequence[NodeType],
    stats: CooccurrenceStats,
    denominator: str = "row",
) -> np.ndarray:
    """Matrix ``P[i, j] = n_ij / n_i`` on allowed (medication, cause) pairs.

    With ``denominator="column"`` the count of node ``j`` divides instead,
    giving a true ``P(i | j)``. Zero denominators yield zero.
    """
    if denominator not in ("row", "column"):
        raise ValueError(f"denominator must be 'row' or 'column', got {denominator!r}")
    codes = np.asarray(codes, dtype=np.int64)
    types = np.asarray(node_types, dtype=np.int64)
    n = len(codes)
    pair = np.zeros((n, n), dtype=np.float64)
    meds = np.flatnonzero(types == NodeType.MEDICATION)
    for kind, table in ((NodeType.DIAGNOSIS, stats.pair_diag), (NodeType.PROCEDURE, stats.pair_proc)):
        others = np.flatnonzero(types == kind)
        if len(meds) and len(others):
            block = table[np.ix_(codes[meds], codes[others])]
            pair[np.ix_(meds, others)] = block
            pair[np.ix_(others, meds)] = block.T

    single = np.zeros(n, dtype=np.float64)
    for kind in NodeType:
        sel = types == kind
        single[sel] = stats.single(kind)[codes[sel]]
    denom = single[:, None] if denominator == "row" else single[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(denom > 0, pair / np.where(denom > 0, denom, 1.0), 0.0)
    p[build_mask(types) != ALLOWED] = 0.0
    return p


def snapshot_adjacency(p: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax over allowed entries, forbidden entries 0, diagonal 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != mask.shape:
        raise ValueError(f"P shape {p.shape} does not match mask shape {mask.shape}")
    if not np.all(np.isfinite(p)):
        raise NumericsError("conditional-probability matrix has non-finite entries")
    allowed = mask == ALLOWED
    logits = np.where(allowed, p, -np.inf)
    row_max = np.max(logits, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(allowed, np.exp(logits - row_max), 0.0)
    z = e.sum(axis=1, keepdims=True)
    a = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    a[mask == SELF] = 1.0
    return a


@dataclass(frozen=True)
class SnapshotGraph:
    codes: np.ndarray
    node_types: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    adjacency: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.codes)

    def nodes(self, vocabularies: Vocabularies) -> list[tuple[str, str]]:
        vocabs = tuple(vocabularies)
        return [(vocabs[t].lookup(int(c)), NodeType(t).name.lower()) for c, t in zip(self.codes, self.node_types)]


@dataclass(frozen=True)
class DynamicNetwork:
    patient_id: str
    snapshots: tuple[SnapshotGraph, ...]

    def __len__(self):
        return len(self.snapshots)


def build_snapshot(
    diagnoses: Sequence[int],
    procedures: Sequence[int],
    prev_medications: Sequence[int],
    stats: CooccurrenceStats,
    all_ones: bool = False,
    denominator: str = "row",
) -> SnapshotGraph:
    codes = np.asarray(list(diagnoses) + list(procedures) + list(prev_medications), dtype=np.int64)
    types = np.asarray(
        [NodeType.DIAGNOSIS] * len(diagnoses)
        + [NodeType.PROCEDURE] * len(procedures)
        + [NodeType.MEDICATION] * len(prev_medications),
        dtype=np.int64,
    )
    if len(codes) == 0:
        raise DataError("visit has no diagnosis, procedure or previous medication nodes")
    mask = build_mask(types)
    p = conditional_weights(codes, types, stats, denominator)
    adjacency = np.ones_like(p) if all_ones else snapshot_adjacency(p, mask)
    return SnapshotGraph(codes, types, mask, p, adjacency)


def build_dynamic_network(
    history: PatientHistory,
    stats: CooccurrenceStats,
    all_ones: bool = False,
    denominator: str = "row",
) -> DynamicNetwork:
    """One snapshot per visit; snapshot ``t`` carries visit ``t-1``'s medications.

    ``all_ones`` replaces every normalised adjacency with an all-ones matrix
    (the conditional-probability ablation).
    """
    vocabs = stats.vocabularies
    snapshots = []
    prev: list[int] = []
    for visit in history.visits:
        try:
            snapshots.append(
                build_snapshot(
                    vocabs.diagnosis.indices(visit.diagnoses),
                    vocabs.procedure.indices(visit.procedures),
                    prev,
                    stats,
                    all_ones,
                    denominator,
                )
            )
        except DataError as exc:
            raise DataError(f"patient {history.patient_id}, visit {visit.ordinal}: {exc}") from None
        prev = vocabs.medication.indices(visit.medications)
    return DynamicNetwork(history.patient_id, tuple(snapshots))


def dump_network(network: DynamicNetwork, vocabularies: Vocabularies) -> str:
    """One JSON object per snapshot: node list and dense adjacency rows."""
    lines = []
    for t, snap in enumerate(network.snapshots, start=1):
        lines.append(
            json.dumps(
                {
                    "patient_id": network.patient_id,
                    "visit": t,
                    "nodes": snap.nodes(vocabularies),
                    "adjacency": [[round(float(x), 12) for x in row] for row in snap.adjacency],
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + "\n"
